//! Monte Carlo certificates for the contraction conditions.
//!
//! Every supremum over `X × Θ` is replaced by a maximum over a sampled,
//! user-declared compact region, so results are labelled empirical. Chord
//! lengths stand in for the path metric wherever distances appear.

mod interconnect;
mod kernel;
mod lyapunov;

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::finsler::{FinslerWeight, DEFAULT_SEGMENTS};
use crate::model::{Bilinear, StateDomain, SystemModel};
use crate::norm::{induced_bilinear_norm, induced_operator_norm};
use crate::par_map;
use crate::rng::RngStream;
use crate::stats::mean_stderr;

pub use interconnect::{
    build_joint_metric, check_interconnection, joint_etas, Interconnection, JointEtas, JointMetric, JointOptions,
    RecipeCheck,
};
pub use kernel::{check_parameter_lipschitz, empirical_kernel_contraction, KernelContraction, ParameterLipschitz};
pub use lyapunov::{check_lyapunov, check_lyapunov_with, LyapunovFit};

/// Noise draws per region point when none is given.
pub const DEFAULT_N_NOISE: usize = 2048;
/// Region points when none is given.
pub const DEFAULT_N_POINTS: usize = 256;
/// Margin applied to every strict inequality a construction must satisfy.
pub const SLACK: f64 = 1.05;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleMode {
    Grid,
    #[default]
    Uniform,
}

/// A box in `X × Θ` to draw evaluation points from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionSampler {
    pub mode: SampleMode,
    pub x_lo: Vec<f64>,
    pub x_hi: Vec<f64>,
    pub theta_lo: Vec<f64>,
    pub theta_hi: Vec<f64>,
    pub count: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionPoint {
    pub x: Vec<f64>,
    pub theta: Vec<f64>,
}

impl RegionSampler {
    pub fn uniform(x_lo: Vec<f64>, x_hi: Vec<f64>, theta_lo: Vec<f64>, theta_hi: Vec<f64>, count: usize, seed: u64) -> Self {
        Self {
            mode: SampleMode::Uniform,
            x_lo,
            x_hi,
            theta_lo,
            theta_hi,
            count,
            seed,
        }
    }

    /// Region with `θ` held fixed.
    pub fn at_theta(x_lo: Vec<f64>, x_hi: Vec<f64>, theta: &[f64], count: usize, seed: u64) -> Self {
        Self::uniform(x_lo, x_hi, theta.to_vec(), theta.to_vec(), count, seed)
    }

    pub fn grid(mut self) -> Self {
        self.mode = SampleMode::Grid;
        self
    }

    /// Midpoint of the parameter box.
    pub fn theta_center(&self) -> Vec<f64> {
        self.theta_lo.iter().zip(&self.theta_hi).map(|(a, b)| 0.5 * (a + b)).collect()
    }

    fn check_box(what: &str, lo: &[f64], hi: &[f64]) -> Result<()> {
        check_dim(what, hi.len(), lo.len())?;
        for (i, (l, h)) in lo.iter().zip(hi).enumerate() {
            if !(l.is_finite() && h.is_finite()) || l > h {
                return Err(Error::Config(format!(
                    "{what} bounds must be finite with lo <= hi; axis {i} has [{l}, {h}]"
                )));
            }
        }
        Ok(())
    }

    /// Clipped state box.
    fn state_box(&self, domain: &StateDomain) -> Result<(Vec<f64>, Vec<f64>)> {
        check_dim("region state bounds", self.x_lo.len(), domain.dim())?;
        Self::check_box("region state", &self.x_lo, &self.x_hi)?;
        let (lo, hi) = domain.intersect(&self.x_lo, &self.x_hi);
        if lo.iter().zip(&hi).any(|(l, h)| l > h) {
            return Err(Error::Config("region does not meet the state domain".into()));
        }
        Ok((lo, hi))
    }

    fn fill(&self, lo: &[f64], hi: &[f64]) -> Vec<Vec<f64>> {
        let dim = lo.len();
        match self.mode {
            SampleMode::Uniform => {
                let mut rng = RngStream::new(self.seed, u64::MAX);
                (0..self.count)
                    .map(|_| {
                        lo.iter()
                            .zip(hi)
                            .map(|(l, h)| if l == h { *l } else { rng.random_range(*l..=*h) })
                            .collect()
                    })
                    .collect()
            }
            SampleMode::Grid => {
                let free: Vec<usize> = (0..dim).filter(|&i| lo[i] < hi[i]).collect();
                let k = if free.is_empty() {
                    1
                } else {
                    ((self.count as f64).powf(1.0 / free.len() as f64) + 1e-9).floor().max(1.0) as usize
                };
                let total = k.pow(free.len() as u32);
                (0..total)
                    .map(|mut idx| {
                        let mut p = lo.to_vec();
                        for &axis in &free {
                            let t = if k == 1 { 0.5 } else { (idx % k) as f64 / (k - 1) as f64 };
                            idx /= k;
                            p[axis] = lo[axis] + t * (hi[axis] - lo[axis]);
                        }
                        p
                    })
                    .collect()
            }
        }
    }

    /// States only, inside the region and the domain.
    pub fn states(&self, domain: &StateDomain) -> Result<Vec<Vec<f64>>> {
        let (lo, hi) = self.state_box(domain)?;
        Ok(self.fill(&lo, &hi))
    }

    /// Joint `(x, θ)` points. Every `θ` must pass the model's parameter
    /// check.
    pub fn points<M: SystemModel + ?Sized>(&self, model: &M) -> Result<Vec<RegionPoint>> {
        let (xl, xh) = self.state_box(model.state_domain())?;
        check_dim("region parameter bounds", self.theta_lo.len(), model.param_dim())?;
        Self::check_box("region parameter", &self.theta_lo, &self.theta_hi)?;
        let nx = xl.len();
        let lo: Vec<f64> = xl.iter().chain(&self.theta_lo).copied().collect();
        let hi: Vec<f64> = xh.iter().chain(&self.theta_hi).copied().collect();
        let pts: Vec<RegionPoint> = self
            .fill(&lo, &hi)
            .into_iter()
            .map(|p| RegionPoint {
                x: p[..nx].to_vec(),
                theta: p[nx..].to_vec(),
            })
            .collect();
        for p in &pts {
            model.check_params(&p.theta)?;
        }
        Ok(pts)
    }
}

/// Which coefficient function to estimate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Coefficient {
    /// `(E ‖A(f) ∂f/∂x A(x)^{-1}‖²)^{1/2}`
    X,
    /// `(E ‖A(f) ∂f/∂θ B(x)^{-1}‖²)^{1/2}`
    Theta,
    /// `E ‖A(f) ∂²f/∂x² [A(x)^{-1}·, A(x)^{-1}·]‖`
    X2,
    /// `E ‖A(f) ∂²f/∂θ² [B(x)^{-1}·, B(x)^{-1}·]‖`
    Theta2,
    /// `E ‖A(f) ∂²f/∂x∂θ [A(x)^{-1}·, B(x)^{-1}·]‖`
    XTheta,
}

impl Coefficient {
    pub const ALL: [Coefficient; 5] = [
        Coefficient::X,
        Coefficient::Theta,
        Coefficient::X2,
        Coefficient::Theta2,
        Coefficient::XTheta,
    ];

    fn second_order(self) -> bool {
        matches!(self, Coefficient::X2 | Coefficient::Theta2 | Coefficient::XTheta)
    }
}

/// Per-point values of one coefficient function and their maximum.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LEstimate {
    pub which: Coefficient,
    pub values: Vec<f64>,
    pub stderrs: Vec<f64>,
    pub sup: f64,
    /// Standard error at the maximizing point.
    pub sup_stderr: f64,
    pub max_point_stderr: f64,
    pub argmax: usize,
    pub n_noise: usize,
}

fn point_value<M, W>(
    model: &M,
    weight: &W,
    p: &RegionPoint,
    which: Coefficient,
    n_noise: usize,
    rng: &mut RngStream,
) -> Result<(f64, f64)>
where
    M: SystemModel + ?Sized,
    W: FinslerWeight + ?Sized,
{
    let nx = model.state_dim();
    let nt = model.param_dim();
    let (x, theta) = (&p.x, &p.theta);
    let a_inv = weight.a_inv(x)?;
    let b_inv = weight.b_inv(x)?;
    let (nx_norm, nt_norm) = (weight.norm_x(), weight.norm_theta());
    let mut noise = model.new_noise();
    let mut fx = vec![0.0; nx];
    let mut jx = DMatrix::zeros(nx, nx);
    let mut jt = DMatrix::zeros(nx, nt);
    let mut h = match which {
        Coefficient::X2 => Bilinear::zeros(nx, nx, nx),
        Coefficient::Theta2 => Bilinear::zeros(nx, nt, nt),
        Coefficient::XTheta => Bilinear::zeros(nx, nx, nt),
        _ => Bilinear::zeros(0, 0, 0),
    };
    let mut samples = Vec::with_capacity(n_noise);
    for _ in 0..n_noise {
        model.sample_noise(rng, &mut noise);
        model.step(x, &noise, theta, &mut fx);
        let a_f = weight.a(&fx);
        let s = match which {
            Coefficient::X => {
                model.jac_x(x, &noise, theta, &mut jx);
                let n = induced_operator_norm(&(&a_f * &jx * &a_inv), nx_norm, nx_norm)?;
                n * n
            }
            Coefficient::Theta => {
                model.jac_theta(x, &noise, theta, &mut jt);
                let n = induced_operator_norm(&(&a_f * &jt * &b_inv), nt_norm, nx_norm)?;
                n * n
            }
            Coefficient::X2 => {
                model.hess_xx(x, &noise, theta, &mut h)?;
                induced_bilinear_norm(&h.compose(&a_f, &a_inv, &a_inv), nx_norm, nx_norm, nx_norm)?
            }
            Coefficient::Theta2 => {
                model.hess_thetatheta(x, &noise, theta, &mut h)?;
                induced_bilinear_norm(&h.compose(&a_f, &b_inv, &b_inv), nt_norm, nt_norm, nx_norm)?
            }
            Coefficient::XTheta => {
                model.hess_xtheta(x, &noise, theta, &mut h)?;
                induced_bilinear_norm(&h.compose(&a_f, &a_inv, &b_inv), nx_norm, nt_norm, nx_norm)?
            }
        };
        if !s.is_finite() {
            return Err(Error::Numerical(format!("non-finite norm at x = {x:?}, θ = {theta:?}")));
        }
        samples.push(s);
    }
    let (mean, se) = mean_stderr(&samples);
    let se = se.unwrap_or(0.0);
    Ok(if which.second_order() {
        (mean, se)
    } else {
        // square root of the mean square; delta-method standard error
        let l = mean.max(0.0).sqrt();
        (l, if l > 0.0 { se / (2.0 * l) } else { 0.0 })
    })
}

/// One coefficient function at each point; point `i` draws noise from
/// `RngStream(seed, i)`.
pub fn estimate_l_at<M, W>(
    model: &M,
    weight: &W,
    points: &[RegionPoint],
    which: Coefficient,
    n_noise: usize,
    seed: u64,
) -> Result<LEstimate>
where
    M: SystemModel + ?Sized,
    W: FinslerWeight + ?Sized,
{
    if points.is_empty() {
        return Err(Error::Config("no region points to evaluate".into()));
    }
    if n_noise < 2 {
        return Err(Error::Config("n_noise must be at least 2".into()));
    }
    check_dim("weight state dimension", weight.state_dim(), model.state_dim())?;
    check_dim("weight parameter dimension", weight.param_dim(), model.param_dim())?;
    let results = par_map(points.len(), |i| {
        let mut rng = RngStream::new(seed, i as u64);
        point_value(model, weight, &points[i], which, n_noise, &mut rng)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let values: Vec<f64> = results.iter().map(|r| r.0).collect();
    let stderrs: Vec<f64> = results.iter().map(|r| r.1).collect();
    let argmax = values
        .iter()
        .enumerate()
        .fold(0, |best, (i, v)| if *v > values[best] { i } else { best });
    Ok(LEstimate {
        which,
        sup: values[argmax],
        sup_stderr: stderrs[argmax],
        max_point_stderr: stderrs.iter().copied().fold(0.0, f64::max),
        argmax,
        values,
        stderrs,
        n_noise,
    })
}

/// [`estimate_l_at`] over the sampler's points, seeded by the sampler.
pub fn estimate_l<M, W>(model: &M, weight: &W, region: &RegionSampler, which: Coefficient, n_noise: usize) -> Result<LEstimate>
where
    M: SystemModel + ?Sized,
    W: FinslerWeight + ?Sized,
{
    let pts = region.points(model)?;
    estimate_l_at(model, weight, &pts, which, n_noise, region.seed)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoefficientEstimate {
    pub sup: f64,
    pub stderr: f64,
    pub max_point_stderr: f64,
    pub argmax: RegionPoint,
    /// Per-point values, aligned with `ReportMetadata::points`.
    pub per_point: Vec<f64>,
}

impl CoefficientEstimate {
    fn from_estimate(e: &LEstimate, pts: &[RegionPoint]) -> Self {
        Self {
            sup: e.sup,
            stderr: e.sup_stderr,
            max_point_stderr: e.max_point_stderr,
            argmax: pts[e.argmax].clone(),
            per_point: e.values.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportMetadata {
    pub model: String,
    pub n_points: usize,
    pub n_noise: usize,
    pub seed: u64,
    pub region: RegionSampler,
    pub chord_segments: usize,
    pub points: Vec<RegionPoint>,
}

/// Estimated coefficients, drift fit and joint-metric weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContractionReport {
    /// Always "empirical": suprema are sampled maxima.
    pub label: String,
    pub k_x: CoefficientEstimate,
    pub k_theta: CoefficientEstimate,
    pub k_x2: Option<CoefficientEstimate>,
    pub k_theta2: Option<CoefficientEstimate>,
    pub k_xtheta: Option<CoefficientEstimate>,
    /// `K_X + 2 · (largest per-point standard error) < 1`.
    pub contraction_ok: bool,
    pub lyapunov_beta: Option<f64>,
    pub lyapunov_k: Option<f64>,
    pub joint: Option<JointMetric>,
    pub notes: Vec<String>,
    pub metadata: ReportMetadata,
}

impl ContractionReport {
    pub fn etas(&self) -> Option<[f64; 5]> {
        self.joint.as_ref().map(|j| j.etas)
    }
}

#[derive(Clone, Debug)]
pub struct CertifyOptions {
    pub n_noise: usize,
    /// Build the joint metric when the chain certifies as contracting.
    pub joint: Option<JointOptions>,
}

impl Default for CertifyOptions {
    fn default() -> Self {
        Self {
            n_noise: DEFAULT_N_NOISE,
            joint: Some(JointOptions::default()),
        }
    }
}

/// Estimates all five coefficients over the region, then, if the chain
/// contracts and the weight declares `‖B‖_Lip`, builds the joint metric at
/// the centre of the parameter box.
pub fn certify<M, W>(model: &M, weight: &W, region: &RegionSampler, opts: &CertifyOptions) -> Result<ContractionReport>
where
    M: SystemModel + ?Sized,
    W: FinslerWeight + ?Sized,
{
    let pts = region.points(model)?;
    let mut notes = vec![
        "suprema are maxima over the sampled region; distances use straight-chord upper bounds".to_string(),
    ];
    let est = |which| estimate_l_at(model, weight, &pts, which, opts.n_noise, region.seed);
    let k_x = est(Coefficient::X)?;
    let k_theta = est(Coefficient::Theta)?;
    let mut second = Vec::new();
    for which in [Coefficient::X2, Coefficient::Theta2, Coefficient::XTheta] {
        match est(which) {
            Ok(e) => second.push(Some(CoefficientEstimate::from_estimate(&e, &pts))),
            Err(Error::MissingDerivative(name)) => {
                notes.push(format!("model does not provide {name}; {which:?} not estimated"));
                second.push(None);
            }
            Err(e) => return Err(e),
        }
    }
    let contraction_ok = k_x.sup + 2.0 * k_x.max_point_stderr < 1.0;
    let mut report = ContractionReport {
        label: "empirical".into(),
        k_x: CoefficientEstimate::from_estimate(&k_x, &pts),
        k_theta: CoefficientEstimate::from_estimate(&k_theta, &pts),
        k_x2: second[0].clone(),
        k_theta2: second[1].clone(),
        k_xtheta: second[2].clone(),
        contraction_ok,
        lyapunov_beta: None,
        lyapunov_k: None,
        joint: None,
        notes,
        metadata: ReportMetadata {
            model: model.name().to_string(),
            n_points: pts.len(),
            n_noise: opts.n_noise,
            seed: region.seed,
            region: region.clone(),
            chord_segments: DEFAULT_SEGMENTS,
            points: pts.clone(),
        },
    };
    if let Some(jopts) = &opts.joint {
        if !contraction_ok {
            report.notes.push("joint metric skipped: contraction not certified".into());
        } else if report.k_x2.is_none() || report.k_xtheta.is_none() {
            report.notes.push("joint metric skipped: second derivatives unavailable".into());
        } else if let Some(b_lip) = weight.b_lipschitz() {
            let states = region.states(model.state_domain())?;
            let theta = region.theta_center();
            let joint = build_joint_metric(&report, b_lip, model, weight, &theta, &states, jopts)?;
            report.lyapunov_beta = Some(joint.drift.beta);
            report.lyapunov_k = Some(joint.drift.k);
            if joint.drift.beta >= 1.0 {
                report.notes.push("drift fit of the joint Lyapunov function has slope >= 1".into());
            }
            report.joint = Some(joint);
        } else {
            report.notes.push("joint metric skipped: weight declares no Lipschitz constant for ‖B‖".into());
        }
    }
    Ok(report)
}
