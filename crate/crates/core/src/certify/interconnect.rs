use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::lyapunov::{check_lyapunov_with, drift_pairs, LyapunovFit};
use super::{ContractionReport, SLACK};
use crate::error::{check_dim, Error, Result};
use crate::finsler::{b_operator_norm, metric_upper, FinslerWeight, DEFAULT_SEGMENTS};
use crate::model::SystemModel;
use crate::norm::induced_operator_norm;
use crate::rng::RngStream;
use crate::sensitivity::{sens_step, SensState};

/// Outcome of the two-system gain condition `K₁K₂ < (1 − α₁)(1 − α₂)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interconnection {
    pub feasible: bool,
    /// Open interval `(K₁/(1 − α₂), (1 − α₁)/K₂)` that `η₂` must lie in
    /// when `η₁ = 1`.
    pub lower: f64,
    pub upper: f64,
    pub eta1: Option<f64>,
    pub eta2: Option<f64>,
}

/// Weights `η₁, η₂` for the sum norm `η₁‖u_x‖ + η₂‖u_y‖` under which two
/// coupled contractions contract jointly. `η₁ = 1` and `η₂` is the
/// geometric mean of the admissible interval, with fallbacks when an end
/// of the interval is 0 or infinite.
pub fn check_interconnection(alpha1: f64, alpha2: f64, k1: f64, k2: f64) -> Interconnection {
    let valid = [alpha1, alpha2].iter().all(|a| (0.0..1.0).contains(a)) && k1 >= 0.0 && k2 >= 0.0;
    let lower = k1 / (1.0 - alpha2);
    let upper = if k2 == 0.0 { f64::INFINITY } else { (1.0 - alpha1) / k2 };
    let feasible = valid && k1.is_finite() && k2.is_finite() && k1 * k2 < (1.0 - alpha1) * (1.0 - alpha2);
    let eta2 = feasible.then(|| {
        if lower == 0.0 && upper.is_infinite() {
            1.0
        } else if lower == 0.0 {
            (upper / SLACK).min(1.0)
        } else if upper.is_infinite() {
            (SLACK * lower).max(1.0)
        } else {
            (lower * upper).sqrt()
        }
    });
    Interconnection {
        feasible,
        lower,
        upper,
        eta1: feasible.then_some(1.0),
        eta2,
    }
}

/// `η₁, η₂, η₃` of the joint Lyapunov function
/// `h(z) = η₁‖A(x)m‖ + η₂‖B(x)‖ + η₃ d_A(x₀, x)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct JointEtas {
    pub eta1: f64,
    pub eta2: f64,
    pub eta3: f64,
}

/// `η₁ ≥ K_{X²}`, `η₂ > max{K_{X,Θ}, η₁K_Θ}`,
/// `η₃(1 − K_X) > η₂ ‖B‖_Lip K_X`, each with the 1.05 margin; a weight
/// whose lower bound is 0 is set to 1.
pub fn joint_etas(k_x: f64, k_theta: f64, k_x2: f64, k_xtheta: f64, b_lip: f64) -> Result<JointEtas> {
    if !(k_x < 1.0) {
        return Err(Error::NotContracting(format!("K_X = {k_x} is not below 1")));
    }
    let or_one = |v: f64, scale: f64| if v == 0.0 { 1.0 } else { scale * v };
    let eta1 = or_one(k_x2, 1.0);
    let eta2 = or_one(k_xtheta.max(eta1 * k_theta), SLACK);
    let eta3 = or_one(eta2 * b_lip * k_x / (1.0 - k_x), SLACK);
    Ok(JointEtas { eta1, eta2, eta3 })
}

/// Settings for [`build_joint_metric`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JointOptions {
    pub n_noise: usize,
    /// Sensitivity entries are drawn uniformly from `[-m_scale, m_scale]`.
    pub m_scale: f64,
    pub seed: u64,
    /// `x₀` in `d_A(x₀, x)`; the model's default state if absent.
    pub basepoint: Option<Vec<f64>>,
    /// Exponent of the drift condition on `h`.
    pub p: f64,
}

impl Default for JointOptions {
    fn default() -> Self {
        Self {
            n_noise: 256,
            m_scale: 4.0,
            seed: 0,
            basepoint: None,
            p: 2.0,
        }
    }
}

/// A named strict (or non-strict) inequality checked after construction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecipeCheck {
    pub name: String,
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

fn recipe(name: &str, lhs: f64, rhs: f64, strict: bool) -> RecipeCheck {
    RecipeCheck {
        name: name.into(),
        lhs,
        rhs,
        holds: if strict { lhs < rhs } else { lhs <= rhs },
    }
}

/// Joint metric on `z = (x, m)`:
/// `H(z)(u_x, u_m) = ((1 + η₄h(z)) A(x) u_x, A(x) u_m)` with norm
/// `‖u_x‖ + η₅‖u_m‖`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JointMetric {
    pub etas: [f64; 5],
    pub theta: Vec<f64>,
    pub basepoint: Vec<f64>,
    /// State contraction coefficient `α₁ = K_X`.
    pub alpha: f64,
    /// Sampled drift constant: max of `(E h(Tz)^p)^{1/p} − h(z)` over states.
    pub k_h: f64,
    /// False when both second-order coefficients vanish, in which case the
    /// sensitivity does not feed back and `h` is not needed.
    pub interconnected: bool,
    /// Contraction factor implied by the weights.
    pub joint_factor: f64,
    pub checks: Vec<RecipeCheck>,
    /// Drift fit of `V = 1 + h`.
    pub drift: LyapunovFit,
    pub segments: usize,
}

fn h_value<W: FinslerWeight + ?Sized>(
    etas: &JointEtas,
    weight: &W,
    basepoint: &[f64],
    segments: usize,
    x: &[f64],
    m: &DMatrix<f64>,
) -> Result<f64> {
    let am = weight.a(x) * m;
    let t1 = induced_operator_norm(&am, weight.norm_theta(), weight.norm_x())?;
    let t2 = b_operator_norm(weight, x)?;
    let t3 = metric_upper(weight, basepoint, x, segments);
    Ok(etas.eta1 * t1 + etas.eta2 * t2 + etas.eta3 * t3)
}

impl JointMetric {
    fn first_three(&self) -> JointEtas {
        JointEtas {
            eta1: self.etas[0],
            eta2: self.etas[1],
            eta3: self.etas[2],
        }
    }

    /// `h(z)`.
    pub fn h<W: FinslerWeight + ?Sized>(&self, weight: &W, x: &[f64], m: &DMatrix<f64>) -> Result<f64> {
        h_value(&self.first_three(), weight, &self.basepoint, self.segments, x, m)
    }

    /// `‖H(z)(u_x, u_m)‖_Z`, with `u_m` normed as an operator.
    pub fn norm<W: FinslerWeight + ?Sized>(
        &self,
        weight: &W,
        x: &[f64],
        m: &DMatrix<f64>,
        u_x: &[f64],
        u_m: &DMatrix<f64>,
    ) -> Result<f64> {
        check_dim("u_x", u_x.len(), weight.state_dim())?;
        let scale = 1.0 + self.etas[3] * self.h(weight, x, m)?;
        let ux = scale * weight.a_norm(x, u_x);
        let um = induced_operator_norm(&(weight.a(x) * u_m), weight.norm_theta(), weight.norm_x())?;
        Ok(ux + self.etas[4] * um)
    }
}

/// Chooses `η₁…η₅` from the estimated coefficients, estimates the drift
/// constant of `h` over `(x, m)` samples and fits the drift of `1 + h`.
///
/// `η₄` and `η₅` follow the two-system construction with `α₁ = K_X`:
/// `α₁(1 + η₄K_h) < 1` and `η₅/η₄ < 1 − α₁(1 + η₄K_h)`, each with the 1.05
/// margin.
pub fn build_joint_metric<M, W>(
    report: &ContractionReport,
    b_lip: f64,
    model: &M,
    weight: &W,
    theta: &[f64],
    states: &[Vec<f64>],
    opts: &JointOptions,
) -> Result<JointMetric>
where
    M: SystemModel + ?Sized,
    W: FinslerWeight + ?Sized,
{
    let k_x = report.k_x.sup;
    if !report.contraction_ok || k_x >= 1.0 {
        return Err(Error::NotContracting(format!(
            "K_X = {k_x} (± {}) is not certified below 1",
            report.k_x.max_point_stderr
        )));
    }
    let k_theta = report.k_theta.sup;
    let k_x2 = report.k_x2.as_ref().ok_or(Error::MissingDerivative("hess_xx"))?.sup;
    let k_xtheta = report.k_xtheta.as_ref().ok_or(Error::MissingDerivative("hess_xtheta"))?.sup;
    if !(b_lip >= 0.0 && b_lip.is_finite()) {
        return Err(Error::Config(format!("Lipschitz constant of ‖B‖ must be finite and >= 0, got {b_lip}")));
    }
    model.check_params(theta)?;
    if !(opts.m_scale >= 0.0 && opts.m_scale.is_finite()) {
        return Err(Error::Config("m_scale must be finite and >= 0".into()));
    }
    let e = joint_etas(k_x, k_theta, k_x2, k_xtheta, b_lip)?;
    let basepoint = opts.basepoint.clone().unwrap_or_else(|| model.default_state());
    check_dim("basepoint", basepoint.len(), model.state_dim())?;
    let segments = DEFAULT_SEGMENTS;
    let (nx, nt) = (model.state_dim(), model.param_dim());

    let zs: Vec<SensState> = states
        .iter()
        .enumerate()
        .map(|(i, x)| {
            let mut rng = RngStream::new(opts.seed, i as u64).substream(0);
            let m = DMatrix::from_fn(nx, nt, |_, _| {
                if opts.m_scale == 0.0 {
                    0.0
                } else {
                    rng.random_range(-opts.m_scale..=opts.m_scale)
                }
            });
            SensState {
                x: x.clone(),
                m,
                step_index: 0,
            }
        })
        .collect();
    // surface unsupported norms before the sampling loops
    if let Some(z) = zs.first() {
        h_value(&e, weight, &basepoint, segments, &z.x, &z.m)?;
    }
    let h = |z: &SensState| h_value(&e, weight, &basepoint, segments, &z.x, &z.m).unwrap_or(f64::NAN);
    let transition = |z: &SensState, rng: &mut RngStream| {
        let mut noise = model.new_noise();
        model.sample_noise(rng, &mut noise);
        sens_step(model, z, &noise, theta)
    };
    let pairs = drift_pairs(&zs, h, transition, opts.n_noise, opts.p, opts.seed)?;
    let k_h = pairs.iter().map(|(hz, lhs)| lhs - hz).fold(0.0, f64::max);
    let drift = check_lyapunov_with(&zs, |z| 1.0 + h(z), transition, opts.n_noise, opts.p, opts.seed)?;

    let alpha = k_x;
    let interconnected = !(k_x2 == 0.0 && k_xtheta == 0.0);
    let mut checks = vec![
        recipe("K_X2 <= eta1", k_x2, e.eta1, false),
        recipe("max(K_XTheta, eta1*K_Theta) < eta2", k_xtheta.max(e.eta1 * k_theta), e.eta2, true),
        recipe("eta2*B_lip*K_X < eta3*(1-K_X)", e.eta2 * b_lip * k_x, e.eta3 * (1.0 - k_x), true),
    ];
    let (eta4, eta5, joint_factor) = if interconnected {
        let eta4 = if alpha * k_h == 0.0 {
            1.0
        } else {
            (1.0 - alpha) / (SLACK * alpha * k_h)
        };
        let inflated = alpha * (1.0 + eta4 * k_h);
        let eta5 = eta4 * (1.0 - inflated) / SLACK;
        checks.push(recipe("alpha1*(1+eta4*K_h) < 1", inflated, 1.0, true));
        checks.push(recipe("eta5/eta4 < 1-alpha1*(1+eta4*K_h)", eta5 / eta4, 1.0 - inflated, true));
        (eta4, eta5, (inflated + eta5 / eta4).max(k_x))
    } else {
        (0.0, 1.0, k_x)
    };
    if let Some(bad) = checks.iter().find(|c| !c.holds) {
        return Err(Error::Infeasible(format!(
            "joint metric inequality {} fails: {} vs {}",
            bad.name, bad.lhs, bad.rhs
        )));
    }
    Ok(JointMetric {
        etas: [e.eta1, e.eta2, e.eta3, eta4, eta5],
        theta: theta.to_vec(),
        basepoint,
        alpha,
        k_h,
        interconnected,
        joint_factor,
        checks,
        drift,
        segments,
    })
}
