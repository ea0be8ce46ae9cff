use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::finsler::{metric_upper, FinslerWeight, DEFAULT_SEGMENTS};
use crate::model::SystemModel;
use crate::par_map;
use crate::rng::RngStream;
use crate::stats::mean_stderr;
use crate::transport::{wasserstein1_empirical, MAX_ASSIGNMENT_SIZE};

/// Worst ratio `(E d(f(x₁,ξ), f(x₂,ξ))^p)^{1/p} / d(x₁, x₂)` over sampled
/// pairs, with both successors driven by the same noise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelContraction {
    pub max_ratio: f64,
    pub ratios: Vec<f64>,
    /// Index into the input pairs.
    pub argmax: usize,
    pub p: f64,
    pub n_noise: usize,
    /// Pairs dropped because the two states coincide.
    pub skipped: usize,
    pub note: String,
}

/// Common-noise coupling of the one-step kernel. Pair `i` uses
/// `RngStream(seed, i)`. The coupling only bounds the Wasserstein
/// distance from above, so a ratio below 1 is evidence of contraction but
/// a ratio above 1 is not evidence against it.
pub fn empirical_kernel_contraction<M, W>(
    model: &M,
    weight: &W,
    theta: &[f64],
    pairs: &[(Vec<f64>, Vec<f64>)],
    n_noise: usize,
    p: f64,
    seed: u64,
) -> Result<KernelContraction>
where
    M: SystemModel + ?Sized,
    W: FinslerWeight + ?Sized,
{
    model.check_params(theta)?;
    if n_noise == 0 {
        return Err(Error::Config("n_noise must be positive".into()));
    }
    if !(p >= 1.0 && p.is_finite()) {
        return Err(Error::Config(format!("exponent p must be >= 1, got {p}")));
    }
    let nx = model.state_dim();
    for (a, b) in pairs {
        check_dim("pair state", a.len(), nx)?;
        check_dim("pair state", b.len(), nx)?;
    }
    let ratios = par_map(pairs.len(), |i| -> Result<Option<f64>> {
        let (x1, x2) = &pairs[i];
        if x1 == x2 {
            return Ok(None);
        }
        let d0 = metric_upper(weight, x1, x2, DEFAULT_SEGMENTS);
        let mut rng = RngStream::new(seed, i as u64);
        let mut noise = model.new_noise();
        let (mut f1, mut f2) = (vec![0.0; nx], vec![0.0; nx]);
        let mut acc = 0.0;
        for _ in 0..n_noise {
            model.sample_noise(&mut rng, &mut noise);
            model.step(x1, &noise, theta, &mut f1);
            model.step(x2, &noise, theta, &mut f2);
            acc += metric_upper(weight, &f1, &f2, DEFAULT_SEGMENTS).powf(p);
        }
        let r = (acc / n_noise as f64).powf(1.0 / p) / d0;
        if !r.is_finite() {
            return Err(Error::Numerical(format!("non-finite kernel ratio for pair {i}")));
        }
        Ok(Some(r))
    })
    .into_iter()
    .collect::<Result<Vec<Option<f64>>>>()?;
    let skipped = ratios.iter().filter(|r| r.is_none()).count();
    let (mut max_ratio, mut argmax) = (0.0, 0);
    for (i, r) in ratios.iter().enumerate() {
        if let Some(r) = *r {
            if r > max_ratio {
                (max_ratio, argmax) = (r, i);
            }
        }
    }
    if skipped == pairs.len() {
        return Err(Error::Config("no pair of distinct states supplied".into()));
    }
    Ok(KernelContraction {
        max_ratio,
        ratios: ratios.into_iter().map(|r| r.unwrap_or(f64::NAN)).collect(),
        argmax,
        p,
        n_noise,
        skipped,
        note: "common-noise coupling; an upper bound on the Wasserstein ratio".into(),
    })
}

/// One-step sensitivity of the kernel to `θ` under the stationary sample
/// `states`: `(E d(f(x,ξ,θ), f(x,ξ,θ+Δθ))²)^{1/2}` against
/// `k_theta (E ‖B(x)Δθ‖²)^{1/2}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParameterLipschitz {
    pub lhs: f64,
    pub lhs_stderr: f64,
    pub rhs: f64,
    /// `lhs > rhs + 3 lhs_stderr`.
    pub flagged: bool,
    /// Optimal-assignment distance between the two successor clouds, when
    /// the sample is small enough.
    pub transport_w1: Option<f64>,
    pub samples: usize,
}

/// Sample `i` uses one noise draw from `RngStream(seed, i)`, shared by
/// both parameter values.
#[allow(clippy::too_many_arguments)]
pub fn check_parameter_lipschitz<M, W>(
    model: &M,
    weight: &W,
    theta: &[f64],
    delta_theta: &[f64],
    states: &[Vec<f64>],
    k_theta: f64,
    seed: u64,
    with_transport: bool,
) -> Result<ParameterLipschitz>
where
    M: SystemModel + ?Sized,
    W: FinslerWeight + ?Sized,
{
    let (nx, nt) = (model.state_dim(), model.param_dim());
    check_dim("delta_theta", delta_theta.len(), nt)?;
    if states.len() < 2 {
        return Err(Error::Config("parameter Lipschitz check needs at least two states".into()));
    }
    let shifted: Vec<f64> = theta.iter().zip(delta_theta).map(|(t, d)| t + d).collect();
    model.check_params(theta)?;
    model.check_params(&shifted)?;
    let rows = par_map(states.len(), |i| -> Result<(f64, f64, Vec<f64>, Vec<f64>)> {
        let x = &states[i];
        check_dim("state", x.len(), nx)?;
        let mut rng = RngStream::new(seed, i as u64);
        let mut noise = model.new_noise();
        model.sample_noise(&mut rng, &mut noise);
        let (mut f0, mut f1) = (vec![0.0; nx], vec![0.0; nx]);
        model.step(x, &noise, theta, &mut f0);
        model.step(x, &noise, &shifted, &mut f1);
        let d = metric_upper(weight, &f0, &f1, DEFAULT_SEGMENTS);
        let bd = weight.b(x) * nalgebra::DVector::from_column_slice(delta_theta);
        let bn = weight.norm_theta().norm(bd.as_slice());
        Ok((d * d, bn * bn, f0, f1))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let d2: Vec<f64> = rows.iter().map(|r| r.0).collect();
    let (m2, se2) = mean_stderr(&d2);
    let lhs = m2.sqrt();
    let lhs_stderr = if lhs > 0.0 { se2.unwrap_or(0.0) / (2.0 * lhs) } else { 0.0 };
    let rhs = k_theta * (rows.iter().map(|r| r.1).sum::<f64>() / rows.len() as f64).sqrt();
    let transport_w1 = if with_transport && rows.len() <= MAX_ASSIGNMENT_SIZE {
        let a: Vec<&Vec<f64>> = rows.iter().map(|r| &r.2).collect();
        let b: Vec<&Vec<f64>> = rows.iter().map(|r| &r.3).collect();
        Some(wasserstein1_empirical(&a, &b, |u, v| metric_upper(weight, u, v, DEFAULT_SEGMENTS))?)
    } else {
        None
    };
    Ok(ParameterLipschitz {
        lhs,
        lhs_stderr,
        rhs,
        flagged: lhs > rhs + 3.0 * lhs_stderr,
        transport_w1,
        samples: rows.len(),
    })
}
