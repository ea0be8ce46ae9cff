use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::SystemModel;
use crate::par_map;
use crate::rng::RngStream;

/// Least-squares fit of `(E V(x')^p)^{1/p} ≈ β V(x) + K`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LyapunovFit {
    pub beta: f64,
    pub k: f64,
    /// Largest amount by which a sampled left side exceeds the fitted line.
    pub max_violation: f64,
    pub p: f64,
    pub points: usize,
    pub n_noise: usize,
    /// Set when all sampled `V` values coincide; the slope is then reported
    /// as 0 and `K` as the mean left side.
    pub degenerate: bool,
}

/// `(V(z_i), (E V(z_i')^p)^{1/p})` for each point, point `i` drawing from
/// `RngStream(seed, i)`.
pub(crate) fn drift_pairs<P, V, T>(
    points: &[P],
    v: V,
    transition: T,
    n_noise: usize,
    p: f64,
    seed: u64,
) -> Result<Vec<(f64, f64)>>
where
    P: Sync,
    V: Fn(&P) -> f64 + Sync,
    T: Fn(&P, &mut RngStream) -> Result<P> + Sync,
{
    if n_noise == 0 {
        return Err(Error::Config("n_noise must be positive".into()));
    }
    if !(p >= 1.0 && p.is_finite()) {
        return Err(Error::Config(format!("drift exponent p must be >= 1, got {p}")));
    }
    par_map(points.len(), |i| -> Result<(f64, f64)> {
        let vx = v(&points[i]);
        let mut rng = RngStream::new(seed, i as u64);
        let mut acc = 0.0;
        for _ in 0..n_noise {
            let next = transition(&points[i], &mut rng)?;
            acc += v(&next).powf(p);
        }
        let lhs = (acc / n_noise as f64).powf(1.0 / p);
        if !(lhs.is_finite() && vx.is_finite()) {
            return Err(Error::Numerical(format!("non-finite drift at point {i}")));
        }
        Ok((vx, lhs))
    })
    .into_iter()
    .collect()
}

/// Fits the drift inequality from `points`, where `transition(z, rng)`
/// draws one successor of `z`. Point `i` uses `RngStream(seed, i)`.
pub fn check_lyapunov_with<P, V, T>(
    points: &[P],
    v: V,
    transition: T,
    n_noise: usize,
    p: f64,
    seed: u64,
) -> Result<LyapunovFit>
where
    P: Sync,
    V: Fn(&P) -> f64 + Sync,
    T: Fn(&P, &mut RngStream) -> Result<P> + Sync,
{
    if points.len() < 2 {
        return Err(Error::Config("drift fit needs at least two points".into()));
    }
    for (i, pt) in points.iter().enumerate() {
        let vx = v(pt);
        if !(vx >= 1.0 - 1e-12) {
            return Err(Error::Precondition(format!("Lyapunov function must be >= 1, got {vx} at point {i}")));
        }
    }
    let pairs = drift_pairs(points, &v, transition, n_noise, p, seed)?;
    let n = pairs.len() as f64;
    let mx = pairs.iter().map(|q| q.0).sum::<f64>() / n;
    let my = pairs.iter().map(|q| q.1).sum::<f64>() / n;
    let sxx: f64 = pairs.iter().map(|q| (q.0 - mx).powi(2)).sum();
    let sxy: f64 = pairs.iter().map(|q| (q.0 - mx) * (q.1 - my)).sum();
    let degenerate = pairs.iter().all(|q| q.0 == pairs[0].0);
    let (beta, k) = if degenerate {
        (0.0, my)
    } else {
        let b = sxy / sxx;
        (b, my - b * mx)
    };
    let max_violation = pairs
        .iter()
        .map(|(x, y)| y - (beta * x + k))
        .fold(0.0, f64::max);
    Ok(LyapunovFit {
        beta,
        k,
        max_violation,
        p,
        points: pairs.len(),
        n_noise,
        degenerate,
    })
}

/// Drift fit of a state function `v` along the model's transition at `θ`.
pub fn check_lyapunov<M, V>(
    model: &M,
    theta: &[f64],
    v: V,
    states: &[Vec<f64>],
    n_noise: usize,
    p: f64,
    seed: u64,
) -> Result<LyapunovFit>
where
    M: SystemModel + ?Sized,
    V: Fn(&[f64]) -> f64 + Sync,
{
    model.check_params(theta)?;
    check_lyapunov_with(
        states,
        |x: &Vec<f64>| v(x),
        |x: &Vec<f64>, rng: &mut RngStream| {
            let mut noise = model.new_noise();
            model.sample_noise(rng, &mut noise);
            let mut out = vec![0.0; x.len()];
            model.step(x, &noise, theta, &mut out);
            Ok(out)
        },
        n_noise,
        p,
        seed,
    )
}
