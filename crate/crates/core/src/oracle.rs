//! Brute-force reference values: long-run time averages of the cost and
//! central finite differences of them in `θ`.
//!
//! Deliberately built on [`simulate_with`] only, so it shares no code with
//! the sensitivity recursion it is meant to check.

use serde::{Deserialize, Serialize};

use crate::cost::CostFunction;
use crate::error::{check_dim, Error, Result};
use crate::model::{simulate_with, SystemModel};
use crate::par_map;
use crate::rng::RngStream;
use crate::sensitivity::{default_burn_in, GradientEstimate};
use crate::stats::{columnwise, mean_stderr};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StationaryCostEstimate {
    pub mean: f64,
    /// Absent for a single replicate.
    pub stderr: Option<f64>,
    pub n_steps: usize,
    pub burn_in: usize,
    pub replicates: usize,
    pub seed: u64,
    pub per_replicate: Vec<f64>,
}

/// Shared budget for the oracle routines.
#[derive(Clone, Debug)]
pub struct OracleOptions {
    pub n_steps: usize,
    pub burn_in: Option<usize>,
    pub replicates: usize,
    pub seed: u64,
    pub x0: Option<Vec<f64>>,
}

impl OracleOptions {
    pub fn new(n_steps: usize, replicates: usize, seed: u64) -> Self {
        Self {
            n_steps,
            burn_in: None,
            replicates,
            seed,
            x0: None,
        }
    }

    pub fn burn_in(mut self, b: usize) -> Self {
        self.burn_in = Some(b);
        self
    }

    fn resolve(&self) -> Result<usize> {
        if self.n_steps == 0 {
            return Err(Error::Config("n_steps must be positive".into()));
        }
        if self.replicates == 0 {
            return Err(Error::Config("replicates must be at least 1".into()));
        }
        let b = self.burn_in.unwrap_or_else(|| default_burn_in(self.n_steps));
        if b >= self.n_steps {
            return Err(Error::Config(format!(
                "burn_in ({b}) must be smaller than n_steps ({})",
                self.n_steps
            )));
        }
        Ok(b)
    }
}

/// Average of `e(x_n)` over `burn_in < n <= n_steps` for one chain.
fn time_average<M, C>(
    model: &M,
    theta: &[f64],
    cost: &C,
    x0: &[f64],
    n_steps: usize,
    burn_in: usize,
    rng: &mut RngStream,
) -> Result<f64>
where
    M: SystemModel + ?Sized,
    C: CostFunction + ?Sized,
{
    let mut sum = 0.0;
    simulate_with(model, theta, x0, n_steps, rng, |k, x, _| {
        if k > burn_in {
            let e = cost.eval(x);
            if !e.is_finite() {
                return Err(Error::NonFinite {
                    step: k,
                    what: format!("cost at x = {x:?}"),
                });
            }
            sum += e;
        }
        Ok(())
    })?;
    Ok(sum / (n_steps - burn_in) as f64)
}

/// Replicate `r` uses `RngStream(seed, r)`.
pub fn stationary_cost<M, C>(model: &M, theta: &[f64], cost: &C, opts: &OracleOptions) -> Result<StationaryCostEstimate>
where
    M: SystemModel + ?Sized,
    C: CostFunction + ?Sized,
{
    let burn_in = opts.resolve()?;
    model.check_params(theta)?;
    let x0 = opts.x0.clone().unwrap_or_else(|| model.default_state());
    let vals = par_map(opts.replicates, |r| {
        let mut rng = RngStream::new(opts.seed, r as u64);
        time_average(model, theta, cost, &x0, opts.n_steps, burn_in, &mut rng)
    })
    .into_iter()
    .collect::<Result<Vec<f64>>>()?;
    let (mean, stderr) = mean_stderr(&vals);
    Ok(StationaryCostEstimate {
        mean,
        stderr,
        n_steps: opts.n_steps,
        burn_in,
        replicates: opts.replicates,
        seed: opts.seed,
        per_replicate: vals,
    })
}

/// `1e-3 (1 + |θ_j|)`.
pub fn default_fd_steps(theta: &[f64]) -> Vec<f64> {
    theta.iter().map(|t| 1e-3 * (1.0 + t.abs())).collect()
}

/// Central differences of [`stationary_cost`] along each coordinate of `θ`.
///
/// With `crn` the two chains of a replicate share the stream
/// `(seed, r)`; without it every chain gets its own stream. The standard
/// error comes from the per-replicate difference quotients.
pub fn fd_gradient<M, C>(
    model: &M,
    theta: &[f64],
    cost: &C,
    h: Option<&[f64]>,
    opts: &OracleOptions,
    crn: bool,
) -> Result<GradientEstimate>
where
    M: SystemModel + ?Sized,
    C: CostFunction + ?Sized,
{
    let burn_in = opts.resolve()?;
    let nt = model.param_dim();
    model.check_params(theta)?;
    let steps = match h {
        Some(h) => {
            check_dim("fd step", h.len(), nt)?;
            h.to_vec()
        }
        None => default_fd_steps(theta),
    };
    if let Some(bad) = steps.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
        return Err(Error::Config(format!("finite-difference steps must be positive, got {bad}")));
    }
    let shifted = |j: usize, sign: f64| {
        let mut t = theta.to_vec();
        t[j] += sign * steps[j];
        t
    };
    for j in 0..nt {
        for sign in [1.0, -1.0] {
            model.check_params(&shifted(j, sign)).map_err(|e| match e {
                Error::Precondition(msg) => Error::Precondition(format!(
                    "finite-difference point θ {} h e_{j} leaves the parameter region: {msg}",
                    if sign > 0.0 { "+" } else { "−" }
                )),
                other => other,
            })?;
        }
    }
    let x0 = opts.x0.clone().unwrap_or_else(|| model.default_state());
    let r_count = opts.replicates;
    // one task per (component, replicate)
    let quotients = par_map(nt * r_count, |task| {
        let (j, r) = (task / r_count, (task % r_count) as u64);
        let (sp, sm) = if crn {
            (r, r)
        } else {
            ((r << 32) | (2 * j as u64 + 1), (r << 32) | (2 * j as u64 + 2))
        };
        let plus = time_average(
            model,
            &shifted(j, 1.0),
            cost,
            &x0,
            opts.n_steps,
            burn_in,
            &mut RngStream::new(opts.seed, sp),
        )?;
        let minus = time_average(
            model,
            &shifted(j, -1.0),
            cost,
            &x0,
            opts.n_steps,
            burn_in,
            &mut RngStream::new(opts.seed, sm),
        )?;
        Ok((plus - minus) / (2.0 * steps[j]))
    })
    .into_iter()
    .collect::<Result<Vec<f64>>>()?;
    let per_replicate: Vec<Vec<f64>> = (0..r_count)
        .map(|r| (0..nt).map(|j| quotients[j * r_count + r]).collect())
        .collect();
    let (mean, stderr) = columnwise(&per_replicate);
    Ok(GradientEstimate {
        method: if crn { "finite_difference_crn" } else { "finite_difference" }.into(),
        mean,
        stderr,
        replicates: r_count,
        steps_per_replicate: opts.n_steps,
        burn_in,
        seed: opts.seed,
        cost_name: cost.name(),
        per_replicate,
    })
}
