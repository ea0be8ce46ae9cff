//! The forward sensitivity estimator.
//!
//! Alongside the chain `x_{n+1} = f(x_n, ξ_{n+1}, θ)` we carry
//! `m_{n+1} = ∂f/∂x(x_n, ξ_{n+1}, θ) m_n + ∂f/∂θ(x_n, ξ_{n+1}, θ)`, with both
//! Jacobians taken at the pre-step state and the same noise as the state
//! update. The per-step term `Δ_n = ∂e/∂x(x_n) m_n` averaged along the
//! chain estimates `∂/∂θ ∫ e dπ_θ`.

use std::io::Write;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::cost::CostFunction;
use crate::error::{check_dim, Error, Result};
use crate::model::SystemModel;
use crate::par_map;
use crate::rng::RngStream;
use crate::stats::columnwise;

/// Joint state `z = (x, m)` of the sensitivity process.
#[derive(Clone, Debug, PartialEq)]
pub struct SensState {
    pub x: Vec<f64>,
    /// `n_X × n_Θ`.
    pub m: DMatrix<f64>,
    pub step_index: usize,
}

impl SensState {
    /// `(x0, 0)` at step 0.
    pub fn new(x0: Vec<f64>, param_dim: usize) -> Self {
        let n = x0.len();
        Self {
            x: x0,
            m: DMatrix::zeros(n, param_dim),
            step_index: 0,
        }
    }

    pub fn with_m(x0: Vec<f64>, m0: DMatrix<f64>) -> Result<Self> {
        check_dim("m0 rows", m0.nrows(), x0.len())?;
        Ok(Self {
            x: x0,
            m: m0,
            step_index: 0,
        })
    }
}

/// Scratch buffers for [`Propagator::advance`]; keeps the inner loop free of
/// allocations.
pub struct Propagator {
    jx: DMatrix<f64>,
    jt: DMatrix<f64>,
    next_x: Vec<f64>,
    next_m: DMatrix<f64>,
}

impl Propagator {
    pub fn new(state_dim: usize, param_dim: usize) -> Self {
        Self {
            jx: DMatrix::zeros(state_dim, state_dim),
            jt: DMatrix::zeros(state_dim, param_dim),
            next_x: vec![0.0; state_dim],
            next_m: DMatrix::zeros(state_dim, param_dim),
        }
    }

    /// One step of the joint recursion in place.
    pub fn advance<M: SystemModel + ?Sized>(
        &mut self,
        model: &M,
        z: &mut SensState,
        noise: &M::Noise,
        theta: &[f64],
    ) -> Result<()> {
        model.jac_x(&z.x, noise, theta, &mut self.jx);
        model.jac_theta(&z.x, noise, theta, &mut self.jt);
        model.step(&z.x, noise, theta, &mut self.next_x);
        self.next_m.copy_from(&self.jt);
        self.next_m.gemm(1.0, &self.jx, &z.m, 1.0);
        let step = z.step_index + 1;
        if self.next_x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                step,
                what: format!("state = {:?}", self.next_x),
            });
        }
        if self.next_m.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                step,
                what: "sensitivity matrix".into(),
            });
        }
        std::mem::swap(&mut z.x, &mut self.next_x);
        std::mem::swap(&mut z.m, &mut self.next_m);
        z.step_index = step;
        Ok(())
    }
}

/// `z' = (f(x, ξ, θ), ∂f/∂x · m + ∂f/∂θ)`.
pub fn sens_step<M: SystemModel + ?Sized>(
    model: &M,
    z: &SensState,
    noise: &M::Noise,
    theta: &[f64],
) -> Result<SensState> {
    check_dim("x", z.x.len(), model.state_dim())?;
    check_dim("m rows", z.m.nrows(), model.state_dim())?;
    check_dim("m cols", z.m.ncols(), model.param_dim())?;
    check_dim("theta", theta.len(), model.param_dim())?;
    let mut out = z.clone();
    Propagator::new(model.state_dim(), model.param_dim()).advance(model, &mut out, noise, theta)?;
    Ok(out)
}

/// `max(1000, n/10)`, or `n/10` when the former would leave no steps.
pub fn default_burn_in(n_steps: usize) -> usize {
    let b = (n_steps / 10).max(1000);
    if b >= n_steps {
        n_steps / 10
    } else {
        b
    }
}

/// Settings for a single chain.
#[derive(Clone, Debug, Default)]
pub struct GradientRun {
    pub n_steps: usize,
    /// Defaults to [`default_burn_in`].
    pub burn_in: Option<usize>,
    /// Defaults to the model's `default_state`.
    pub x0: Option<Vec<f64>>,
    /// Defaults to zero.
    pub m0: Option<DMatrix<f64>>,
    /// Keep every `k`-th `Δ_n` (0 keeps none). Averages always use every term.
    pub record_every: usize,
}

impl GradientRun {
    pub fn new(n_steps: usize) -> Self {
        Self {
            n_steps,
            ..Default::default()
        }
    }

    pub fn burn_in(mut self, b: usize) -> Self {
        self.burn_in = Some(b);
        self
    }

    fn resolved_burn_in(&self) -> Result<usize> {
        if self.n_steps == 0 {
            return Err(Error::Config("n_steps must be positive".into()));
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

/// Result of one chain.
#[derive(Clone, Debug)]
pub struct RunOutput {
    /// Average of `Δ_n` over `burn_in < n <= n_steps`.
    pub average: Vec<f64>,
    pub terms: usize,
    pub burn_in: usize,
    /// `(n, Δ_n)` for the thinned record.
    pub recorded: Vec<(usize, Vec<f64>)>,
    pub final_state: SensState,
}

/// Runs the joint process, calling `visit(z_n, Δ_n)` after every step.
pub fn run_gradient_with<M, C, F>(
    model: &M,
    theta: &[f64],
    cost: &C,
    run: &GradientRun,
    rng: &mut RngStream,
    mut visit: F,
) -> Result<RunOutput>
where
    M: SystemModel + ?Sized,
    C: CostFunction + ?Sized,
    F: FnMut(&SensState, &[f64]) -> Result<()>,
{
    let nx = model.state_dim();
    let nt = model.param_dim();
    check_dim("theta", theta.len(), nt)?;
    let burn_in = run.resolved_burn_in()?;
    let x0 = run.x0.clone().unwrap_or_else(|| model.default_state());
    check_dim("x0", x0.len(), nx)?;
    if !model.state_domain().contains(&x0) {
        return Err(Error::Precondition(format!("x0 = {x0:?} lies outside the state domain")));
    }
    let mut z = match &run.m0 {
        Some(m0) => {
            check_dim("m0 cols", m0.ncols(), nt)?;
            SensState::with_m(x0, m0.clone())?
        }
        None => SensState::new(x0, nt),
    };
    let mut prop = Propagator::new(nx, nt);
    let mut noise = model.new_noise();
    let mut grad = vec![0.0; nx];
    let mut delta = vec![0.0; nt];
    let mut sum = vec![0.0; nt];
    let mut recorded = Vec::new();
    for n in 1..=run.n_steps {
        model.sample_noise(rng, &mut noise);
        prop.advance(model, &mut z, &noise, theta)?;
        cost.grad(&z.x, &mut grad);
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite {
                step: n,
                what: format!("cost gradient at x = {:?}", z.x),
            });
        }
        for (j, d) in delta.iter_mut().enumerate() {
            let col = z.m.column(j);
            *d = grad.iter().zip(col.iter()).map(|(g, m)| g * m).sum();
        }
        if n > burn_in {
            for (s, d) in sum.iter_mut().zip(&delta) {
                *s += d;
            }
        }
        if run.record_every > 0 && n % run.record_every == 0 {
            recorded.push((n, delta.clone()));
        }
        visit(&z, &delta)?;
    }
    let terms = run.n_steps - burn_in;
    Ok(RunOutput {
        average: sum.iter().map(|s| s / terms as f64).collect(),
        terms,
        burn_in,
        recorded,
        final_state: z,
    })
}

pub fn run_gradient<M, C>(
    model: &M,
    theta: &[f64],
    cost: &C,
    run: &GradientRun,
    rng: &mut RngStream,
) -> Result<RunOutput>
where
    M: SystemModel + ?Sized,
    C: CostFunction + ?Sized,
{
    run_gradient_with(model, theta, cost, run, rng, |_, _| Ok(()))
}

/// Writes `step, x…, m…, Δ…` rows (m in column-major order) for every
/// `every`-th step.
pub fn write_trace<M, C, W>(
    model: &M,
    theta: &[f64],
    cost: &C,
    run: &GradientRun,
    rng: &mut RngStream,
    every: usize,
    out: &mut W,
) -> Result<RunOutput>
where
    M: SystemModel + ?Sized,
    C: CostFunction + ?Sized,
    W: Write,
{
    let every = every.max(1);
    let io = |e: std::io::Error| Error::Numerical(format!("trace write failed: {e}"));
    let mut header = vec!["step".to_string()];
    header.extend((0..model.state_dim()).map(|i| format!("x{i}")));
    for j in 0..model.param_dim() {
        header.extend((0..model.state_dim()).map(|i| format!("m{i}_{j}")));
    }
    header.extend((0..model.param_dim()).map(|j| format!("delta{j}")));
    writeln!(out, "{}", header.join(",")).map_err(io)?;
    run_gradient_with(model, theta, cost, run, rng, |z, delta| {
        if z.step_index % every != 0 {
            return Ok(());
        }
        let mut row = vec![z.step_index.to_string()];
        row.extend(z.x.iter().map(f64::to_string));
        row.extend(z.m.iter().map(f64::to_string));
        row.extend(delta.iter().map(f64::to_string));
        writeln!(out, "{}", row.join(",")).map_err(io)
    })
}

/// Replicate-averaged derivative estimate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradientEstimate {
    pub method: String,
    pub mean: Vec<f64>,
    /// Absent for a single replicate.
    pub stderr: Option<Vec<f64>>,
    pub replicates: usize,
    pub steps_per_replicate: usize,
    pub burn_in: usize,
    pub seed: u64,
    pub cost_name: String,
    /// One estimate per replicate, in replicate order.
    pub per_replicate: Vec<Vec<f64>>,
}

/// Settings for [`batch_gradient`].
#[derive(Clone, Debug)]
pub struct BatchOptions {
    pub n_steps: usize,
    pub burn_in: Option<usize>,
    pub replicates: usize,
    pub base_seed: u64,
    pub x0: Option<Vec<f64>>,
}

impl BatchOptions {
    pub fn new(n_steps: usize, replicates: usize, base_seed: u64) -> Self {
        Self {
            n_steps,
            burn_in: None,
            replicates,
            base_seed,
            x0: None,
        }
    }

    pub fn burn_in(mut self, b: usize) -> Self {
        self.burn_in = Some(b);
        self
    }
}

/// Independent replicates, replicate `r` driven by `RngStream(base_seed, r)`.
pub fn batch_gradient<M, C>(model: &M, theta: &[f64], cost: &C, opts: &BatchOptions) -> Result<GradientEstimate>
where
    M: SystemModel + ?Sized,
    C: CostFunction + ?Sized,
{
    if opts.replicates == 0 {
        return Err(Error::Config("replicates must be at least 1".into()));
    }
    model.check_params(theta)?;
    let run = GradientRun {
        n_steps: opts.n_steps,
        burn_in: opts.burn_in,
        x0: opts.x0.clone(),
        m0: None,
        record_every: 0,
    };
    let burn_in = run.resolved_burn_in()?;
    let results = par_map(opts.replicates, |r| {
        let mut rng = RngStream::new(opts.base_seed, r as u64);
        run_gradient(model, theta, cost, &run, &mut rng).map(|o| o.average)
    });
    let per_replicate = results.into_iter().collect::<Result<Vec<_>>>()?;
    let (mean, stderr) = columnwise(&per_replicate);
    Ok(GradientEstimate {
        method: "forward_sensitivity".into(),
        mean,
        stderr,
        replicates: opts.replicates,
        steps_per_replicate: opts.n_steps,
        burn_in,
        seed: opts.base_seed,
        cost_name: cost.name(),
        per_replicate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cost::Coordinate;
    use crate::zoo::{make_ar1, Ar1Config};

    #[test]
    fn burn_in_defaults() {
        assert_eq!(default_burn_in(100_000), 10_000);
        assert_eq!(default_burn_in(5_000), 1000);
        assert_eq!(default_burn_in(800), 80);
    }

    #[test]
    fn burn_in_must_leave_steps() {
        let (m, _) = make_ar1(Ar1Config::default()).unwrap();
        let mut rng = RngStream::new(0, 0);
        let err = run_gradient(&m, &[0.3], &Coordinate(0), &GradientRun::new(10).burn_in(10), &mut rng).unwrap_err();
        assert_eq!(err.exit_status(), 2);
    }

    #[test]
    fn single_term_average() {
        let (m, _) = make_ar1(Ar1Config::default()).unwrap();
        let mut rng = RngStream::new(0, 0);
        let out = run_gradient(&m, &[0.3], &Coordinate(0), &GradientRun::new(10).burn_in(9), &mut rng).unwrap();
        assert_eq!(out.terms, 1);
        // m_10 = 2(1 − 2^{-10})
        assert!((out.average[0] - 2.0 * (1.0 - 2f64.powi(-10))).abs() < 1e-15);
    }

    #[test]
    fn trace_has_header_and_rows() {
        let (m, _) = make_ar1(Ar1Config::default()).unwrap();
        let mut rng = RngStream::new(0, 0);
        let mut buf = Vec::new();
        write_trace(&m, &[0.3], &Coordinate(0), &GradientRun::new(20).burn_in(5), &mut rng, 5, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "step,x0,m0_0,delta0");
        assert_eq!(lines.len(), 5);
        assert!(lines[1].starts_with("5,"));
    }
}
