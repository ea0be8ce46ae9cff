//! The system abstraction: a parameterized random recursion
//! `x' = f(x, ξ, θ)` together with its first and second derivatives.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::rng::RngStream;

/// The closed convex set the chain lives in.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StateDomain {
    /// All of `R^n`.
    Whole { dim: usize },
    /// An axis-aligned box `lo <= x <= hi`.
    Box { lo: Vec<f64>, hi: Vec<f64> },
}

impl StateDomain {
    pub fn unit_cube(dim: usize) -> Self {
        StateDomain::Box {
            lo: vec![0.0; dim],
            hi: vec![1.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            StateDomain::Whole { dim } => *dim,
            StateDomain::Box { lo, .. } => lo.len(),
        }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        if x.len() != self.dim() || x.iter().any(|v| !v.is_finite()) {
            return false;
        }
        match self {
            StateDomain::Whole { .. } => true,
            StateDomain::Box { lo, hi } => x
                .iter()
                .zip(lo.iter().zip(hi))
                .all(|(v, (l, h))| *v >= *l && *v <= *h),
        }
    }

    /// Intersection of the domain with a user box.
    pub fn intersect(&self, lo: &[f64], hi: &[f64]) -> (Vec<f64>, Vec<f64>) {
        match self {
            StateDomain::Whole { .. } => (lo.to_vec(), hi.to_vec()),
            StateDomain::Box { lo: dl, hi: dh } => {
                let l = lo.iter().zip(dl).map(|(a, b)| a.max(*b)).collect();
                let h = hi.iter().zip(dh).map(|(a, b)| a.min(*b)).collect();
                (l, h)
            }
        }
    }
}

/// A bilinear map `R^left × R^right → R^out` stored densely as
/// `data[(k * left + i) * right + j]`, i.e. `F[u, v]_k = Σ_ij F_kij u_i v_j`.
#[derive(Clone, Debug, PartialEq)]
pub struct Bilinear {
    out_dim: usize,
    left_dim: usize,
    right_dim: usize,
    data: Vec<f64>,
}

impl Bilinear {
    pub fn zeros(out_dim: usize, left_dim: usize, right_dim: usize) -> Self {
        Self {
            out_dim,
            left_dim,
            right_dim,
            data: vec![0.0; out_dim * left_dim * right_dim],
        }
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn left_dim(&self) -> usize {
        self.left_dim
    }

    pub fn right_dim(&self) -> usize {
        self.right_dim
    }

    #[inline]
    fn idx(&self, k: usize, i: usize, j: usize) -> usize {
        (k * self.left_dim + i) * self.right_dim + j
    }

    #[inline]
    pub fn get(&self, k: usize, i: usize, j: usize) -> f64 {
        self.data[self.idx(k, i, j)]
    }

    #[inline]
    pub fn set(&mut self, k: usize, i: usize, j: usize, v: f64) {
        let idx = self.idx(k, i, j);
        self.data[idx] = v;
    }

    #[inline]
    pub fn add(&mut self, k: usize, i: usize, j: usize, v: f64) {
        let idx = self.idx(k, i, j);
        self.data[idx] += v;
    }

    pub fn fill_zero(&mut self) {
        self.data.iter_mut().for_each(|v| *v = 0.0);
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn scaled(&self, c: f64) -> Bilinear {
        let mut out = self.clone();
        out.data.iter_mut().for_each(|v| *v *= c);
        out
    }

    pub fn apply(&self, u: &[f64], v: &[f64]) -> Vec<f64> {
        (0..self.out_dim)
            .map(|k| {
                let mut acc = 0.0;
                for i in 0..self.left_dim {
                    for j in 0..self.right_dim {
                        acc += self.get(k, i, j) * u[i] * v[j];
                    }
                }
                acc
            })
            .collect()
    }

    /// The linear map `v ↦ F[u, v]` as an `out × right` matrix.
    pub fn fix_left(&self, u: &[f64]) -> DMatrix<f64> {
        DMatrix::from_fn(self.out_dim, self.right_dim, |k, j| {
            (0..self.left_dim).map(|i| self.get(k, i, j) * u[i]).sum()
        })
    }

    /// The linear map `u ↦ F[u, v]` as an `out × left` matrix.
    pub fn fix_right(&self, v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_fn(self.out_dim, self.left_dim, |k, i| {
            (0..self.right_dim).map(|j| self.get(k, i, j) * v[j]).sum()
        })
    }

    /// `(u, v) ↦ post · F[left · u, right · v]`.
    pub fn compose(&self, post: &DMatrix<f64>, left: &DMatrix<f64>, right: &DMatrix<f64>) -> Bilinear {
        let mut tmp = Bilinear::zeros(self.out_dim, left.ncols(), right.ncols());
        for k in 0..self.out_dim {
            for a in 0..left.ncols() {
                for b in 0..right.ncols() {
                    let mut acc = 0.0;
                    for i in 0..self.left_dim {
                        let li = left[(i, a)];
                        if li == 0.0 {
                            continue;
                        }
                        for j in 0..self.right_dim {
                            acc += self.get(k, i, j) * li * right[(j, b)];
                        }
                    }
                    tmp.set(k, a, b, acc);
                }
            }
        }
        let mut out = Bilinear::zeros(post.nrows(), left.ncols(), right.ncols());
        for r in 0..post.nrows() {
            for k in 0..self.out_dim {
                let p = post[(r, k)];
                if p == 0.0 {
                    continue;
                }
                for a in 0..left.ncols() {
                    for b in 0..right.ncols() {
                        out.add(r, a, b, p * tmp.get(k, a, b));
                    }
                }
            }
        }
        out
    }
}

/// A parameterized random recursion with explicit derivatives.
///
/// Noise values are owned by the model and opaque to the engine, which only
/// threads [`RngStream`]s through. Sampling must not depend on `θ`, so that
/// runs at different parameters sharing a stream see identical noise.
///
/// Hessian methods return [`Error::MissingDerivative`] unless overridden.
pub trait SystemModel: Sync {
    type Noise: Clone + Send + std::fmt::Debug;

    fn name(&self) -> &str;
    fn state_dim(&self) -> usize;
    fn param_dim(&self) -> usize;
    fn state_domain(&self) -> &StateDomain;
    /// A convenient starting point inside the domain.
    fn default_state(&self) -> Vec<f64>;

    fn new_noise(&self) -> Self::Noise;
    fn sample_noise(&self, rng: &mut RngStream, noise: &mut Self::Noise);

    fn step(&self, x: &[f64], noise: &Self::Noise, theta: &[f64], out: &mut [f64]);
    /// `∂f/∂x`, an `n_X × n_X` matrix.
    fn jac_x(&self, x: &[f64], noise: &Self::Noise, theta: &[f64], out: &mut DMatrix<f64>);
    /// `∂f/∂θ`, an `n_X × n_Θ` matrix.
    fn jac_theta(&self, x: &[f64], noise: &Self::Noise, theta: &[f64], out: &mut DMatrix<f64>);

    /// `∂²f/∂x²` as an `n_X × n_X → n_X` bilinear map.
    fn hess_xx(&self, _x: &[f64], _noise: &Self::Noise, _theta: &[f64], _out: &mut Bilinear) -> Result<()> {
        Err(Error::MissingDerivative("hess_xx"))
    }
    /// `∂²f/∂θ²` as an `n_Θ × n_Θ → n_X` bilinear map.
    fn hess_thetatheta(&self, _x: &[f64], _noise: &Self::Noise, _theta: &[f64], _out: &mut Bilinear) -> Result<()> {
        Err(Error::MissingDerivative("hess_thetatheta"))
    }
    /// `∂²f/∂x∂θ` as an `n_X × n_Θ → n_X` bilinear map.
    fn hess_xtheta(&self, _x: &[f64], _noise: &Self::Noise, _theta: &[f64], _out: &mut Bilinear) -> Result<()> {
        Err(Error::MissingDerivative("hess_xtheta"))
    }

    /// Parameter-region predicate. The error names the violated condition.
    fn check_params(&self, theta: &[f64]) -> Result<()> {
        check_dim("theta", theta.len(), self.param_dim())
    }
}

fn check_finite(step: usize, what: &str, v: &[f64]) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite {
            step,
            what: format!("{what} = {v:?}"),
        })
    }
}

/// Runs `n` steps from `x0`, calling `visit(k, x_k, ξ_k)` for `k = 1..=n`.
/// Returns the final state.
pub fn simulate_with<M, F>(
    model: &M,
    theta: &[f64],
    x0: &[f64],
    n: usize,
    rng: &mut RngStream,
    mut visit: F,
) -> Result<Vec<f64>>
where
    M: SystemModel + ?Sized,
    F: FnMut(usize, &[f64], &M::Noise) -> Result<()>,
{
    check_dim("x0", x0.len(), model.state_dim())?;
    check_dim("theta", theta.len(), model.param_dim())?;
    if !model.state_domain().contains(x0) {
        return Err(Error::Precondition(format!("x0 = {x0:?} lies outside the state domain")));
    }
    let mut x = x0.to_vec();
    let mut next = vec![0.0; x.len()];
    let mut noise = model.new_noise();
    for k in 1..=n {
        model.sample_noise(rng, &mut noise);
        model.step(&x, &noise, theta, &mut next);
        check_finite(k, "state", &next)?;
        std::mem::swap(&mut x, &mut next);
        visit(k, &x, &noise)?;
    }
    Ok(x)
}

/// Trajectory `[x_0, x_1, …, x_n]`, keeping every `every`-th state (and
/// always `x_0`).
pub fn simulate<M: SystemModel + ?Sized>(
    model: &M,
    theta: &[f64],
    x0: &[f64],
    n: usize,
    rng: &mut RngStream,
    every: usize,
) -> Result<Vec<Vec<f64>>> {
    if n < 1 {
        return Err(Error::Config("simulate needs n >= 1".into()));
    }
    let every = every.max(1);
    let mut out = vec![x0.to_vec()];
    simulate_with(model, theta, x0, n, rng, |k, x, _| {
        if k % every == 0 {
            out.push(x.to_vec());
        }
        Ok(())
    })?;
    Ok(out)
}

/// Tolerances for [`validate_derivatives`].
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct DerivTolerance {
    pub first: f64,
    pub second: f64,
}

impl Default for DerivTolerance {
    fn default() -> Self {
        Self {
            first: 1e-5,
            second: 1e-4,
        }
    }
}

/// Worst discrepancy between one analytic derivative and its finite
/// difference estimate.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DerivativeCheck {
    pub name: String,
    pub max_rel_error: f64,
    pub worst_point: Vec<f64>,
    /// Entry index: `[row, col]` for Jacobians, `[k, i, j]` for Hessians.
    pub worst_entry: Vec<usize>,
    pub tolerance: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DerivativeReport {
    pub checks: Vec<DerivativeCheck>,
    /// First sampled point at which the model produced a non-finite value.
    pub non_finite_at: Option<Vec<f64>>,
    pub passed: bool,
}

impl DerivativeReport {
    pub fn check(&self, name: &str) -> Option<&DerivativeCheck> {
        self.checks.iter().find(|c| c.name == name)
    }
}

#[inline]
fn fd_step(v: f64) -> f64 {
    1e-6 * (1.0 + v.abs())
}

#[inline]
fn rel_err(analytic: f64, fd: f64) -> f64 {
    (analytic - fd).abs() / fd.abs().max(1.0)
}

struct Tracker {
    name: &'static str,
    tol: f64,
    max: f64,
    point: Vec<f64>,
    entry: Vec<usize>,
}

impl Tracker {
    fn new(name: &'static str, tol: f64) -> Self {
        Self {
            name,
            tol,
            max: 0.0,
            point: Vec::new(),
            entry: Vec::new(),
        }
    }

    fn record(&mut self, err: f64, point: &[f64], entry: &[usize]) {
        let err = if err.is_nan() { f64::INFINITY } else { err };
        if self.point.is_empty() || err > self.max {
            self.max = err;
            self.point = point.to_vec();
            self.entry = entry.to_vec();
        }
    }

    fn finish(self) -> DerivativeCheck {
        DerivativeCheck {
            name: self.name.to_string(),
            passed: self.max <= self.tol,
            max_rel_error: self.max,
            worst_point: self.point,
            worst_entry: self.entry,
            tolerance: self.tol,
        }
    }
}

/// Compares analytic derivatives against central finite differences of
/// `step` (for Jacobians) and of the Jacobians (for Hessians) at each
/// point, with one noise draw per point.
pub fn validate_derivatives<M: SystemModel + ?Sized>(
    model: &M,
    theta: &[f64],
    points: &[Vec<f64>],
    rng: &mut RngStream,
    tol: DerivTolerance,
) -> Result<DerivativeReport> {
    let nx = model.state_dim();
    let nt = model.param_dim();
    check_dim("theta", theta.len(), nt)?;
    let mut noise = model.new_noise();
    let mut jx = Tracker::new("jac_x", tol.first);
    let mut jt = Tracker::new("jac_theta", tol.first);
    let mut hxx = Tracker::new("hess_xx", tol.second);
    let mut htt = Tracker::new("hess_thetatheta", tol.second);
    let mut hxt = Tracker::new("hess_xtheta", tol.second);
    let mut have = [true; 3];
    let mut non_finite_at = None;

    let mut fp = vec![0.0; nx];
    let mut fm = vec![0.0; nx];
    let mut ja = DMatrix::zeros(nx, nx);
    let mut ta = DMatrix::zeros(nx, nt);
    let mut jp = DMatrix::zeros(nx, nx);
    let mut jm = DMatrix::zeros(nx, nx);
    let mut tp = DMatrix::zeros(nx, nt);
    let mut tm = DMatrix::zeros(nx, nt);
    let mut h_xx = Bilinear::zeros(nx, nx, nx);
    let mut h_tt = Bilinear::zeros(nx, nt, nt);
    let mut h_xt = Bilinear::zeros(nx, nx, nt);

    for x in points {
        check_dim("validation point", x.len(), nx)?;
        model.sample_noise(rng, &mut noise);
        model.step(x, &noise, theta, &mut fp);
        model.jac_x(x, &noise, theta, &mut ja);
        model.jac_theta(x, &noise, theta, &mut ta);
        if fp.iter().chain(ja.iter()).chain(ta.iter()).any(|v| !v.is_finite()) {
            non_finite_at.get_or_insert_with(|| x.clone());
            continue;
        }
        have[0] = have[0] && model.hess_xx(x, &noise, theta, &mut h_xx).is_ok();
        have[1] = have[1] && model.hess_thetatheta(x, &noise, theta, &mut h_tt).is_ok();
        have[2] = have[2] && model.hess_xtheta(x, &noise, theta, &mut h_xt).is_ok();

        let mut xp = x.clone();
        let mut xm = x.clone();
        for j in 0..nx {
            let h = fd_step(x[j]);
            xp[j] = x[j] + h;
            xm[j] = x[j] - h;
            model.step(&xp, &noise, theta, &mut fp);
            model.step(&xm, &noise, theta, &mut fm);
            for k in 0..nx {
                let fd = (fp[k] - fm[k]) / (2.0 * h);
                jx.record(rel_err(ja[(k, j)], fd), x, &[k, j]);
            }
            if have[0] {
                model.jac_x(&xp, &noise, theta, &mut jp);
                model.jac_x(&xm, &noise, theta, &mut jm);
                for k in 0..nx {
                    for i in 0..nx {
                        let fd = (jp[(k, i)] - jm[(k, i)]) / (2.0 * h);
                        hxx.record(rel_err(h_xx.get(k, i, j), fd), x, &[k, i, j]);
                    }
                }
            }
            xp[j] = x[j];
            xm[j] = x[j];
        }

        let mut thp = theta.to_vec();
        let mut thm = theta.to_vec();
        for a in 0..nt {
            let h = fd_step(theta[a]);
            thp[a] = theta[a] + h;
            thm[a] = theta[a] - h;
            model.step(x, &noise, &thp, &mut fp);
            model.step(x, &noise, &thm, &mut fm);
            for k in 0..nx {
                let fd = (fp[k] - fm[k]) / (2.0 * h);
                jt.record(rel_err(ta[(k, a)], fd), x, &[k, a]);
            }
            if have[1] {
                model.jac_theta(x, &noise, &thp, &mut tp);
                model.jac_theta(x, &noise, &thm, &mut tm);
                for k in 0..nx {
                    for b in 0..nt {
                        let fd = (tp[(k, b)] - tm[(k, b)]) / (2.0 * h);
                        htt.record(rel_err(h_tt.get(k, b, a), fd), x, &[k, b, a]);
                    }
                }
            }
            if have[2] {
                model.jac_x(x, &noise, &thp, &mut jp);
                model.jac_x(x, &noise, &thm, &mut jm);
                for k in 0..nx {
                    for i in 0..nx {
                        let fd = (jp[(k, i)] - jm[(k, i)]) / (2.0 * h);
                        hxt.record(rel_err(h_xt.get(k, i, a), fd), x, &[k, i, a]);
                    }
                }
            }
            thp[a] = theta[a];
            thm[a] = theta[a];
        }
    }

    let mut checks = vec![jx.finish(), jt.finish()];
    for (present, tracker) in have.iter().zip([hxx, htt, hxt]) {
        if *present && !points.is_empty() {
            checks.push(tracker.finish());
        }
    }
    let passed = non_finite_at.is_none() && checks.iter().all(|c| c.passed);
    Ok(DerivativeReport {
        checks,
        non_finite_at,
        passed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bilinear_apply_and_slices_agree() {
        let mut q = Bilinear::zeros(2, 2, 3);
        for k in 0..2 {
            for i in 0..2 {
                for j in 0..3 {
                    q.set(k, i, j, (k + 2 * i + 3 * j) as f64 - 2.5);
                }
            }
        }
        let u = [0.3, -1.2];
        let v = [1.0, 0.5, -2.0];
        let direct = q.apply(&u, &v);
        let via_left = q.fix_left(&u) * nalgebra::DVector::from_column_slice(&v);
        let via_right = q.fix_right(&v) * nalgebra::DVector::from_column_slice(&u);
        for k in 0..2 {
            assert!((direct[k] - via_left[k]).abs() < 1e-12);
            assert!((direct[k] - via_right[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn compose_matches_direct_evaluation() {
        let mut q = Bilinear::zeros(2, 2, 2);
        q.set(1, 0, 1, 0.5);
        q.set(1, 1, 0, 0.5);
        q.set(0, 0, 0, 2.0);
        let post = DMatrix::from_row_slice(2, 2, &[3.0, 0.0, 0.0, 5.0]);
        let left = DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 0.0, 0.25]);
        let right = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 2.0]);
        let c = q.compose(&post, &left, &right);
        let u = [1.5, -0.5];
        let v = [0.25, 2.0];
        let lu: Vec<f64> = (&left * nalgebra::DVector::from_column_slice(&u)).iter().copied().collect();
        let rv: Vec<f64> = (&right * nalgebra::DVector::from_column_slice(&v)).iter().copied().collect();
        let inner = q.apply(&lu, &rv);
        let want = &post * nalgebra::DVector::from_column_slice(&inner);
        let got = c.apply(&u, &v);
        for k in 0..2 {
            assert!((got[k] - want[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn domain_membership() {
        let d = StateDomain::unit_cube(2);
        assert!(d.contains(&[0.0, 1.0]));
        assert!(!d.contains(&[0.0, 1.0 + 1e-12]));
        assert!(!d.contains(&[0.0]));
        assert!(StateDomain::Whole { dim: 1 }.contains(&[-1e9]));
        assert!(!StateDomain::Whole { dim: 1 }.contains(&[f64::NAN]));
        let (lo, hi) = d.intersect(&[-1.0, 0.5], &[0.5, 3.0]);
        assert_eq!(lo, vec![0.0, 0.5]);
        assert_eq!(hi, vec![0.5, 1.0]);
    }
}
