//! Position-dependent weights `A(x)`, `B(x)` and the path-length metric
//! they induce.
//!
//! The true metric `d_A(x, y)` is an infimum of `∫ ‖A(γ(t)) γ'(t)‖ dt` over
//! all curves. Only the straight chord is evaluated here, which gives an
//! upper bound and is exact when `A` is constant.

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, Error, Result};
use crate::norm::{induced_operator_norm, BaseNorm};

/// Trapezoid panels used when no count is given.
pub const DEFAULT_SEGMENTS: usize = 64;

/// Selects the state-space weight `A` or the parameter-space weight `B`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WeightSide {
    A,
    B,
}

pub trait FinslerWeight: Sync {
    fn state_dim(&self) -> usize;
    fn param_dim(&self) -> usize;
    fn norm_x(&self) -> &BaseNorm;
    fn norm_theta(&self) -> &BaseNorm;

    fn a(&self, x: &[f64]) -> DMatrix<f64>;
    fn b(&self, x: &[f64]) -> DMatrix<f64>;

    fn a_inv(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        self.a(x)
            .try_inverse()
            .ok_or_else(|| Error::Numerical(format!("A(x) is singular at x = {x:?}")))
    }

    fn b_inv(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        self.b(x)
            .try_inverse()
            .ok_or_else(|| Error::Numerical(format!("B(x) is singular at x = {x:?}")))
    }

    /// Declared bound on `sup_x ‖A(x)^{-1}‖`.
    fn inv_a_bound(&self) -> f64;

    /// Declared `d_A`-Lipschitz constant of `x ↦ ‖B(x)‖`, when known.
    fn b_lipschitz(&self) -> Option<f64> {
        None
    }

    /// True when `A` does not depend on `x`; lets chords be evaluated
    /// exactly with a single norm.
    fn is_constant(&self) -> bool {
        false
    }

    /// `‖A(x) u‖`.
    fn a_norm(&self, x: &[f64], u: &[f64]) -> f64 {
        let au = self.a(x) * DVector::from_column_slice(u);
        self.norm_x().norm(au.as_slice())
    }
}

/// `A ≡ I`, `B ≡ I`, so `d_A(x, y) = ‖x − y‖`.
#[derive(Clone, Debug)]
pub struct IdentityWeight {
    norm_x: BaseNorm,
    norm_theta: BaseNorm,
    state_dim: usize,
    param_dim: usize,
}

impl IdentityWeight {
    pub fn new(state_dim: usize, param_dim: usize, norm_x: BaseNorm, norm_theta: BaseNorm) -> Result<Self> {
        norm_x.validate(state_dim)?;
        norm_theta.validate(param_dim)?;
        Ok(Self {
            norm_x,
            norm_theta,
            state_dim,
            param_dim,
        })
    }
}

impl FinslerWeight for IdentityWeight {
    fn state_dim(&self) -> usize {
        self.state_dim
    }

    fn param_dim(&self) -> usize {
        self.param_dim
    }

    fn norm_x(&self) -> &BaseNorm {
        &self.norm_x
    }

    fn norm_theta(&self) -> &BaseNorm {
        &self.norm_theta
    }

    fn a(&self, _x: &[f64]) -> DMatrix<f64> {
        DMatrix::identity(self.state_dim, self.state_dim)
    }

    fn b(&self, _x: &[f64]) -> DMatrix<f64> {
        DMatrix::identity(self.param_dim, self.param_dim)
    }

    fn a_inv(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        Ok(self.a(x))
    }

    fn b_inv(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        Ok(self.b(x))
    }

    fn inv_a_bound(&self) -> f64 {
        1.0
    }

    fn b_lipschitz(&self) -> Option<f64> {
        Some(0.0)
    }

    fn is_constant(&self) -> bool {
        true
    }

    fn a_norm(&self, _x: &[f64], u: &[f64]) -> f64 {
        self.norm_x.norm(u)
    }
}

/// `‖A(x) u‖` or `‖B(x) u‖`.
pub fn weighted_vector_norm<W: FinslerWeight + ?Sized>(
    w: &W,
    x: &[f64],
    u: &[f64],
    which: WeightSide,
) -> Result<f64> {
    check_dim("x", x.len(), w.state_dim())?;
    match which {
        WeightSide::A => {
            check_dim("u", u.len(), w.state_dim())?;
            Ok(w.a_norm(x, u))
        }
        WeightSide::B => {
            check_dim("u", u.len(), w.param_dim())?;
            let bu = w.b(x) * DVector::from_column_slice(u);
            Ok(w.norm_theta().norm(bu.as_slice()))
        }
    }
}

/// Operator norm of `B(x)` on `(R^{n_Θ}, ‖·‖_Θ)`.
pub fn b_operator_norm<W: FinslerWeight + ?Sized>(w: &W, x: &[f64]) -> Result<f64> {
    induced_operator_norm(&w.b(x), w.norm_theta(), w.norm_theta())
}

/// Composite trapezoid estimate of the chord length
/// `∫₀¹ ‖A(x + t(y − x)) (y − x)‖ dt`, an upper bound on `d_A(x, y)`.
pub fn metric_upper<W: FinslerWeight + ?Sized>(w: &W, x: &[f64], y: &[f64], segments: usize) -> f64 {
    let segments = segments.max(1);
    let d: Vec<f64> = y.iter().zip(x).map(|(b, a)| b - a).collect();
    if d.iter().all(|v| *v == 0.0) {
        return 0.0;
    }
    if w.is_constant() {
        return w.a_norm(x, &d);
    }
    let mut p = vec![0.0; x.len()];
    let mut values = Vec::with_capacity(segments + 1);
    for s in 0..=segments {
        // nodes in the second half are measured from y, so swapping x and y
        // reproduces the same points bit for bit
        let from_x = 2 * s <= segments;
        let t = if from_x {
            s as f64 / segments as f64
        } else {
            (segments - s) as f64 / segments as f64
        };
        let mid = 2 * s == segments;
        for i in 0..p.len() {
            p[i] = if mid {
                0.5 * x[i] + 0.5 * y[i]
            } else if from_x {
                x[i] + t * d[i]
            } else {
                y[i] - t * d[i]
            };
        }
        values.push(w.a_norm(&p, &d));
    }
    // pairwise from both ends keeps the sum reversal-symmetric
    let mut total = 0.5 * (values[0] + values[segments]);
    for s in 1..=(segments - 1) / 2 {
        total += values[s] + values[segments - s];
    }
    if segments % 2 == 0 && segments >= 2 {
        total += values[segments / 2];
    }
    total / segments as f64
}

/// Results of sampling a weight for invertibility and the inverse bound.
#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct WeightCheck {
    pub points: usize,
    pub max_inv_a_norm: f64,
    pub inv_a_bound: f64,
    pub passed: bool,
}

/// Checks `A(x)`, `B(x)` are invertible at each point and that
/// `‖A(x)^{-1}‖` stays within the declared bound.
pub fn check_weight<W: FinslerWeight + ?Sized>(w: &W, points: &[Vec<f64>]) -> Result<WeightCheck> {
    let mut max_inv = 0.0f64;
    for x in points {
        check_dim("x", x.len(), w.state_dim())?;
        let ai = w.a_inv(x)?;
        w.b_inv(x)?;
        max_inv = max_inv.max(induced_operator_norm(&ai, w.norm_x(), w.norm_x())?);
    }
    let bound = w.inv_a_bound();
    Ok(WeightCheck {
        points: points.len(),
        max_inv_a_norm: max_inv,
        inv_a_bound: bound,
        passed: max_inv <= bound * (1.0 + 1e-12),
    })
}
