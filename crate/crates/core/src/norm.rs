//! Base norms on `R^n` and the exact induced norms of linear and bilinear
//! maps between them.
//!
//! Supported combinations for `‖E‖ = sup_{‖u‖_in = 1} ‖E u‖_out`:
//!
//! | input        | output        | method                                 |
//! |--------------|---------------|----------------------------------------|
//! | weighted ℓ1  | any           | `max_j ‖E e_j‖_out / p_j`              |
//! | ℓ∞           | ℓ∞            | max absolute row sum                   |
//! | ℓ∞           | ℓ1 / ℓ2       | enumeration of sign vectors, `n ≤ 16`  |
//! | ℓ2           | ℓ2            | largest singular value                 |
//! | ℓ2           | ℓ∞            | max row Euclidean norm                 |
//!
//! Anything else is refused with [`Error::UnsupportedNorm`].

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Bilinear;

/// Largest input dimension for which ℓ∞ sign enumeration is attempted.
pub const MAX_SIGN_ENUMERATION_DIM: usize = 16;
/// Largest ℓ∞ input dimension accepted by [`induced_bilinear_norm`].
pub const MAX_BILINEAR_LINF_DIM: usize = 12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BaseNorm {
    /// `Σ p_i |u_i|` with strictly positive weights.
    L1Weighted { weights: Vec<f64> },
    Linf,
    L2,
}

impl BaseNorm {
    pub fn l1_weighted(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() || weights.iter().any(|p| !(p.is_finite() && *p > 0.0)) {
            return Err(Error::Config(format!(
                "weighted l1 norm needs strictly positive weights, got {weights:?}"
            )));
        }
        Ok(BaseNorm::L1Weighted { weights })
    }

    pub fn l1(dim: usize) -> Self {
        BaseNorm::L1Weighted {
            weights: vec![1.0; dim],
        }
    }

    /// Checks the norm is usable on `R^dim`.
    pub fn validate(&self, dim: usize) -> Result<()> {
        if let BaseNorm::L1Weighted { weights } = self {
            if weights.len() != dim {
                return Err(Error::Dimension(format!(
                    "weighted l1 norm has {} weights for dimension {dim}",
                    weights.len()
                )));
            }
            if weights.iter().any(|p| !(p.is_finite() && *p > 0.0)) {
                return Err(Error::Config("weighted l1 norm weights must be positive".into()));
            }
        }
        Ok(())
    }

    pub fn norm(&self, u: &[f64]) -> f64 {
        match self {
            BaseNorm::L1Weighted { weights } => {
                u.iter().zip(weights).map(|(v, p)| p * v.abs()).sum()
            }
            BaseNorm::Linf => u.iter().fold(0.0, |m, v| m.max(v.abs())),
            BaseNorm::L2 => u.iter().map(|v| v * v).sum::<f64>().sqrt(),
        }
    }

    fn norm_col(&self, e: &DMatrix<f64>, j: usize) -> f64 {
        match self {
            BaseNorm::L1Weighted { weights } => {
                e.column(j).iter().zip(weights).map(|(v, p)| p * v.abs()).sum()
            }
            BaseNorm::Linf => e.column(j).iter().fold(0.0, |m, v| m.max(v.abs())),
            BaseNorm::L2 => e.column(j).norm(),
        }
    }

    fn label(&self) -> &'static str {
        match self {
            BaseNorm::L1Weighted { .. } => "weighted-l1",
            BaseNorm::Linf => "linf",
            BaseNorm::L2 => "l2",
        }
    }
}

/// Exact `sup_{‖u‖_in = 1} ‖E u‖_out`.
pub fn induced_operator_norm(e: &DMatrix<f64>, input: &BaseNorm, output: &BaseNorm) -> Result<f64> {
    let (rows, cols) = e.shape();
    input.validate(cols)?;
    output.validate(rows)?;
    if rows == 0 || cols == 0 {
        return Ok(0.0);
    }
    match (input, output) {
        (BaseNorm::L1Weighted { weights }, _) => Ok((0..cols)
            .map(|j| output.norm_col(e, j) / weights[j])
            .fold(0.0, f64::max)),
        (BaseNorm::Linf, BaseNorm::Linf) => Ok(e
            .row_iter()
            .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)),
        (BaseNorm::Linf, _) => {
            if cols > MAX_SIGN_ENUMERATION_DIM {
                return Err(Error::UnsupportedNorm(format!(
                    "exact linf -> {} operator norm needs sign enumeration; dimension {cols} exceeds {MAX_SIGN_ENUMERATION_DIM}",
                    output.label()
                )));
            }
            Ok(max_over_signs(cols, |s| {
                let mut acc = vec![0.0; rows];
                for (j, sj) in s.iter().enumerate() {
                    for (a, v) in acc.iter_mut().zip(e.column(j).iter()) {
                        *a += sj * v;
                    }
                }
                output.norm(&acc)
            }))
        }
        (BaseNorm::L2, BaseNorm::L2) => Ok(e
            .clone()
            .svd(false, false)
            .singular_values
            .iter()
            .fold(0.0, |m, v| m.max(*v))),
        (BaseNorm::L2, BaseNorm::Linf) => Ok(e.row_iter().map(|r| r.norm()).fold(0.0, f64::max)),
        (BaseNorm::L2, BaseNorm::L1Weighted { .. }) => Err(Error::UnsupportedNorm(
            "l2 -> weighted-l1 operator norm has no exact closed form".into(),
        )),
    }
}

/// Exact norm of `post · E · pre`, i.e. the operator norm of `E` between
/// the weighted norms `‖pre^{-1} ·‖_in` and `‖post ·‖_out`.
pub fn weighted_operator_norm(
    post: &DMatrix<f64>,
    e: &DMatrix<f64>,
    pre: &DMatrix<f64>,
    input: &BaseNorm,
    output: &BaseNorm,
) -> Result<f64> {
    induced_operator_norm(&(post * e * pre), input, output)
}

fn max_over_signs(n: usize, mut f: impl FnMut(&[f64]) -> f64) -> f64 {
    // s and -s give the same norm, so the first sign is pinned to +1.
    let mut s = vec![1.0; n];
    let mut best = 0.0f64;
    let combos = 1usize << n.saturating_sub(1);
    for mask in 0..combos {
        for (b, sv) in s.iter_mut().enumerate().skip(1) {
            *sv = if (mask >> (b - 1)) & 1 == 1 { -1.0 } else { 1.0 };
        }
        best = best.max(f(&s));
    }
    best
}

fn vertex_count(norm: &BaseNorm, dim: usize) -> usize {
    match norm {
        BaseNorm::L1Weighted { .. } => dim,
        _ => 1usize << dim.saturating_sub(1),
    }
}

/// Exact `sup_{‖u‖_left = ‖v‖_right = 1} ‖Q[u, v]‖_out`.
///
/// The supremum of the convex function `u ↦ ‖Q[u, ·]‖` over the unit ball is
/// attained at a vertex, so the side with fewer vertices is enumerated and
/// the other side is handled by the exact operator norm.
pub fn induced_bilinear_norm(
    q: &Bilinear,
    left: &BaseNorm,
    right: &BaseNorm,
    output: &BaseNorm,
) -> Result<f64> {
    for (norm, dim) in [(left, q.left_dim()), (right, q.right_dim())] {
        norm.validate(dim)?;
        match norm {
            BaseNorm::L2 => {
                return Err(Error::UnsupportedNorm(
                    "bilinear norms need weighted-l1 or linf inputs".into(),
                ))
            }
            BaseNorm::Linf if dim > MAX_BILINEAR_LINF_DIM => {
                return Err(Error::UnsupportedNorm(format!(
                    "linf bilinear input of dimension {dim} exceeds {MAX_BILINEAR_LINF_DIM}"
                )))
            }
            _ => {}
        }
    }
    output.validate(q.out_dim())?;
    if q.out_dim() == 0 || q.left_dim() == 0 || q.right_dim() == 0 {
        return Ok(0.0);
    }
    let enumerate_left = vertex_count(left, q.left_dim()) <= vertex_count(right, q.right_dim());
    let (vert_norm, vert_dim, other_norm) = if enumerate_left {
        (left, q.left_dim(), right)
    } else {
        (right, q.right_dim(), left)
    };
    let slice = |u: &[f64]| {
        if enumerate_left {
            q.fix_left(u)
        } else {
            q.fix_right(u)
        }
    };
    match vert_norm {
        BaseNorm::L1Weighted { weights } => {
            let mut best = 0.0f64;
            let mut u = vec![0.0; vert_dim];
            for i in 0..vert_dim {
                u[i] = 1.0 / weights[i];
                best = best.max(induced_operator_norm(&slice(&u), other_norm, output)?);
                u[i] = 0.0;
            }
            Ok(best)
        }
        _ => {
            let mut err = None;
            let best = max_over_signs(vert_dim, |s| match induced_operator_norm(&slice(s), other_norm, output) {
                Ok(v) => v,
                Err(e) => {
                    err.get_or_insert(e);
                    0.0
                }
            });
            match err {
                Some(e) => Err(e),
                None => Ok(best),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn m(rows: usize, cols: usize, v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(rows, cols, v)
    }

    #[test]
    fn identity_has_unit_norm() {
        let i = DMatrix::<f64>::identity(3, 3);
        for n in [BaseNorm::Linf, BaseNorm::L2, BaseNorm::l1(3)] {
            assert!((induced_operator_norm(&i, &n, &n).unwrap() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn linf_is_max_row_sum() {
        let e = m(2, 2, &[1.0, -2.0, 3.0, 0.0]);
        assert_eq!(induced_operator_norm(&e, &BaseNorm::Linf, &BaseNorm::Linf).unwrap(), 3.0);
    }

    #[test]
    fn linf_matches_sign_enumeration() {
        // brute force over {±1}^2
        let e = m(2, 2, &[1.0, -2.0, 3.0, 0.0]);
        let mut brute = 0.0f64;
        for s0 in [-1.0, 1.0] {
            for s1 in [-1.0, 1.0] {
                let y0: f64 = e[(0, 0)] * s0 + e[(0, 1)] * s1;
                let y1: f64 = e[(1, 0)] * s0 + e[(1, 1)] * s1;
                brute = brute.max(y0.abs().max(y1.abs()));
            }
        }
        assert_eq!(brute, 3.0);
        assert_eq!(induced_operator_norm(&e, &BaseNorm::Linf, &BaseNorm::Linf).unwrap(), brute);
    }

    #[test]
    fn l1_is_max_column_sum() {
        let e = m(2, 2, &[1.0, -2.0, 3.0, 0.0]);
        assert_eq!(induced_operator_norm(&e, &BaseNorm::l1(2), &BaseNorm::l1(2)).unwrap(), 4.0);
    }

    #[test]
    fn weighted_l1_columns_scale_by_weights() {
        let e = m(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let n = BaseNorm::l1_weighted(vec![1.0, 0.1]).unwrap();
        // column j: (p_j |1|) / p_j = 1
        assert!((induced_operator_norm(&e, &n, &n).unwrap() - 1.0).abs() < 1e-15);
        let out = BaseNorm::l1(2);
        // column 2 has norm 1 / 0.1
        assert!((induced_operator_norm(&e, &n, &out).unwrap() - 10.0).abs() < 1e-12);
    }

    #[test]
    fn l2_is_spectral() {
        let e = m(2, 2, &[3.0, 0.0, 4.0, 5.0]);
        // singular values of [[3,0],[4,5]] are sqrt(45) and sqrt(5)
        let got = induced_operator_norm(&e, &BaseNorm::L2, &BaseNorm::L2).unwrap();
        assert!((got - 45f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn linf_to_l1_enumerates_and_refuses_large() {
        let e = m(1, 2, &[1.0, -1.0]);
        assert_eq!(induced_operator_norm(&e, &BaseNorm::Linf, &BaseNorm::l1(1)).unwrap(), 2.0);
        let big = DMatrix::<f64>::zeros(2, 17);
        assert!(matches!(
            induced_operator_norm(&big, &BaseNorm::Linf, &BaseNorm::l1(2)),
            Err(Error::UnsupportedNorm(_))
        ));
        assert!(matches!(
            induced_operator_norm(&big, &BaseNorm::Linf, &BaseNorm::Linf),
            Ok(_)
        ));
    }

    #[test]
    fn zero_bilinear_has_zero_norm() {
        let q = Bilinear::zeros(2, 2, 3);
        let v = induced_bilinear_norm(&q, &BaseNorm::l1(2), &BaseNorm::Linf, &BaseNorm::Linf).unwrap();
        assert_eq!(v, 0.0);
    }

    #[test]
    fn cross_term_bilinear_norm() {
        // only d2f_2/dx1dx2 = 1/2, symmetric
        let mut q = Bilinear::zeros(2, 2, 2);
        q.set(1, 0, 1, 0.5);
        q.set(1, 1, 0, 0.5);
        let l1 = BaseNorm::l1(2);
        assert!((induced_bilinear_norm(&q, &l1, &l1, &l1).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn bilinear_refuses_unsupported() {
        let q = Bilinear::zeros(1, 2, 13);
        assert!(induced_bilinear_norm(&q, &BaseNorm::L2, &BaseNorm::l1(13), &BaseNorm::L2).is_err());
        assert!(induced_bilinear_norm(&q, &BaseNorm::Linf, &BaseNorm::Linf, &BaseNorm::L2).is_err());
    }

    #[test]
    fn bilinear_linf_brute_force() {
        // sup over all sign pairs, checked directly
        let mut q = Bilinear::zeros(2, 3, 2);
        let vals = [0.3, -1.1, 0.7, 2.0, -0.4, 0.9, 1.5, -0.2, 0.1, 0.8, -1.3, 0.6];
        let mut it = vals.iter();
        for k in 0..2 {
            for i in 0..3 {
                for j in 0..2 {
                    q.set(k, i, j, *it.next().unwrap());
                }
            }
        }
        let out = BaseNorm::l1(2);
        let mut brute = 0.0f64;
        for a in 0..8 {
            let u: Vec<f64> = (0..3).map(|b| if (a >> b) & 1 == 1 { -1.0 } else { 1.0 }).collect();
            for c in 0..4 {
                let v: Vec<f64> = (0..2).map(|b| if (c >> b) & 1 == 1 { -1.0 } else { 1.0 }).collect();
                brute = brute.max(out.norm(&q.apply(&u, &v)));
            }
        }
        let got = induced_bilinear_norm(&q, &BaseNorm::Linf, &BaseNorm::Linf, &out).unwrap();
        assert!((got - brute).abs() < 1e-12);
    }

    fn any_norm(dim: usize) -> impl Strategy<Value = BaseNorm> {
        prop_oneof![
            Just(BaseNorm::Linf),
            Just(BaseNorm::L2),
            proptest::collection::vec(0.1f64..3.0, dim).prop_map(|w| BaseNorm::L1Weighted { weights: w }),
        ]
    }

    proptest! {
        #[test]
        fn norm_axioms(
            norm in any_norm(4),
            u in proptest::collection::vec(-10.0f64..10.0, 4),
            v in proptest::collection::vec(-10.0f64..10.0, 4),
            c in -5.0f64..5.0,
        ) {
            let cu: Vec<f64> = u.iter().map(|x| c * x).collect();
            let sum: Vec<f64> = u.iter().zip(&v).map(|(a, b)| a + b).collect();
            prop_assert!((norm.norm(&cu) - c.abs() * norm.norm(&u)).abs() <= 1e-9 * (1.0 + norm.norm(&u)));
            prop_assert!(norm.norm(&sum) <= norm.norm(&u) + norm.norm(&v) + 1e-9);
            prop_assert!(norm.norm(&u) >= 0.0);
        }

        #[test]
        fn operator_norm_submultiplicative(
            a in proptest::collection::vec(-2.0f64..2.0, 9),
            b in proptest::collection::vec(-2.0f64..2.0, 9),
            w1 in proptest::collection::vec(0.2f64..2.0, 3),
            w2 in proptest::collection::vec(0.2f64..2.0, 3),
        ) {
            let ea = DMatrix::from_row_slice(3, 3, &a);
            let eb = DMatrix::from_row_slice(3, 3, &b);
            let n1 = BaseNorm::L1Weighted { weights: w1 };
            let n2 = BaseNorm::L1Weighted { weights: w2 };
            for (x, y, z) in [
                (&n1, &n2, &BaseNorm::Linf),
                (&BaseNorm::Linf, &BaseNorm::Linf, &BaseNorm::Linf),
                (&BaseNorm::L2, &BaseNorm::L2, &BaseNorm::L2),
                (&BaseNorm::Linf, &n1, &n2),
            ] {
                let ab = induced_operator_norm(&(&ea * &eb), x, z).unwrap();
                let na = induced_operator_norm(&ea, y, z).unwrap();
                let nb = induced_operator_norm(&eb, x, y).unwrap();
                prop_assert!(ab <= na * nb + 1e-9);
            }
        }

        #[test]
        fn operator_norm_bounds_every_vector(
            a in proptest::collection::vec(-2.0f64..2.0, 6),
            u in proptest::collection::vec(-1.0f64..1.0, 3),
        ) {
            let e = DMatrix::from_row_slice(2, 3, &a);
            let w = BaseNorm::L1Weighted { weights: vec![0.5, 1.0, 2.0] };
            for (inp, out) in [(&BaseNorm::Linf, &BaseNorm::l1(2)), (&w, &BaseNorm::L2), (&BaseNorm::L2, &BaseNorm::Linf)] {
                let op = induced_operator_norm(&e, inp, out).unwrap();
                let eu: Vec<f64> = (0..2).map(|i| (0..3).map(|j| e[(i, j)] * u[j]).sum()).collect();
                prop_assert!(out.norm(&eu) <= op * inp.norm(&u) + 1e-9);
            }
        }

        #[test]
        fn bilinear_norm_is_homogeneous(
            vals in proptest::collection::vec(-2.0f64..2.0, 12),
            c in -4.0f64..4.0,
        ) {
            let mut q = Bilinear::zeros(2, 2, 3);
            let mut it = vals.iter();
            for k in 0..2 { for i in 0..2 { for j in 0..3 { q.set(k, i, j, *it.next().unwrap()); } } }
            let l = BaseNorm::L1Weighted { weights: vec![1.0, 0.3] };
            let r = BaseNorm::Linf;
            let out = BaseNorm::l1(2);
            let base = induced_bilinear_norm(&q, &l, &r, &out).unwrap();
            let scaled = induced_bilinear_norm(&q.scaled(c), &l, &r, &out).unwrap();
            prop_assert!((scaled - c.abs() * base).abs() <= 1e-9 * (1.0 + base));
        }
    }
}
