//! Smooth cost functions `e: X → R` and the name registry used by the
//! command line front end.
//!
//! The estimator is valid for costs whose first and second derivatives are
//! bounded in the weighted norms of the model's Finsler weight:
//!
//! * `coordinate(i)` has constant gradient, so it qualifies for every
//!   bundled model (all weights satisfy `‖A(x)^{-1}‖ ≤ 1`).
//! * `quadratic` has an unbounded gradient. It qualifies only where the
//!   weight grows at least linearly (true for the exponential weights of the
//!   skew-product model). For the identity-weighted models it is outside
//!   that class and is checked against the finite-difference oracle
//!   empirically instead.

use std::collections::BTreeMap;
use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

pub trait CostFunction: Send + Sync {
    fn name(&self) -> String;
    fn eval(&self, x: &[f64]) -> f64;
    /// Writes `∂e/∂x` into `out`.
    fn grad(&self, x: &[f64], out: &mut [f64]);
    fn hess(&self, _x: &[f64]) -> Option<DMatrix<f64>> {
        None
    }
}

/// `e(x) = x_i`.
#[derive(Clone, Copy, Debug)]
pub struct Coordinate(pub usize);

impl CostFunction for Coordinate {
    fn name(&self) -> String {
        format!("coordinate({})", self.0)
    }

    fn eval(&self, x: &[f64]) -> f64 {
        x[self.0]
    }

    fn grad(&self, _x: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        out[self.0] = 1.0;
    }

    fn hess(&self, x: &[f64]) -> Option<DMatrix<f64>> {
        Some(DMatrix::zeros(x.len(), x.len()))
    }
}

/// `e(x) = Σ x_i²`.
#[derive(Clone, Copy, Debug)]
pub struct Quadratic;

impl CostFunction for Quadratic {
    fn name(&self) -> String {
        "quadratic".into()
    }

    fn eval(&self, x: &[f64]) -> f64 {
        x.iter().map(|v| v * v).sum()
    }

    fn grad(&self, x: &[f64], out: &mut [f64]) {
        for (o, v) in out.iter_mut().zip(x) {
            *o = 2.0 * v;
        }
    }

    fn hess(&self, x: &[f64]) -> Option<DMatrix<f64>> {
        Some(DMatrix::identity(x.len(), x.len()) * 2.0)
    }
}

/// Name → cost lookup. `coordinate(i)` is parsed for any `i < state_dim`;
/// other names must be registered.
#[derive(Clone)]
pub struct CostRegistry {
    state_dim: usize,
    custom: BTreeMap<String, Arc<dyn CostFunction>>,
}

impl CostRegistry {
    pub fn new(state_dim: usize) -> Self {
        Self {
            state_dim,
            custom: BTreeMap::new(),
        }
    }

    pub fn register(&mut self, cost: Arc<dyn CostFunction>) {
        self.custom.insert(cost.name(), cost);
    }

    pub fn names(&self) -> Vec<String> {
        let mut names = vec![
            format!("coordinate(0..{})", self.state_dim),
            "quadratic".to_string(),
        ];
        names.extend(self.custom.keys().cloned());
        names
    }

    pub fn lookup(&self, name: &str) -> Result<Arc<dyn CostFunction>> {
        let trimmed = name.trim();
        if let Some(inner) = trimmed
            .strip_prefix("coordinate(")
            .and_then(|s| s.strip_suffix(')'))
        {
            let i: usize = inner
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("bad coordinate index in cost '{name}'")))?;
            if i >= self.state_dim {
                return Err(Error::Config(format!(
                    "cost '{name}' indexes coordinate {i} but the state has dimension {}",
                    self.state_dim
                )));
            }
            return Ok(Arc::new(Coordinate(i)));
        }
        if trimmed == "quadratic" {
            return Ok(Arc::new(Quadratic));
        }
        self.custom.get(trimmed).cloned().ok_or_else(|| {
            Error::Config(format!(
                "unknown cost '{name}'; registered: {}",
                self.names().join(", ")
            ))
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn coordinate_lookup() {
        let reg = CostRegistry::new(2);
        let c = reg.lookup("coordinate(0)").unwrap();
        let mut g = [9.0, 9.0];
        c.grad(&[3.0, 5.0], &mut g);
        assert_eq!(c.eval(&[3.0, 5.0]), 3.0);
        assert_eq!(g, [1.0, 0.0]);
        assert!(reg.lookup("coordinate(2)").is_err());
    }

    #[test]
    fn quadratic_lookup() {
        let reg = CostRegistry::new(2);
        let c = reg.lookup("quadratic").unwrap();
        let mut g = [0.0; 2];
        c.grad(&[1.0, 2.0], &mut g);
        assert_eq!(c.eval(&[1.0, 2.0]), 5.0);
        assert_eq!(g, [2.0, 4.0]);
        assert_eq!(c.hess(&[1.0, 2.0]).unwrap(), DMatrix::identity(2, 2) * 2.0);
    }

    #[test]
    fn unknown_name_lists_registry() {
        let reg = CostRegistry::new(1);
        let err = reg.lookup("foo").err().unwrap().to_string();
        assert!(err.contains("foo"));
        assert!(err.contains("quadratic"));
        assert!(err.contains("coordinate"));
    }

    #[test]
    fn custom_costs_register() {
        struct Cube;
        impl CostFunction for Cube {
            fn name(&self) -> String {
                "cube".into()
            }
            fn eval(&self, x: &[f64]) -> f64 {
                x[0].powi(3)
            }
            fn grad(&self, x: &[f64], out: &mut [f64]) {
                out[0] = 3.0 * x[0] * x[0];
            }
        }
        let mut reg = CostRegistry::new(1);
        reg.register(Arc::new(Cube));
        assert_eq!(reg.lookup("cube").unwrap().eval(&[2.0]), 8.0);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let pts = [[0.3, -1.7], [2.0, 0.5], [-4.0, 10.0]];
        for cost in [&Quadratic as &dyn CostFunction, &Coordinate(1)] {
            for x in &pts {
                let mut g = [0.0; 2];
                cost.grad(x, &mut g);
                for j in 0..2 {
                    let h = 1e-6 * (1.0 + x[j].abs());
                    let mut xp = *x;
                    let mut xm = *x;
                    xp[j] += h;
                    xm[j] -= h;
                    let fd = (cost.eval(&xp) - cost.eval(&xm)) / (2.0 * h);
                    assert!((fd - g[j]).abs() / fd.abs().max(1.0) < 1e-5);
                }
            }
        }
    }
}
