//! Two-dimensional skew product
//!
//! `f₁ = ½ x₁ + θ + ε ξ₁`, `f₂ = ½ x₁ x₂ + ε ξ₂`,
//!
//! which does not contract in any constant norm but does under the weights
//! `A(x) = diag(g₁(x), g₂(x))`, `B(x) = g₁(x)` with
//! `g₁(x) = e^{2|x₁|}(1 + |x₂|)`, `g₂(x) = e^{2|x₁|}` and base norm
//! `p₁|u| + p₂|v|`.
//!
//! Default noise: `ξ₁ ~ U[−½, ½]`, `ξ₂ ~ N(0, 1)`.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::finsler::FinslerWeight;
use crate::model::{Bilinear, StateDomain, SystemModel};
use crate::norm::BaseNorm;
use crate::rng::RngStream;

/// Half-width of the open parameter interval, `¼ log 2`.
pub fn theta_limit() -> f64 {
    0.25 * std::f64::consts::LN_2
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SkewProductConfig {
    pub eps: f64,
    pub p1: f64,
    pub p2: f64,
    /// Monte Carlo draws used to check the noise moment condition.
    pub moment_samples: usize,
    pub moment_seed: u64,
}

impl Default for SkewProductConfig {
    fn default() -> Self {
        Self {
            eps: 0.05,
            p1: 1.0,
            p2: 0.1,
            moment_samples: 100_000,
            moment_seed: 0,
        }
    }
}

/// Monte Carlo estimates behind the construction check.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct NoiseMoments {
    /// `(E ξ₂²)^{1/2}`.
    pub q: f64,
    /// `(E exp(4ε|ξ₁|))^{1/2}`.
    pub r: f64,
}

#[derive(Clone, Debug)]
pub struct SkewProduct {
    eps: f64,
    moments: NoiseMoments,
    domain: StateDomain,
}

#[derive(Clone, Debug)]
pub struct SkewWeight {
    p1: f64,
    p2: f64,
    norm_x: BaseNorm,
    norm_theta: BaseNorm,
}

#[inline]
fn g1(x: &[f64]) -> f64 {
    (2.0 * x[0].abs()).exp() * (1.0 + x[1].abs())
}

#[inline]
fn g2(x: &[f64]) -> f64 {
    (2.0 * x[0].abs()).exp()
}

fn sample_pair(rng: &mut RngStream) -> [f64; 2] {
    [rng.random_range(-0.5..0.5), rng.sample(StandardNormal)]
}

/// `E exp(c|ξ₁|)` for `ξ₁ ~ U[−½, ½]`.
pub fn uniform_abs_mgf(c: f64) -> f64 {
    if c == 0.0 {
        1.0
    } else {
        ((0.5 * c).exp() - 1.0) / (0.5 * c)
    }
}

pub fn estimate_moments(eps: f64, samples: usize, seed: u64) -> NoiseMoments {
    let mut rng = RngStream::new(seed, 0);
    let (mut s2, mut se) = (0.0, 0.0);
    for _ in 0..samples.max(1) {
        let [a, b] = sample_pair(&mut rng);
        s2 += b * b;
        se += (4.0 * eps * a.abs()).exp();
    }
    let n = samples.max(1) as f64;
    NoiseMoments {
        q: (s2 / n).sqrt(),
        r: (se / n).sqrt(),
    }
}

/// Builds the model and its weight after checking `ε < 1`,
/// `(1 + εQ) R < 2^{1/4}` (by Monte Carlo) and `1 + p₂/p₁ < 2^{1/4}`.
pub fn make_skew_product(cfg: SkewProductConfig) -> Result<(SkewProduct, SkewWeight)> {
    let quarter = 2f64.powf(0.25);
    if !(cfg.eps >= 0.0 && cfg.eps < 1.0) {
        return Err(Error::Precondition(format!("noise scale must satisfy 0 <= ε < 1, got {}", cfg.eps)));
    }
    if !(cfg.p1 > 0.0 && cfg.p2 > 0.0) {
        return Err(Error::Precondition(format!(
            "metric weights must be positive, got p1 = {}, p2 = {}",
            cfg.p1, cfg.p2
        )));
    }
    if 1.0 + cfg.p2 / cfg.p1 >= quarter {
        return Err(Error::Precondition(format!(
            "metric weight condition 1 + p2/p1 < 2^(1/4) fails: 1 + {}/{} = {}",
            cfg.p2,
            cfg.p1,
            1.0 + cfg.p2 / cfg.p1
        )));
    }
    let moments = estimate_moments(cfg.eps, cfg.moment_samples, cfg.moment_seed);
    let lhs = (1.0 + cfg.eps * moments.q) * moments.r;
    if lhs >= quarter {
        return Err(Error::Precondition(format!(
            "noise moment condition (1 + εQ) R < 2^(1/4) fails: (1 + {} · {}) · {} = {lhs}",
            cfg.eps, moments.q, moments.r
        )));
    }
    let weight = SkewWeight {
        p1: cfg.p1,
        p2: cfg.p2,
        norm_x: BaseNorm::l1_weighted(vec![cfg.p1, cfg.p2])?,
        norm_theta: BaseNorm::Linf,
    };
    Ok((
        SkewProduct {
            eps: cfg.eps,
            moments,
            domain: StateDomain::Whole { dim: 2 },
        },
        weight,
    ))
}

impl SkewProduct {
    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn moments(&self) -> NoiseMoments {
        self.moments
    }
}

impl SystemModel for SkewProduct {
    type Noise = [f64; 2];

    fn name(&self) -> &str {
        "skew_product"
    }

    fn state_dim(&self) -> usize {
        2
    }

    fn param_dim(&self) -> usize {
        1
    }

    fn state_domain(&self) -> &StateDomain {
        &self.domain
    }

    fn default_state(&self) -> Vec<f64> {
        vec![0.0, 0.0]
    }

    fn new_noise(&self) -> [f64; 2] {
        [0.0; 2]
    }

    fn sample_noise(&self, rng: &mut RngStream, noise: &mut [f64; 2]) {
        *noise = sample_pair(rng);
    }

    fn step(&self, x: &[f64], xi: &[f64; 2], theta: &[f64], out: &mut [f64]) {
        out[0] = 0.5 * x[0] + theta[0] + self.eps * xi[0];
        out[1] = 0.5 * x[0] * x[1] + self.eps * xi[1];
    }

    fn jac_x(&self, x: &[f64], _xi: &[f64; 2], _theta: &[f64], out: &mut DMatrix<f64>) {
        out[(0, 0)] = 0.5;
        out[(0, 1)] = 0.0;
        out[(1, 0)] = 0.5 * x[1];
        out[(1, 1)] = 0.5 * x[0];
    }

    fn jac_theta(&self, _x: &[f64], _xi: &[f64; 2], _theta: &[f64], out: &mut DMatrix<f64>) {
        out[(0, 0)] = 1.0;
        out[(1, 0)] = 0.0;
    }

    fn hess_xx(&self, _x: &[f64], _xi: &[f64; 2], _theta: &[f64], out: &mut Bilinear) -> Result<()> {
        out.fill_zero();
        out.set(1, 0, 1, 0.5);
        out.set(1, 1, 0, 0.5);
        Ok(())
    }

    fn hess_thetatheta(&self, _x: &[f64], _xi: &[f64; 2], _theta: &[f64], out: &mut Bilinear) -> Result<()> {
        out.fill_zero();
        Ok(())
    }

    fn hess_xtheta(&self, _x: &[f64], _xi: &[f64; 2], _theta: &[f64], out: &mut Bilinear) -> Result<()> {
        out.fill_zero();
        Ok(())
    }

    fn check_params(&self, theta: &[f64]) -> Result<()> {
        check_dim("theta", theta.len(), 1)?;
        let lim = theta_limit();
        if !(theta[0] > -lim && theta[0] < lim) {
            return Err(Error::Precondition(format!(
                "parameter must lie in the open interval (−¼ log 2, ¼ log 2) = ({}, {lim}), got {}",
                -lim, theta[0]
            )));
        }
        Ok(())
    }
}

impl SkewWeight {
    pub fn p1(&self) -> f64 {
        self.p1
    }

    pub fn p2(&self) -> f64 {
        self.p2
    }
}

impl FinslerWeight for SkewWeight {
    fn state_dim(&self) -> usize {
        2
    }

    fn param_dim(&self) -> usize {
        1
    }

    fn norm_x(&self) -> &BaseNorm {
        &self.norm_x
    }

    fn norm_theta(&self) -> &BaseNorm {
        &self.norm_theta
    }

    fn a(&self, x: &[f64]) -> DMatrix<f64> {
        DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![g1(x), g2(x)]))
    }

    fn b(&self, x: &[f64]) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, g1(x))
    }

    fn a_inv(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        Ok(DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0 / g1(x), 1.0 / g2(x)])))
    }

    fn b_inv(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        Ok(DMatrix::from_element(1, 1, 1.0 / g1(x)))
    }

    fn inv_a_bound(&self) -> f64 {
        1.0
    }

    /// `max{2/p₁, 1/p₂}`.
    fn b_lipschitz(&self) -> Option<f64> {
        Some((2.0 / self.p1).max(1.0 / self.p2))
    }

    fn a_norm(&self, x: &[f64], u: &[f64]) -> f64 {
        self.p1 * g1(x) * u[0].abs() + self.p2 * g2(x) * u[1].abs()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::finsler::{metric_upper, weighted_vector_norm, WeightSide};

    fn build() -> (SkewProduct, SkewWeight) {
        make_skew_product(SkewProductConfig::default()).unwrap()
    }

    #[test]
    fn weighted_norm_at_origin() {
        let (_, w) = build();
        let v = weighted_vector_norm(&w, &[0.0, 0.0], &[1.0, 1.0], WeightSide::A).unwrap();
        assert!((v - 1.1).abs() < 1e-15);
    }

    #[test]
    fn chord_along_first_axis() {
        let (_, w) = build();
        let got = metric_upper(&w, &[0.0, 0.0], &[1.0, 0.0], 64);
        let want = (2f64.exp() - 1.0) / 2.0;
        assert!((got - want).abs() < 1e-3, "{got} vs {want}");
    }

    #[test]
    fn moment_estimates_match_closed_forms() {
        let m = estimate_moments(0.05, 400_000, 11);
        assert!((m.q - 1.0).abs() < 0.01);
        assert!((m.r - uniform_abs_mgf(0.2).sqrt()).abs() < 1e-3);
    }

    #[test]
    fn construction_conditions_named() {
        let e = make_skew_product(SkewProductConfig {
            p2: 0.5,
            ..Default::default()
        })
        .unwrap_err();
        assert!(e.to_string().contains("p2/p1"));
        let e = make_skew_product(SkewProductConfig {
            eps: 0.9,
            ..Default::default()
        })
        .unwrap_err();
        assert!(e.to_string().contains("noise moment"));
        assert!(make_skew_product(SkewProductConfig {
            eps: 1.0,
            ..Default::default()
        })
        .is_err());
    }

    #[test]
    fn parameter_interval_is_open() {
        let (m, _) = build();
        assert!(m.check_params(&[0.1]).is_ok());
        assert!(m.check_params(&[theta_limit()]).is_err());
        assert!(m.check_params(&[-theta_limit()]).is_err());
    }

    #[test]
    fn jacobian_at_origin() {
        let (m, _) = build();
        let mut j = DMatrix::zeros(2, 2);
        m.jac_x(&[0.0, 0.0], &[0.3, -1.0], &[0.0], &mut j);
        assert_eq!(j, DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 0.0, 0.0]));
    }
}
