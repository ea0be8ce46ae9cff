//! Scalar autoregression `x' = a x + θ + ε ξ`, the analytic reference model.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::finsler::IdentityWeight;
use crate::model::{Bilinear, StateDomain, SystemModel};
use crate::norm::BaseNorm;
use crate::rng::RngStream;

/// Noise law. Both choices have zero mean and unit variance, so `ε` is the
/// noise standard deviation either way.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ar1Noise {
    #[default]
    Gaussian,
    /// Uniform on `[-√3, √3]`.
    Uniform,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Ar1Config {
    pub a: f64,
    pub eps: f64,
    pub noise: Ar1Noise,
}

impl Default for Ar1Config {
    fn default() -> Self {
        Self {
            a: 0.5,
            eps: 0.1,
            noise: Ar1Noise::Gaussian,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Ar1 {
    cfg: Ar1Config,
    domain: StateDomain,
}

impl Ar1 {
    pub fn config(&self) -> &Ar1Config {
        &self.cfg
    }

    /// `θ / (1 − a)`.
    pub fn stationary_mean(&self, theta: f64) -> f64 {
        theta / (1.0 - self.cfg.a)
    }

    /// `θ² / (1 − a)² + ε² / (1 − a²)`.
    pub fn stationary_second_moment(&self, theta: f64) -> f64 {
        let a = self.cfg.a;
        let m = self.stationary_mean(theta);
        m * m + self.cfg.eps * self.cfg.eps / (1.0 - a * a)
    }
}

/// Builds the model with identity weights and the sup norm.
pub fn make_ar1(cfg: Ar1Config) -> Result<(Ar1, IdentityWeight)> {
    if !(cfg.a.abs() < 1.0) {
        return Err(Error::Precondition(format!(
            "autoregression needs |a| < 1, got a = {}",
            cfg.a
        )));
    }
    if !(cfg.eps >= 0.0 && cfg.eps.is_finite()) {
        return Err(Error::Precondition(format!("noise scale must satisfy ε >= 0, got {}", cfg.eps)));
    }
    let weight = IdentityWeight::new(1, 1, BaseNorm::Linf, BaseNorm::Linf)?;
    Ok((
        Ar1 {
            cfg,
            domain: StateDomain::Whole { dim: 1 },
        },
        weight,
    ))
}

impl SystemModel for Ar1 {
    type Noise = f64;

    fn name(&self) -> &str {
        "ar1"
    }

    fn state_dim(&self) -> usize {
        1
    }

    fn param_dim(&self) -> usize {
        1
    }

    fn state_domain(&self) -> &StateDomain {
        &self.domain
    }

    fn default_state(&self) -> Vec<f64> {
        vec![0.0]
    }

    fn new_noise(&self) -> f64 {
        0.0
    }

    fn sample_noise(&self, rng: &mut RngStream, noise: &mut f64) {
        *noise = match self.cfg.noise {
            Ar1Noise::Gaussian => rng.sample(StandardNormal),
            Ar1Noise::Uniform => {
                let r = 3f64.sqrt();
                rng.random_range(-r..r)
            }
        };
    }

    fn step(&self, x: &[f64], noise: &f64, theta: &[f64], out: &mut [f64]) {
        out[0] = self.cfg.a * x[0] + theta[0] + self.cfg.eps * noise;
    }

    fn jac_x(&self, _x: &[f64], _noise: &f64, _theta: &[f64], out: &mut DMatrix<f64>) {
        out[(0, 0)] = self.cfg.a;
    }

    fn jac_theta(&self, _x: &[f64], _noise: &f64, _theta: &[f64], out: &mut DMatrix<f64>) {
        out[(0, 0)] = 1.0;
    }

    fn hess_xx(&self, _x: &[f64], _noise: &f64, _theta: &[f64], out: &mut Bilinear) -> Result<()> {
        out.fill_zero();
        Ok(())
    }

    fn hess_thetatheta(&self, _x: &[f64], _noise: &f64, _theta: &[f64], out: &mut Bilinear) -> Result<()> {
        out.fill_zero();
        Ok(())
    }

    fn hess_xtheta(&self, _x: &[f64], _noise: &f64, _theta: &[f64], out: &mut Bilinear) -> Result<()> {
        out.fill_zero();
        Ok(())
    }
}
