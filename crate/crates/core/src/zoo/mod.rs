//! Bundled models and their weights.

pub mod ar1;
pub mod skew_product;
pub mod stochastic_nn;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::finsler::FinslerWeight;
use crate::model::SystemModel;

pub use ar1::{make_ar1, Ar1, Ar1Config, Ar1Noise};
pub use skew_product::{make_skew_product, SkewProduct, SkewProductConfig, SkewWeight};
pub use stochastic_nn::{make_stochastic_nn, StochasticNn, StochasticNnConfig};

/// A bundled model selected by its `kind` key.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelConfig {
    Ar1(Ar1Config),
    StochasticNn(StochasticNnConfig),
    SkewProduct(SkewProductConfig),
}

/// A parameter given either as a flat vector or, for the network, as an
/// `N×N` weight matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ThetaSpec {
    Vector(Vec<f64>),
    Matrix(Vec<Vec<f64>>),
}

/// Work to run against a concrete model/weight pair.
pub trait ModelVisitor {
    type Output;
    fn visit<M, W>(self, model: &M, weight: &W) -> Self::Output
    where
        M: SystemModel,
        M::Noise: Sync,
        W: FinslerWeight;
}

impl ModelConfig {
    pub fn kind(&self) -> &'static str {
        match self {
            ModelConfig::Ar1(_) => "ar1",
            ModelConfig::StochasticNn(_) => "stochastic_nn",
            ModelConfig::SkewProduct(_) => "skew_product",
        }
    }

    /// Builds the model and hands it to `v`.
    pub fn visit<V: ModelVisitor>(&self, v: V) -> Result<V::Output> {
        Ok(match self {
            ModelConfig::Ar1(c) => {
                let (m, w) = make_ar1(c.clone())?;
                v.visit(&m, &w)
            }
            ModelConfig::StochasticNn(c) => {
                let (m, w) = make_stochastic_nn(c.clone())?;
                v.visit(&m, &w)
            }
            ModelConfig::SkewProduct(c) => {
                let (m, w) = make_skew_product(c.clone())?;
                v.visit(&m, &w)
            }
        })
    }

    /// Flattens a parameter spec into the model's parameter vector.
    pub fn theta_vector(&self, spec: &ThetaSpec) -> Result<Vec<f64>> {
        match (self, spec) {
            (_, ThetaSpec::Vector(v)) => Ok(v.clone()),
            (ModelConfig::StochasticNn(c), ThetaSpec::Matrix(w)) => {
                make_stochastic_nn(c.clone())?.0.theta_from_matrix(w)
            }
            (other, ThetaSpec::Matrix(_)) => Err(Error::Config(format!(
                "model '{}' takes theta as a vector",
                other.kind()
            ))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_parses_from_toml() {
        let c: ModelConfig = toml::from_str("kind = \"skew_product\"\neps = 0.02").unwrap();
        match c {
            ModelConfig::SkewProduct(s) => {
                assert_eq!(s.eps, 0.02);
                assert_eq!(s.p1, 1.0);
            }
            _ => panic!("wrong kind"),
        }
        let c: ModelConfig = toml::from_str("kind = \"stochastic_nn\"\nrho = 0.25").unwrap();
        assert_eq!(c.kind(), "stochastic_nn");
    }

    #[test]
    fn unknown_model_fields_rejected() {
        assert!(toml::from_str::<ModelConfig>("kind = \"ar1\"\nalpha = 0.5").is_err());
    }

    #[test]
    fn matrix_theta_only_for_network() {
        let nn = ModelConfig::StochasticNn(StochasticNnConfig {
            nodes: 2,
            ..Default::default()
        });
        let m = ThetaSpec::Matrix(vec![vec![1.0, 2.0], vec![3.0, 4.0]]);
        assert_eq!(nn.theta_vector(&m).unwrap(), vec![1.0, 2.0, 3.0, 4.0]);
        assert!(ModelConfig::Ar1(Ar1Config::default()).theta_vector(&m).is_err());
    }
}
