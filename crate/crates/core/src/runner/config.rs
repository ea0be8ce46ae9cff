use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::zoo::{ModelConfig, ThetaSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    Certify,
    Estimate,
    Oracle,
    Compare,
    Validate,
}

impl Command {
    pub fn as_str(self) -> &'static str {
        match self {
            Command::Certify => "certify",
            Command::Estimate => "estimate",
            Command::Oracle => "oracle",
            Command::Compare => "compare",
            Command::Validate => "validate",
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    #[default]
    Json,
    Csv,
}

/// Box in state space, optionally with a parameter box. Without
/// `theta_lo`/`theta_hi` the region is taken at the configured `theta`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionConfig {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta_lo: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta_hi: Option<Vec<f64>>,
    #[serde(default)]
    pub grid: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McConfig {
    pub n_noise: usize,
    pub n_points: usize,
}

impl Default for McConfig {
    fn default() -> Self {
        Self {
            n_noise: crate::certify::DEFAULT_N_NOISE,
            n_points: crate::certify::DEFAULT_N_POINTS,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<String>,
    pub format: Format,
}

fn default_cost() -> String {
    "coordinate(0)".into()
}

fn default_n_steps() -> usize {
    100_000
}

fn default_replicates() -> usize {
    8
}

fn default_true() -> bool {
    true
}

/// One run, as read from a TOML file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub command: Command,
    pub model: ModelConfig,
    pub theta: ThetaSpec,
    #[serde(default = "default_cost")]
    pub cost: String,
    #[serde(default = "default_n_steps")]
    pub n_steps: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub burn_in: Option<usize>,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    #[serde(default)]
    pub seed: u64,
    /// Scalar finite-difference step for every component; per-component
    /// default when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fd_h: Option<f64>,
    #[serde(default = "default_true")]
    pub crn: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub region: Option<RegionConfig>,
    #[serde(default)]
    pub mc: McConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Parses `text` with `command` set (or replaced) from outside, as the
    /// command line front end does with its subcommand.
    pub fn from_toml_with_command(text: &str, command: Command) -> Result<Self> {
        let mut table: toml::Table = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        table.insert("command".into(), toml::Value::String(command.as_str().into()));
        let cfg: RunConfig = table.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    /// Field-level checks that need no model.
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("n_steps", self.n_steps),
            ("replicates", self.replicates),
            ("mc.n_noise", self.mc.n_noise),
            ("mc.n_points", self.mc.n_points),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if let Some(b) = self.burn_in {
            if b >= self.n_steps {
                return Err(Error::Config(format!(
                    "burn_in ({b}) must be smaller than n_steps ({})",
                    self.n_steps
                )));
            }
        }
        if let Some(h) = self.fd_h {
            if !(h.is_finite() && h > 0.0) {
                return Err(Error::Config(format!("fd_h must be a positive number, got {h}")));
            }
        }
        if let Some(r) = &self.region {
            if r.theta_lo.is_some() != r.theta_hi.is_some() {
                return Err(Error::Config("region.theta_lo and region.theta_hi must be given together".into()));
            }
        }
        Ok(())
    }
}
