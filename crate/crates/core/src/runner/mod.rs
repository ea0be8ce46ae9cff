//! Batch front end: one [`RunConfig`] in, one [`RunDocument`] out.

mod config;

use std::io::Write;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

pub use config::{Command, Format, McConfig, OutputConfig, RegionConfig, RunConfig};

use crate::certify::{certify, CertifyOptions, ContractionReport, JointOptions, RegionSampler};
use crate::cost::{CostFunction, CostRegistry};
use crate::error::{check_dim, Error, Result};
use crate::finsler::FinslerWeight;
use crate::model::{validate_derivatives, DerivTolerance, DerivativeReport, StateDomain, SystemModel};
use crate::oracle::{fd_gradient, OracleOptions};
use crate::rng::RngStream;
use crate::sensitivity::{batch_gradient, BatchOptions, GradientEstimate};
use crate::zoo::ModelVisitor;

pub const SCHEMA_VERSION: u32 = 1;

/// `|Δmean| / combined stderr` at or above this counts as disagreement.
pub const Z_THRESHOLD: f64 = 3.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub forward: GradientEstimate,
    pub oracle: GradientEstimate,
    /// Absent when either side has no standard error.
    pub z_scores: Vec<Option<f64>>,
    pub threshold: f64,
    /// "agree", "disagree" or "undetermined".
    pub verdict: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Validation {
    pub theta: Vec<f64>,
    pub points: Vec<Vec<f64>>,
    pub report: DerivativeReport,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RunResult {
    Certify(Box<ContractionReport>),
    Estimate(GradientEstimate),
    Oracle(GradientEstimate),
    Compare(Box<Comparison>),
    Validate(Validation),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunDocument {
    pub schema_version: u32,
    pub version: String,
    pub command: Command,
    pub seed: u64,
    pub wall_time_s: f64,
    pub config: RunConfig,
    pub result: RunResult,
}

impl RunDocument {
    /// Exit status for a completed run: derivative checks that fail count as
    /// a numerical failure.
    pub fn exit_status(&self) -> i32 {
        match &self.result {
            RunResult::Validate(v) if !v.report.passed => 4,
            _ => 0,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("run document serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("bad result document: {e}")))
    }

    pub fn write(&self, format: Format, out: &mut dyn Write) -> std::io::Result<()> {
        match format {
            Format::Json => writeln!(out, "{}", self.to_json()),
            Format::Csv => write_csv(&self.result, out),
        }
    }
}

fn csv_row(out: &mut dyn Write, cells: impl IntoIterator<Item = String>) -> std::io::Result<()> {
    writeln!(out, "{}", cells.into_iter().collect::<Vec<_>>().join(","))
}

fn write_estimate_rows(out: &mut dyn Write, e: &GradientEstimate, with_method: bool) -> std::io::Result<()> {
    for (r, row) in e.per_replicate.iter().enumerate() {
        let lead = with_method.then(|| e.method.clone());
        csv_row(out, lead.into_iter().chain([r.to_string()]).chain(row.iter().map(|v| v.to_string())))?;
    }
    Ok(())
}

fn write_csv(result: &RunResult, out: &mut dyn Write) -> std::io::Result<()> {
    match result {
        RunResult::Estimate(e) | RunResult::Oracle(e) => {
            let nt = e.mean.len();
            csv_row(out, ["replicate".to_string()].into_iter().chain((0..nt).map(|j| format!("g{j}"))))?;
            write_estimate_rows(out, e, false)
        }
        RunResult::Compare(c) => {
            let nt = c.forward.mean.len();
            csv_row(
                out,
                ["method".to_string(), "replicate".into()]
                    .into_iter()
                    .chain((0..nt).map(|j| format!("g{j}"))),
            )?;
            write_estimate_rows(out, &c.forward, true)?;
            write_estimate_rows(out, &c.oracle, true)
        }
        RunResult::Certify(r) => {
            let pts = &r.metadata.points;
            let (nx, nt) = pts.first().map(|p| (p.x.len(), p.theta.len())).unwrap_or((0, 0));
            let coeffs = [
                ("L_X", Some(&r.k_x)),
                ("L_Theta", Some(&r.k_theta)),
                ("L_X2", r.k_x2.as_ref()),
                ("L_Theta2", r.k_theta2.as_ref()),
                ("L_XTheta", r.k_xtheta.as_ref()),
            ];
            let header = (0..nx)
                .map(|i| format!("x{i}"))
                .chain((0..nt).map(|j| format!("theta{j}")))
                .chain(coeffs.iter().filter(|c| c.1.is_some()).map(|c| c.0.to_string()));
            csv_row(out, header)?;
            for (i, p) in pts.iter().enumerate() {
                let vals = coeffs.iter().filter_map(|c| c.1).map(|c| c.per_point[i].to_string());
                csv_row(
                    out,
                    p.x.iter().chain(&p.theta).map(|v| v.to_string()).chain(vals),
                )?;
            }
            Ok(())
        }
        RunResult::Validate(v) => {
            csv_row(out, ["check", "max_rel_error", "tolerance", "passed"].map(String::from))?;
            for c in &v.report.checks {
                csv_row(
                    out,
                    [c.name.clone(), c.max_rel_error.to_string(), c.tolerance.to_string(), c.passed.to_string()],
                )?;
            }
            Ok(())
        }
    }
}

/// Runs configs, with optional extra named costs.
#[derive(Default)]
pub struct Runner {
    costs: Vec<Arc<dyn CostFunction>>,
}

struct Dispatch<'a> {
    cfg: &'a RunConfig,
    theta: Vec<f64>,
    costs: &'a [Arc<dyn CostFunction>],
}

impl Dispatch<'_> {
    fn cost(&self, state_dim: usize) -> Result<Arc<dyn CostFunction>> {
        let mut reg = CostRegistry::new(state_dim);
        for c in self.costs {
            reg.register(c.clone());
        }
        reg.lookup(&self.cfg.cost)
    }

    fn region(&self, domain: &StateDomain, param_dim: usize) -> Result<RegionSampler> {
        let cfg = self.cfg;
        let (lo, hi) = match (&cfg.region, domain) {
            (Some(r), _) => (r.lo.clone(), r.hi.clone()),
            (None, StateDomain::Box { lo, hi }) => (lo.clone(), hi.clone()),
            (None, StateDomain::Whole { .. }) => {
                return Err(Error::Config(
                    "the state space is unbounded; give a [region] with lo and hi".into(),
                ))
            }
        };
        let (tlo, thi) = match cfg.region.as_ref().and_then(|r| r.theta_lo.clone().zip(r.theta_hi.clone())) {
            Some(b) => b,
            None => (self.theta.clone(), self.theta.clone()),
        };
        check_dim("region.theta_lo", tlo.len(), param_dim)?;
        let sampler = RegionSampler::uniform(lo, hi, tlo, thi, cfg.mc.n_points, cfg.seed);
        Ok(if cfg.region.as_ref().is_some_and(|r| r.grid) {
            sampler.grid()
        } else {
            sampler
        })
    }

    fn estimate<M: SystemModel>(&self, model: &M, cost: &dyn CostFunction) -> Result<GradientEstimate>
    where
        M::Noise: Sync,
    {
        let mut opts = BatchOptions::new(self.cfg.n_steps, self.cfg.replicates, self.cfg.seed);
        opts.burn_in = self.cfg.burn_in;
        batch_gradient(model, &self.theta, cost, &opts)
    }

    fn oracle<M: SystemModel>(&self, model: &M, cost: &dyn CostFunction, seed: u64) -> Result<GradientEstimate>
    where
        M::Noise: Sync,
    {
        let mut opts = OracleOptions::new(self.cfg.n_steps, self.cfg.replicates, seed);
        opts.burn_in = self.cfg.burn_in;
        let h = self.cfg.fd_h.map(|h| vec![h; self.theta.len()]);
        fd_gradient(model, &self.theta, cost, h.as_deref(), &opts, self.cfg.crn)
    }
}

fn z_scores(a: &GradientEstimate, b: &GradientEstimate) -> Vec<Option<f64>> {
    (0..a.mean.len())
        .map(|j| {
            let sa = a.stderr.as_ref()?[j];
            let sb = b.stderr.as_ref()?[j];
            let diff = (a.mean[j] - b.mean[j]).abs();
            let s = (sa * sa + sb * sb).sqrt();
            Some(if s == 0.0 {
                if diff == 0.0 {
                    0.0
                } else {
                    f64::MAX
                }
            } else {
                diff / s
            })
        })
        .collect()
}

impl ModelVisitor for Dispatch<'_> {
    type Output = Result<RunResult>;

    fn visit<M, W>(self, model: &M, weight: &W) -> Result<RunResult>
    where
        M: SystemModel,
        M::Noise: Sync,
        W: FinslerWeight,
    {
        check_dim("theta", self.theta.len(), model.param_dim())?;
        model.check_params(&self.theta)?;
        let cfg = self.cfg;
        Ok(match cfg.command {
            Command::Estimate => RunResult::Estimate(self.estimate(model, &*self.cost(model.state_dim())?)?),
            Command::Oracle => RunResult::Oracle(self.oracle(model, &*self.cost(model.state_dim())?, cfg.seed)?),
            Command::Compare => {
                let cost = self.cost(model.state_dim())?;
                let forward = self.estimate(model, &*cost)?;
                // the oracle gets its own noise so the two errors are independent
                let oracle = self.oracle(model, &*cost, cfg.seed.wrapping_add(1))?;
                let z = z_scores(&forward, &oracle);
                let verdict = if z.iter().any(|v| v.is_none()) {
                    "undetermined"
                } else if z.iter().all(|v| v.unwrap() < Z_THRESHOLD) {
                    "agree"
                } else {
                    "disagree"
                };
                RunResult::Compare(Box::new(Comparison {
                    forward,
                    oracle,
                    z_scores: z,
                    threshold: Z_THRESHOLD,
                    verdict: verdict.into(),
                }))
            }
            Command::Certify => {
                let region = self.region(model.state_domain(), model.param_dim())?;
                let opts = CertifyOptions {
                    n_noise: cfg.mc.n_noise,
                    joint: Some(JointOptions {
                        seed: cfg.seed,
                        ..Default::default()
                    }),
                };
                RunResult::Certify(Box::new(certify(model, weight, &region, &opts)?))
            }
            Command::Validate => {
                let region = self.region(model.state_domain(), model.param_dim())?;
                let points = region.states(model.state_domain())?;
                let mut rng = RngStream::new(cfg.seed, 0);
                let report = validate_derivatives(model, &self.theta, &points, &mut rng, DerivTolerance::default())?;
                RunResult::Validate(Validation {
                    theta: self.theta.clone(),
                    points,
                    report,
                })
            }
        })
    }
}

impl Runner {
    pub fn new() -> Self {
        Self::default()
    }

    /// Makes `cost` available under `cost.name()`.
    pub fn register_cost(&mut self, cost: Arc<dyn CostFunction>) {
        self.costs.push(cost);
    }

    pub fn run(&self, cfg: &RunConfig) -> Result<RunDocument> {
        cfg.validate()?;
        let start = Instant::now();
        let theta = cfg.model.theta_vector(&cfg.theta)?;
        let result = cfg.model.visit(Dispatch {
            cfg,
            theta,
            costs: &self.costs,
        })??;
        Ok(RunDocument {
            schema_version: SCHEMA_VERSION,
            version: crate::VERSION.to_string(),
            command: cfg.command,
            seed: cfg.seed,
            wall_time_s: start.elapsed().as_secs_f64(),
            config: cfg.clone(),
            result,
        })
    }
}

/// [`Runner::run`] with the built-in costs only.
pub fn run(cfg: &RunConfig) -> Result<RunDocument> {
    Runner::new().run(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ar1_config(command: &str) -> RunConfig {
        RunConfig::from_toml(&format!(
            "command = \"{command}\"\ntheta = [0.3]\nn_steps = 20000\nburn_in = 2000\nreplicates = 4\nseed = 5\n\
             [model]\nkind = \"ar1\"\n[region]\nlo = [-2.0]\nhi = [2.0]\n[mc]\nn_noise = 64\nn_points = 16\n"
        ))
        .unwrap()
    }

    #[test]
    fn compare_agrees_on_linear_model() {
        let doc = run(&ar1_config("compare")).unwrap();
        let RunResult::Compare(c) = &doc.result else { panic!() };
        assert_eq!(c.verdict, "agree");
        assert!((c.forward.mean[0] - 2.0).abs() < 1e-9);
        assert!((c.oracle.mean[0] - 2.0).abs() < 1e-6);
        assert_eq!(c.oracle.seed, 6);
        assert_eq!(doc.schema_version, 1);
    }

    #[test]
    fn document_reproduces_run() {
        let doc = run(&ar1_config("estimate")).unwrap();
        let back = RunDocument::from_json(&doc.to_json()).unwrap();
        let again = run(&back.config).unwrap();
        let (RunResult::Estimate(a), RunResult::Estimate(b)) = (&doc.result, &again.result) else { panic!() };
        assert_eq!(a, b);
        assert_eq!(back.seed, 5);
    }

    #[test]
    fn csv_has_one_row_per_replicate() {
        let doc = run(&ar1_config("oracle")).unwrap();
        let mut buf = Vec::new();
        doc.write(Format::Csv, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 5);
        assert!(text.starts_with("replicate,g0"));
    }

    #[test]
    fn certify_and_validate_on_linear_model() {
        let doc = run(&ar1_config("certify")).unwrap();
        let RunResult::Certify(r) = &doc.result else { panic!() };
        assert!(r.contraction_ok && (r.k_x.sup - 0.5).abs() < 1e-12);
        let mut buf = Vec::new();
        doc.write(Format::Csv, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 17);
        let doc = run(&ar1_config("validate")).unwrap();
        assert_eq!(doc.exit_status(), 0);
    }

    #[test]
    fn unknown_cost_lists_names() {
        let mut cfg = ar1_config("estimate");
        cfg.cost = "foo".into();
        let e = run(&cfg).unwrap_err();
        assert_eq!(e.exit_status(), 2);
        assert!(e.to_string().contains("quadratic"));
    }

    #[test]
    fn unbounded_state_space_needs_region() {
        let mut cfg = ar1_config("certify");
        cfg.region = None;
        assert_eq!(run(&cfg).unwrap_err().exit_status(), 2);
    }
}
