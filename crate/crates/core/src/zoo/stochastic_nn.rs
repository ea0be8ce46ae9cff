//! Recurrent network of logistic units whose connections drop out at
//! random each step:
//!
//! `f_i(x, ξ, θ) = σ(Σ_k ξ_ik θ_ik x_k + b_i)`, with `ξ_ik ~ Bernoulli(1 − ρ)`
//! independently per edge.
//!
//! The parameter vector holds one weight per edge, edges sorted row-major
//! by `(target i, source k)`. State space is `[0, 1]^N` with the sup norm
//! and identity weights; parameters are normed by their largest entry.

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::finsler::IdentityWeight;
use crate::model::{Bilinear, StateDomain, SystemModel};
use crate::norm::BaseNorm;
use crate::rng::RngStream;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StochasticNnConfig {
    /// Node count `N`.
    pub nodes: usize,
    /// `[i, k]` pairs: node `i` reads node `k`. Defaults to the full graph.
    pub edges: Option<Vec<[usize; 2]>>,
    /// Edge drop probability.
    pub rho: f64,
    /// Fixed biases `b`, zero by default.
    pub bias: Option<Vec<f64>>,
}

impl Default for StochasticNnConfig {
    fn default() -> Self {
        Self {
            nodes: 3,
            edges: None,
            rho: 0.5,
            bias: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct StochasticNn {
    nodes: usize,
    rho: f64,
    bias: Vec<f64>,
    /// `(target, source)` per parameter, sorted.
    edges: Vec<(usize, usize)>,
    /// Edges of row `i` are `row_start[i]..row_start[i + 1]`.
    row_start: Vec<usize>,
    domain: StateDomain,
}

#[inline]
fn logistic(u: f64) -> f64 {
    1.0 / (1.0 + (-u).exp())
}

/// Builds the network with identity weights, the sup norm on states and
/// the max-entry norm on parameters.
pub fn make_stochastic_nn(cfg: StochasticNnConfig) -> Result<(StochasticNn, IdentityWeight)> {
    let n = cfg.nodes;
    if n == 0 {
        return Err(Error::Config("network needs at least one node".into()));
    }
    if !(0.0..=1.0).contains(&cfg.rho) {
        return Err(Error::Precondition(format!("drop probability ρ must lie in [0, 1], got {}", cfg.rho)));
    }
    let mut edges: Vec<(usize, usize)> = match &cfg.edges {
        Some(list) => list.iter().map(|e| (e[0], e[1])).collect(),
        None => (0..n).flat_map(|i| (0..n).map(move |k| (i, k))).collect(),
    };
    if edges.is_empty() {
        return Err(Error::Config("network needs at least one edge".into()));
    }
    if let Some(bad) = edges.iter().find(|(i, k)| *i >= n || *k >= n) {
        return Err(Error::Config(format!("edge {bad:?} refers to a node outside 0..{n}")));
    }
    edges.sort_unstable();
    if edges.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::Config("duplicate edge in network".into()));
    }
    let bias = cfg.bias.clone().unwrap_or_else(|| vec![0.0; n]);
    check_dim("bias", bias.len(), n)?;
    let mut row_start = vec![0usize; n + 1];
    for &(i, _) in &edges {
        row_start[i + 1] += 1;
    }
    for i in 0..n {
        row_start[i + 1] += row_start[i];
    }
    let weight = IdentityWeight::new(n, edges.len(), BaseNorm::Linf, BaseNorm::Linf)?;
    Ok((
        StochasticNn {
            nodes: n,
            rho: cfg.rho,
            bias,
            edges,
            row_start,
            domain: StateDomain::unit_cube(n),
        },
        weight,
    ))
}

impl StochasticNn {
    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn edge_index(&self, i: usize, k: usize) -> Option<usize> {
        self.edges.binary_search(&(i, k)).ok()
    }

    /// Packs an `N×N` weight matrix into the edge-ordered parameter vector.
    /// Entries off the edge set must be zero.
    pub fn theta_from_matrix(&self, w: &[Vec<f64>]) -> Result<Vec<f64>> {
        check_dim("weight matrix rows", w.len(), self.nodes)?;
        for (i, row) in w.iter().enumerate() {
            check_dim("weight matrix row", row.len(), self.nodes)?;
            for (k, v) in row.iter().enumerate() {
                if *v != 0.0 && self.edge_index(i, k).is_none() {
                    return Err(Error::Config(format!("weight ({i}, {k}) = {v} is not on an edge")));
                }
            }
        }
        Ok(self.edges.iter().map(|&(i, k)| w[i][k]).collect())
    }

    pub fn theta_matrix(&self, theta: &[f64]) -> DMatrix<f64> {
        let mut w = DMatrix::zeros(self.nodes, self.nodes);
        for (e, &(i, k)) in self.edges.iter().enumerate() {
            w[(i, k)] = theta[e];
        }
        w
    }

    /// Max absolute row sum of the weight matrix.
    pub fn row_sum_norm(&self, theta: &[f64]) -> f64 {
        (0..self.nodes)
            .map(|i| self.row(i).map(|e| theta[e].abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    /// `¼ ‖θ‖_∞ (1 − ρ^{|E|})^{1/2}`, a bound on the state contraction
    /// coefficient under the sup norm.
    pub fn contraction_bound(&self, theta: &[f64]) -> f64 {
        0.25 * self.row_sum_norm(theta) * (1.0 - self.rho.powi(self.edges.len() as i32)).sqrt()
    }

    #[inline]
    fn row(&self, i: usize) -> std::ops::Range<usize> {
        self.row_start[i]..self.row_start[i + 1]
    }

    #[inline]
    fn preact(&self, i: usize, x: &[f64], xi: &[f64], theta: &[f64]) -> f64 {
        let mut u = self.bias[i];
        for e in self.row(i) {
            u += xi[e] * theta[e] * x[self.edges[e].1];
        }
        u
    }
}

impl SystemModel for StochasticNn {
    type Noise = Vec<f64>;

    fn name(&self) -> &str {
        "stochastic_nn"
    }

    fn state_dim(&self) -> usize {
        self.nodes
    }

    fn param_dim(&self) -> usize {
        self.edges.len()
    }

    fn state_domain(&self) -> &StateDomain {
        &self.domain
    }

    fn default_state(&self) -> Vec<f64> {
        vec![0.5; self.nodes]
    }

    fn new_noise(&self) -> Vec<f64> {
        vec![0.0; self.edges.len()]
    }

    fn sample_noise(&self, rng: &mut RngStream, noise: &mut Vec<f64>) {
        let keep = 1.0 - self.rho;
        for v in noise.iter_mut() {
            *v = if rng.random::<f64>() < keep { 1.0 } else { 0.0 };
        }
    }

    fn step(&self, x: &[f64], xi: &Vec<f64>, theta: &[f64], out: &mut [f64]) {
        for i in 0..self.nodes {
            out[i] = logistic(self.preact(i, x, xi, theta));
        }
    }

    fn jac_x(&self, x: &[f64], xi: &Vec<f64>, theta: &[f64], out: &mut DMatrix<f64>) {
        out.fill(0.0);
        for i in 0..self.nodes {
            let s = logistic(self.preact(i, x, xi, theta));
            let ds = s * (1.0 - s);
            for e in self.row(i) {
                out[(i, self.edges[e].1)] += ds * xi[e] * theta[e];
            }
        }
    }

    fn jac_theta(&self, x: &[f64], xi: &Vec<f64>, theta: &[f64], out: &mut DMatrix<f64>) {
        out.fill(0.0);
        for i in 0..self.nodes {
            let s = logistic(self.preact(i, x, xi, theta));
            let ds = s * (1.0 - s);
            for e in self.row(i) {
                out[(i, e)] = ds * xi[e] * x[self.edges[e].1];
            }
        }
    }

    fn hess_xx(&self, x: &[f64], xi: &Vec<f64>, theta: &[f64], out: &mut Bilinear) -> Result<()> {
        out.fill_zero();
        for i in 0..self.nodes {
            let s = logistic(self.preact(i, x, xi, theta));
            let d2 = s * (1.0 - s) * (1.0 - 2.0 * s);
            for e1 in self.row(i) {
                for e2 in self.row(i) {
                    let v = d2 * xi[e1] * theta[e1] * xi[e2] * theta[e2];
                    out.add(i, self.edges[e1].1, self.edges[e2].1, v);
                }
            }
        }
        Ok(())
    }

    fn hess_thetatheta(&self, x: &[f64], xi: &Vec<f64>, theta: &[f64], out: &mut Bilinear) -> Result<()> {
        out.fill_zero();
        for i in 0..self.nodes {
            let s = logistic(self.preact(i, x, xi, theta));
            let d2 = s * (1.0 - s) * (1.0 - 2.0 * s);
            for e1 in self.row(i) {
                for e2 in self.row(i) {
                    let v = d2 * xi[e1] * x[self.edges[e1].1] * xi[e2] * x[self.edges[e2].1];
                    out.set(i, e1, e2, v);
                }
            }
        }
        Ok(())
    }

    fn hess_xtheta(&self, x: &[f64], xi: &Vec<f64>, theta: &[f64], out: &mut Bilinear) -> Result<()> {
        out.fill_zero();
        for i in 0..self.nodes {
            let s = logistic(self.preact(i, x, xi, theta));
            let ds = s * (1.0 - s);
            let d2 = ds * (1.0 - 2.0 * s);
            for e in self.row(i) {
                let b = self.edges[e].1;
                for e1 in self.row(i) {
                    let v = d2 * xi[e1] * theta[e1] * xi[e] * x[b];
                    out.add(i, self.edges[e1].1, e, v);
                }
                out.add(i, b, e, ds * xi[e]);
            }
        }
        Ok(())
    }

    fn check_params(&self, theta: &[f64]) -> Result<()> {
        check_dim("theta", theta.len(), self.edges.len())?;
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::Precondition("network weights must be finite".into()));
        }
        let norm = self.row_sum_norm(theta);
        let factor = (1.0 - self.rho.powi(self.edges.len() as i32)).sqrt();
        if norm * factor >= 4.0 {
            return Err(Error::Precondition(format!(
                "incoming weight bound ‖θ‖_∞ (1 − ρ^|E|)^(1/2) < 4 fails: {norm} · {factor} = {}",
                norm * factor
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn net(n: usize, rho: f64) -> StochasticNn {
        make_stochastic_nn(StochasticNnConfig {
            nodes: n,
            rho,
            ..Default::default()
        })
        .unwrap()
        .0
    }

    #[test]
    fn full_dropout_gives_constant_output() {
        let m = net(3, 1.0);
        let mut rng = RngStream::new(1, 0);
        let mut xi = m.new_noise();
        m.sample_noise(&mut rng, &mut xi);
        assert!(xi.iter().all(|v| *v == 0.0));
        let theta = vec![0.7; 9];
        let mut out = vec![0.0; 3];
        m.step(&[0.1, 0.9, 0.4], &xi, &theta, &mut out);
        assert_eq!(out, vec![0.5; 3]);
        let mut j = DMatrix::zeros(3, 3);
        m.jac_x(&[0.1, 0.9, 0.4], &xi, &theta, &mut j);
        assert!(j.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn single_self_loop_slope() {
        let m = net(1, 0.0);
        let mut j = DMatrix::zeros(1, 1);
        m.jac_x(&[0.0], &vec![1.0], &[1.0], &mut j);
        assert_eq!(j[(0, 0)], 0.25);
    }

    #[test]
    fn parameter_jacobian_is_row_local() {
        let m = net(3, 0.0);
        let theta: Vec<f64> = (0..9).map(|e| 0.1 * e as f64 - 0.4).collect();
        let mut jt = DMatrix::zeros(3, 9);
        m.jac_theta(&[0.2, 0.5, 0.8], &vec![1.0; 9], &theta, &mut jt);
        for (e, &(j, _)) in m.edges().iter().enumerate() {
            for i in 0..3 {
                if i != j {
                    assert_eq!(jt[(i, e)], 0.0);
                }
            }
        }
    }

    #[test]
    fn weight_matrix_round_trip() {
        let m = make_stochastic_nn(StochasticNnConfig {
            nodes: 2,
            edges: Some(vec![[1, 0], [0, 1]]),
            ..Default::default()
        })
        .unwrap()
        .0;
        let w = vec![vec![0.0, 2.0], vec![3.0, 0.0]];
        let theta = m.theta_from_matrix(&w).unwrap();
        assert_eq!(theta, vec![2.0, 3.0]);
        assert_eq!(m.theta_matrix(&theta)[(1, 0)], 3.0);
        assert!(m.theta_from_matrix(&[vec![1.0, 0.0], vec![0.0, 0.0]]).is_err());
    }

    #[test]
    fn contraction_bound_enforced() {
        let m = net(2, 0.0);
        assert!(m.check_params(&[2.0, 1.9, 0.0, 0.0]).is_ok());
        let err = m.check_params(&[2.0, 2.0, 0.0, 0.0]).unwrap_err();
        assert_eq!(err.exit_status(), 3);
        // with dropout the same weights pass
        let m = net(2, 0.5);
        assert!(m.check_params(&[2.0, 2.0, 0.0, 0.0]).is_ok());
    }
}
