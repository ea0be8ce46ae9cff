//! Browser bindings for the demo page in `www/`.

use fwdsens::certify::{estimate_l, Coefficient, RegionSampler};
use fwdsens::cost::Quadratic;
use fwdsens::finsler::{metric_upper, DEFAULT_SEGMENTS};
use fwdsens::sensitivity::{run_gradient_with, GradientRun};
use fwdsens::zoo::{make_ar1, make_skew_product, make_stochastic_nn, Ar1Config, SkewProductConfig, StochasticNnConfig};
use fwdsens::RngStream;
use wasm_bindgen::prelude::*;

fn js_err(e: fwdsens::Error) -> JsError {
    JsError::new(&e.to_string())
}

/// Running average of the forward-sensitivity estimate of
/// `d/dθ E[x²]` for the AR(1) chain `x' = a x + θ + ε ξ`, sampled at
/// `points` evenly spaced steps. Returns `[step₁, avg₁, step₂, avg₂, …]`.
#[wasm_bindgen]
pub fn ar1_running_average(a: f64, theta: f64, eps: f64, n_steps: u32, points: u32, seed: u32) -> Result<Vec<f64>, JsError> {
    let (m, _) = make_ar1(Ar1Config {
        a,
        eps,
        ..Default::default()
    })
    .map_err(js_err)?;
    let n = n_steps.max(2) as usize;
    let every = (n / points.max(1) as usize).max(1);
    let run = GradientRun::new(n).burn_in(0);
    let mut sum = 0.0;
    let mut k = 0usize;
    let mut out = Vec::new();
    run_gradient_with(&m, &[theta], &Quadratic, &run, &mut RngStream::new(seed as u64, 0), |_, d| {
        sum += d[0];
        k += 1;
        if k % every == 0 {
            out.push(k as f64);
            out.push(sum / k as f64);
        }
        Ok(())
    })
    .map_err(js_err)?;
    Ok(out)
}

/// `2θ/(1 − a)²`, the exact value the running average approaches.
#[wasm_bindgen]
pub fn ar1_exact_gradient(a: f64, theta: f64) -> f64 {
    2.0 * theta / (1.0 - a).powi(2)
}

/// Estimated `K_X` of a fully connected three-node network with all
/// weights equal to `scale / 3`, for each drop probability in `rhos`.
/// Returns `[K_X(ρ₁), bound(ρ₁), K_X(ρ₂), bound(ρ₂), …]`.
#[wasm_bindgen]
pub fn network_contraction(rhos: Vec<f64>, scale: f64, n_points: u32, n_noise: u32, seed: u32) -> Result<Vec<f64>, JsError> {
    let mut out = Vec::with_capacity(2 * rhos.len());
    for rho in rhos {
        let (m, w) = make_stochastic_nn(StochasticNnConfig {
            rho,
            ..Default::default()
        })
        .map_err(js_err)?;
        let theta = vec![scale / 3.0; m.edges().len()];
        let region = RegionSampler::at_theta(vec![0.0; 3], vec![1.0; 3], &theta, n_points as usize, seed as u64);
        let l = estimate_l(&m, &w, &region, Coefficient::X, n_noise as usize).map_err(js_err)?;
        out.push(l.sup);
        out.push(m.contraction_bound(&theta));
    }
    Ok(out)
}

/// Chord distance from the origin under the skew-product weight on an
/// `n × n` grid over `[−w, w]²`, row-major with `x₁` varying fastest.
#[wasm_bindgen]
pub fn skew_distance_grid(p1: f64, p2: f64, half_width: f64, n: u32) -> Result<Vec<f64>, JsError> {
    let (_, w) = make_skew_product(SkewProductConfig {
        p1,
        p2,
        moment_samples: 20_000,
        ..Default::default()
    })
    .map_err(js_err)?;
    let n = n.max(2) as usize;
    let coord = |i: usize| -half_width + 2.0 * half_width * i as f64 / (n - 1) as f64;
    let mut out = Vec::with_capacity(n * n);
    for r in 0..n {
        for c in 0..n {
            out.push(metric_upper(&w, &[0.0, 0.0], &[coord(c), coord(r)], DEFAULT_SEGMENTS));
        }
    }
    Ok(out)
}
