use fwdsens::certify::{estimate_l, Coefficient, RegionSampler};
use fwdsens::model::{validate_derivatives, DerivTolerance};
use fwdsens::zoo::skew_product::theta_limit;
use fwdsens::zoo::{make_ar1, make_skew_product, make_stochastic_nn, Ar1Config, SkewProductConfig, StochasticNnConfig};
use fwdsens::RngStream;
use proptest::prelude::*;
use rand::Rng;

fn points(rng: &mut RngStream, n: usize, lo: f64, hi: f64, dim: usize) -> Vec<Vec<f64>> {
    (0..n).map(|_| (0..dim).map(|_| rng.random_range(lo..hi)).collect()).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn network_derivatives_match_differences(seed in 0u64..10_000, rho in 0.0f64..0.95) {
        let (m, _) = make_stochastic_nn(StochasticNnConfig { rho, ..Default::default() }).unwrap();
        let mut rng = RngStream::new(seed, 0);
        let theta: Vec<f64> = (0..9).map(|_| rng.random_range(-1.2..1.2)).collect();
        let pts = points(&mut rng, 20, 0.0, 1.0, 3);
        let r = validate_derivatives(&m, &theta, &pts, &mut rng, DerivTolerance::default()).unwrap();
        prop_assert!(r.passed, "{:?}", r.checks);
    }

    #[test]
    fn skew_product_derivatives_match_differences(seed in 0u64..10_000, t in -0.17f64..0.17) {
        let (m, _) = make_skew_product(SkewProductConfig { moment_samples: 1000, ..Default::default() }).unwrap();
        let mut rng = RngStream::new(seed, 0);
        let pts = points(&mut rng, 20, -3.0, 3.0, 2);
        let r = validate_derivatives(&m, &[t], &pts, &mut rng, DerivTolerance::default()).unwrap();
        prop_assert!(r.passed, "{:?}", r.checks);
        prop_assert!(t.abs() < theta_limit());
    }

    #[test]
    fn ar1_derivatives_match_differences(seed in 0u64..10_000, a in -0.95f64..0.95, t in -2.0f64..2.0) {
        let (m, _) = make_ar1(Ar1Config { a, ..Default::default() }).unwrap();
        let mut rng = RngStream::new(seed, 0);
        let pts = points(&mut rng, 10, -5.0, 5.0, 1);
        let r = validate_derivatives(&m, &[t], &pts, &mut rng, DerivTolerance::default()).unwrap();
        prop_assert!(r.passed);
    }

    #[test]
    fn network_estimate_respects_bound(seed in 0u64..10_000, rho in 0.05f64..0.95) {
        let (m, w) = make_stochastic_nn(StochasticNnConfig { rho, ..Default::default() }).unwrap();
        let mut rng = RngStream::new(seed, 1);
        let theta: Vec<f64> = (0..9).map(|_| rng.random_range(-0.6..0.6)).collect();
        let bound = m.contraction_bound(&theta);
        let region = RegionSampler::at_theta(vec![0.0; 3], vec![1.0; 3], &theta, 32, seed);
        let l = estimate_l(&m, &w, &region, Coefficient::X, 512).unwrap();
        prop_assert!(l.sup <= bound + 3.0 * l.sup_stderr, "{} > {}", l.sup, bound);
    }
}

#[test]
fn ar1_coefficients_are_exact() {
    let (m, w) = make_ar1(Ar1Config { a: -0.7, ..Default::default() }).unwrap();
    let region = RegionSampler::at_theta(vec![-2.0], vec![2.0], &[0.1], 8, 0);
    let lx = estimate_l(&m, &w, &region, Coefficient::X, 16).unwrap();
    let lt = estimate_l(&m, &w, &region, Coefficient::Theta, 16).unwrap();
    assert!((lx.sup - 0.7).abs() < 1e-15 && (lt.sup - 1.0).abs() < 1e-15);
    let l2 = estimate_l(&m, &w, &region, Coefficient::X2, 16).unwrap();
    assert_eq!(l2.sup, 0.0);
}

#[test]
fn skew_product_construction_conditions() {
    let bad_ratio = make_skew_product(SkewProductConfig { p2: 0.5, ..Default::default() }).unwrap_err();
    assert!(bad_ratio.to_string().contains("p2/p1"));
    assert_eq!(bad_ratio.exit_status(), 3);
    assert!(make_skew_product(SkewProductConfig { eps: 1.0, ..Default::default() }).is_err());
}

#[test]
fn skew_product_contracts_over_declared_region() {
    let (m, w) = make_skew_product(SkewProductConfig::default()).unwrap();
    let lim = 0.999 * theta_limit();
    let region = RegionSampler::uniform(vec![-3.0, -3.0], vec![3.0, 3.0], vec![-lim], vec![lim], 256, 2);
    let l = estimate_l(&m, &w, &region, Coefficient::X, 2048).unwrap();
    assert!(l.sup + 3.0 * l.sup_stderr < 1.0, "K_X = {} ± {}", l.sup, l.sup_stderr);
}

#[test]
fn skew_product_sensitivity_recursion() {
    use fwdsens::model::SystemModel;
    use fwdsens::sensitivity::{sens_step, SensState};
    let (m, _) = make_skew_product(SkewProductConfig::default()).unwrap();
    let mut rng = RngStream::new(3, 0);
    let mut z = SensState::with_m(vec![0.4, -1.2], nalgebra::DMatrix::from_column_slice(2, 1, &[0.7, -0.3])).unwrap();
    for _ in 0..20 {
        let mut noise = m.new_noise();
        m.sample_noise(&mut rng, &mut noise);
        let next = sens_step(&m, &z, &noise, &[0.1]).unwrap();
        let (m1, m2) = (z.m[(0, 0)], z.m[(1, 0)]);
        assert!((next.m[(0, 0)] - (0.5 * m1 + 1.0)).abs() < 1e-15);
        assert!((next.m[(1, 0)] - (0.5 * z.x[1] * m1 + 0.5 * z.x[0] * m2)).abs() < 1e-14);
        z = next;
    }
}
