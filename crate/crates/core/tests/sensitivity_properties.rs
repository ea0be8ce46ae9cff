use fwdsens::cost::{Coordinate, Quadratic};
use fwdsens::model::SystemModel;
use fwdsens::oracle::{stationary_cost, OracleOptions};
use fwdsens::sensitivity::{batch_gradient, run_gradient, run_gradient_with, BatchOptions, GradientRun};
use fwdsens::zoo::{make_ar1, make_skew_product, make_stochastic_nn, Ar1Config, Ar1Noise, SkewProductConfig, StochasticNnConfig};
use fwdsens::RngStream;
use nalgebra::DMatrix;
use proptest::prelude::*;

fn nn_theta(seed: u64, scale: f64) -> (fwdsens::zoo::StochasticNn, Vec<f64>) {
    let (m, _) = make_stochastic_nn(StochasticNnConfig::default()).unwrap();
    let mut rng = RngStream::new(seed, 0);
    let theta: Vec<f64> = (0..9).map(|_| scale * (2.0 * rand::Rng::random::<f64>(&mut rng) - 1.0)).collect();
    (m, theta)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn initial_sensitivity_enters_linearly(seed in 0u64..1000, c in -3.0f64..3.0) {
        let (m, theta) = nn_theta(seed, 0.4);
        let avg = |m0: DMatrix<f64>| {
            let run = GradientRun { m0: Some(m0), ..GradientRun::new(500).burn_in(50) };
            run_gradient(&m, &theta, &Coordinate(2), &run, &mut RngStream::new(seed, 1)).unwrap().average
        };
        let base = DMatrix::from_fn(3, 9, |i, j| ((i + 3 * j) as f64 * 0.7).sin());
        let zero = avg(DMatrix::zeros(3, 9));
        let one = avg(base.clone());
        let scaled = avg(base * c);
        for j in 0..9 {
            let want = zero[j] + c * (one[j] - zero[j]);
            prop_assert!((scaled[j] - want).abs() < 1e-10 * (1.0 + want.abs()));
        }
    }

    #[test]
    fn same_seed_same_estimate(seed in 0u64..1000, reps in 1usize..4) {
        let (m, _) = make_skew_product(SkewProductConfig { moment_samples: 1000, ..Default::default() }).unwrap();
        let opts = BatchOptions::new(3000, reps, seed);
        let a = batch_gradient(&m, &[0.05], &Coordinate(1), &opts).unwrap();
        let b = batch_gradient(&m, &[0.05], &Coordinate(1), &opts).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn sensitivity_stays_bounded_for_contracting_network(seed in 0u64..1000) {
        // with incoming weights summing to at most 0.9, ‖J_x‖∞ ≤ 0.225; each
        // row of J_θ has three entries σ'·x_k ≤ ¼, so ‖m_n‖∞ ≤ ¾ / (1 − 0.225)
        let (m, theta) = nn_theta(seed, 0.3);
        let bound = 0.75 / (1.0 - 0.225);
        let mut worst: f64 = 0.0;
        run_gradient_with(&m, &theta, &Coordinate(0), &GradientRun::new(2000).burn_in(0), &mut RngStream::new(seed, 2), |z, _| {
            let row_max = (0..3).map(|i| z.m.row(i).iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max);
            worst = worst.max(row_max);
            Ok(())
        }).unwrap();
        prop_assert!(worst <= bound + 1e-12, "{} > {}", worst, bound);
    }
}

#[test]
fn ar1_stationary_moments_match_closed_form() {
    for noise in [Ar1Noise::Gaussian, Ar1Noise::Uniform] {
        let (m, _) = make_ar1(Ar1Config { noise, ..Default::default() }).unwrap();
        let opts = OracleOptions::new(400_000, 8, 21).burn_in(1000);
        let mean = stationary_cost(&m, &[0.3], &Coordinate(0), &opts).unwrap();
        let second = stationary_cost(&m, &[0.3], &Quadratic, &opts).unwrap();
        // θ/(1 − a) and θ²/(1 − a)² + ε²/(1 − a²)
        assert!((mean.mean - 0.6).abs() < 4.0 * mean.stderr.unwrap() + 1e-12);
        assert!((m.stationary_mean(0.3) - 0.6).abs() < 1e-15);
        let want = 0.36 + 0.01 / 0.75;
        assert!((m.stationary_second_moment(0.3) - want).abs() < 1e-15);
        assert!((second.mean - want).abs() < 4.0 * second.stderr.unwrap());
    }
}

#[test]
fn ar1_sensitivity_is_noise_free() {
    let (m, _) = make_ar1(Ar1Config::default()).unwrap();
    let mut n = 0;
    run_gradient_with(&m, &[0.3], &Coordinate(0), &GradientRun::new(40).burn_in(0), &mut RngStream::new(0, 0), |z, _| {
        n += 1;
        assert_eq!(z.m[(0, 0)], 2.0 * (1.0 - 0.5f64.powi(n)));
        Ok(())
    })
    .unwrap();
}

#[test]
fn x0_outside_domain_refused() {
    let (m, theta) = nn_theta(0, 0.3);
    let run = GradientRun { x0: Some(vec![1.5, 0.0, 0.0]), ..GradientRun::new(10) };
    let e = run_gradient(&m, &theta, &Coordinate(0), &run, &mut RngStream::new(0, 0)).unwrap_err();
    assert_eq!(e.exit_status(), 3);
    assert_eq!(m.state_dim(), 3);
}
