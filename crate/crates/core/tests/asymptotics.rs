mod common;

use common::{normal_sample, reference_linear, rng};
use nalgebra::DVector;
use proptest::prelude::*;
use rand::Rng;
use varlap::asymptotics::{
    elbo_oracle_fit, elbo_quadrature, limit_density, rescale, tv_convergence_curve_with, EmpiricalSummary,
    EstimatorTag, Histogram, LimitKind, LinearTarget, LogJointDensity, SingleParamTarget, TvOptions,
    DEFAULT_ORACLE_ORDER,
};
use varlap::harness::{run_linear_asymptotics, ExperimentConfig};
use varlap::models::{
    linear_fixed_point, single_param_map, GroundTruth, LinearLambdaModel, LinearState, ScalarTransform,
    SingleParamModel,
};
use varlap::numkit::GaussianParams;
use varlap::Error;

fn truth() -> GroundTruth {
    GroundTruth { theta0: 2.0, lambda0: Some(2.0) }
}

/// Midpoint rule on a 2-D box of ±`k` standard deviations.
fn brute_elbo_2d(t: &dyn LogJointDensity, mean: [f64; 2], var: [f64; 2], k: f64, m: usize) -> f64 {
    let sd = [var[0].sqrt(), var[1].sqrt()];
    let h = 2.0 * k / m as f64;
    let mut e = 0.0;
    let mut mass = 0.0;
    for i in 0..m {
        let z1 = -k + (i as f64 + 0.5) * h;
        for j in 0..m {
            let z2 = -k + (j as f64 + 0.5) * h;
            let w = (-0.5 * (z1 * z1 + z2 * z2)).exp() * h * h / (2.0 * std::f64::consts::PI);
            e += w * t.ln_joint(&[mean[0] + sd[0] * z1, mean[1] + sd[1] * z2]);
            mass += w;
        }
    }
    let entropy = 0.5 * (var[0] * var[1]).ln() + (1.0 + (2.0 * std::f64::consts::PI).ln());
    e / mass + entropy
}

#[test]
fn linear_elbo_quadrature_matches_brute_force() {
    let model = reference_linear();
    let data = normal_sample(&mut rng(11), 30, 6.0, 1f64.exp());
    let t = LinearTarget { model: &model, data: &data };
    for (mean, var) in [([2.0, 2.0], [0.01, 0.05]), ([1.7, 1.4], [0.2, 0.3])] {
        let q = GaussianParams::diagonal(&mean, &var).unwrap();
        let quad = elbo_quadrature(&t, &q, 30).unwrap();
        let brute = brute_elbo_2d(&t, mean, var, 9.0, 600);
        assert!((quad - brute).abs() < 1e-4 * brute.abs().max(1.0), "{quad} vs {brute}");
    }
}

#[test]
fn known_noise_conjugate_elbo() {
    // Identity transform with known noise: the ELBO is ln p(y, μ) − ½v·P + ½ln(2πe·v)
    // where P is the posterior precision, and it peaks at the exact posterior.
    let data = normal_sample(&mut rng(3), 25, 0.8, 0.7);
    let model = SingleParamModel::new(ScalarTransform::Identity, 0.49, 0.0, 4.0).unwrap();
    let t = SingleParamTarget { model: &model, data: &data };
    let prec = 25.0 / 0.49 + 0.25;
    let post_mean = (data.y().sum() / 0.49) / prec;
    for &(mu, v) in &[(0.5, 0.01), (post_mean, 1.0 / prec), (1.0, 0.3)] {
        let exact =
            model.log_joint(&data, mu) - 0.5 * v * prec + 0.5 * (2.0 * std::f64::consts::PI * std::f64::consts::E * v).ln();
        let quad = elbo_quadrature(&t, &GaussianParams::scalar(mu, v).unwrap(), 12).unwrap();
        assert!((quad - exact).abs() < 1e-8);
    }
    let fit = elbo_oracle_fit(&t, &GaussianParams::scalar(3.0, 2.0).unwrap(), 200).unwrap();
    assert!(fit.converged && fit.grad_norm <= 1e-6);
    assert!((fit.q.mean()[0] - post_mean).abs() < 1e-6);
    assert!((fit.q.cov()[(0, 0)] - 1.0 / prec).abs() < 1e-6);
}

#[test]
fn oracle_dominates_varlap_on_linear_instances() {
    let mut r = rng(41);
    for _ in 0..12 {
        let model = LinearLambdaModel::new(
            r.random_range(0.5..4.0),
            r.random_range(-1.0..1.0),
            r.random_range(0.3..2.0),
            r.random_range(-1.0..1.0),
            r.random_range(0.3..2.0),
        )
        .unwrap();
        let n = r.random_range(5..300);
        let data = normal_sample(&mut r, n, model.a * 1.5, 1.3);
        let vl = linear_fixed_point(&model, &data, &LinearState::from_priors(&model), 1e-12, 1000).unwrap();
        assert!(vl.converged);
        let s = vl.state;
        let q = GaussianParams::diagonal(&[s.mu_theta, s.mu_lambda], &[s.sigma_theta, s.sigma_lambda]).unwrap();
        let t = LinearTarget { model: &model, data: &data };
        let fit = elbo_oracle_fit(&t, &q, 200).unwrap();
        assert!(fit.converged, "n={n} grad={}", fit.grad_norm);
        let at_vl = elbo_quadrature(&t, &q, DEFAULT_ORACLE_ORDER).unwrap();
        let at_oracle = elbo_quadrature(&t, &fit.q, DEFAULT_ORACLE_ORDER).unwrap();
        assert!(at_oracle >= at_vl - 1e-9 * at_vl.abs(), "n={n}: {at_oracle} < {at_vl}");
    }
}

#[test]
fn oracle_dominates_map_laplace_for_nonlinear_transforms() {
    for f in [ScalarTransform::Exp, ScalarTransform::Cube, ScalarTransform::ExpTwoPlusCube] {
        let model = SingleParamModel::new(f.clone(), 1.0, 0.0, 4.0).unwrap();
        let data = normal_sample(&mut rng(5), 20, f.value(0.7), 1.0);
        let map = single_param_map(&model, &data, 0.0).unwrap();
        let q = GaussianParams::scalar(map.map, map.laplace_var).unwrap();
        let t = SingleParamTarget { model: &model, data: &data };
        let fit = elbo_oracle_fit(&t, &q, 200).unwrap();
        assert!(fit.converged);
        assert!(fit.elbo >= elbo_quadrature(&t, &q, DEFAULT_ORACLE_ORDER).unwrap() - 1e-10);
    }
}

#[test]
fn oracle_gap_per_observation_shrinks() {
    let model = reference_linear();
    let mut gaps = Vec::new();
    for (i, &n) in [10usize, 100, 1000, 10_000].iter().enumerate() {
        let data = normal_sample(&mut rng(100 + i as u64), n, 6.0, 1f64.exp());
        let s = linear_fixed_point(&model, &data, &LinearState::from_priors(&model), 1e-12, 1000).unwrap().state;
        let q = GaussianParams::diagonal(&[s.mu_theta, s.mu_lambda], &[s.sigma_theta, s.sigma_lambda]).unwrap();
        let t = LinearTarget { model: &model, data: &data };
        let fit = elbo_oracle_fit(&t, &q, 200).unwrap();
        let gap = fit.elbo - elbo_quadrature(&t, &q, DEFAULT_ORACLE_ORDER).unwrap();
        assert!(gap >= -1e-9);
        gaps.push(gap / n as f64);
    }
    assert!(gaps[3] < gaps[0], "{gaps:?}");
    assert!(gaps[3] < 1e-4, "{gaps:?}");
}

#[test]
fn oracle_restarts_from_distant_inits_agree() {
    let model = reference_linear();
    let data = normal_sample(&mut rng(8), 200, 6.0, 1f64.exp());
    let t = LinearTarget { model: &model, data: &data };
    let a = elbo_oracle_fit(&t, &GaussianParams::diagonal(&[2.0, 2.0], &[0.01, 0.01]).unwrap(), 300).unwrap();
    let b = elbo_oracle_fit(&t, &GaussianParams::diagonal(&[-1.0, 5.0], &[2.0, 2.0]).unwrap(), 300).unwrap();
    assert!(a.converged && b.converged);
    assert!((a.elbo - b.elbo).abs() < 1e-8, "{} vs {}", a.elbo, b.elbo);
    assert!(a.restart_spread() < 1e-8);
}

#[test]
fn elbo_quadrature_rejects_full_covariance_and_high_dimension() {
    let model = reference_linear();
    let data = normal_sample(&mut rng(1), 10, 6.0, 1.0);
    let t = LinearTarget { model: &model, data: &data };
    let full = GaussianParams::new(
        DVector::from_column_slice(&[2.0, 2.0]),
        nalgebra::DMatrix::from_row_slice(2, 2, &[0.1, 0.02, 0.02, 0.1]),
    )
    .unwrap();
    assert!(matches!(elbo_quadrature(&t, &full, 10), Err(Error::Domain(_))));
}

#[test]
fn limit_density_examples() {
    let g = limit_density(&reference_linear(), &truth(), LimitKind::Rescaled { center: None }).unwrap();
    assert!((g.cov()[(0, 0)] - (2f64).exp() / 9.0).abs() < 1e-15);
    assert_eq!(g.cov()[(1, 1)], 2.0);
    let r = rescale(&DVector::from_column_slice(&[2.0, 2.0]), &truth(), 1000, EstimatorTag::Mle).unwrap();
    let c = limit_density(&reference_linear(), &truth(), LimitKind::Rescaled { center: Some([r.h[0], r.h[1]]) }).unwrap();
    assert_eq!(c.mean().as_slice(), &[0.0, 0.0]);
}

#[test]
fn mode_bin_of_rescaled_theta_is_near_zero() {
    let cfg = ExperimentConfig::parse("experiment=linear-asymptotics\nn_grid=10000\nreps=500\nworkers=1", None, &[]).unwrap();
    let out = run_linear_asymptotics(&cfg).unwrap();
    let vals: Vec<f64> = out.records.iter().filter(|r| r.converged).map(|r| r.h_theta).collect();
    let h = Histogram::new(&vals, 40).unwrap();
    let width = h.edges[1] - h.edges[0];
    let zero_bin = ((0.0 - h.edges[0]) / width).floor() as i64;
    let mode = h.mode_bin() as i64;
    assert!((mode - zero_bin).abs() <= 1, "mode bin {mode}, zero bin {zero_bin}");
}

#[test]
fn tv_curve_is_deterministic_and_decreasing() {
    let model = reference_linear();
    let opts = TvOptions { grid_points: 201, ..TvOptions::default() };
    let a = tv_convergence_curve_with(&model, &truth(), &[100, 10_000], 5, 4, &opts).unwrap();
    let b = tv_convergence_curve_with(&model, &truth(), &[100, 10_000], 5, 4, &opts).unwrap();
    assert_eq!(a, b);
    assert!(a.summaries[1].median < a.summaries[0].median);
    assert_eq!(a.excluded(), 0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn rescale_is_linear(t in -5.0..5.0f64, l in -5.0..5.0f64, d0 in -1.0..1.0f64, d1 in -1.0..1.0f64, n in 1usize..100_000) {
        let x = DVector::from_column_slice(&[t, l]);
        let delta = DVector::from_column_slice(&[d0, d1]);
        let a = rescale(&(&x + &delta), &truth(), n, EstimatorTag::Varlap).unwrap();
        let b = rescale(&x, &truth(), n, EstimatorTag::Varlap).unwrap();
        let diff = a.h - b.h;
        let expect = delta * (n as f64).sqrt();
        prop_assert!((diff - expect).amax() <= 1e-12 * (n as f64).sqrt() * 10.0);
    }

    #[test]
    fn summary_invariants(points in prop::collection::vec((-50.0..50.0f64, -50.0..50.0f64), 2..200), bins in 1usize..60) {
        let pts: Vec<DVector<f64>> = points.iter().map(|&(a, b)| DVector::from_column_slice(&[a, b])).collect();
        let s = EmpiricalSummary::from_points(&pts, bins).unwrap();
        for h in &s.histograms {
            prop_assert!((h.masses.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        }
        prop_assert!((s.cov.clone() - s.cov.transpose()).amax() == 0.0);
        prop_assert!(s.cov.symmetric_eigenvalues().min() >= -1e-9 * s.cov.amax().max(1.0));
        for q in &s.quantiles {
            prop_assert!(q.windows(2).all(|w| w[0] <= w[1]));
        }
    }
}
