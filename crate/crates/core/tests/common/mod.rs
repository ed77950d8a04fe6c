#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use varlap::models::{DataSample, LinearLambdaModel, LinearState};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal_sample(rng: &mut ChaCha8Rng, n: usize, mean: f64, sd: f64) -> DataSample {
    let y = (0..n).map(|_| mean + sd * rng.sample::<f64, _>(StandardNormal)).collect();
    DataSample::new(y).unwrap()
}

pub fn reference_linear() -> LinearLambdaModel {
    LinearLambdaModel::new(3.0, 1.0, 1.0, 1.0, 1.0).unwrap()
}

/// Random model, data and state for cross-checks.
pub fn random_linear_instance(rng: &mut ChaCha8Rng) -> (LinearLambdaModel, DataSample, LinearState) {
    let a = if rng.random_bool(0.5) { 1.0 } else { -1.0 } * rng.random_range(0.3..4.0);
    let model = LinearLambdaModel::new(
        a,
        rng.random_range(-2.0..2.0),
        rng.random_range(0.2..3.0),
        rng.random_range(-1.0..2.0),
        rng.random_range(0.2..3.0),
    )
    .unwrap();
    let n = rng.random_range(2..=1000);
    let theta0: f64 = rng.random_range(-2.0..3.0);
    let lambda0: f64 = rng.random_range(-1.0..3.0);
    let data = normal_sample(rng, n, a * theta0, (0.5 * lambda0).exp());
    let state = LinearState {
        mu_theta: rng.random_range(-3.0..3.0),
        sigma_theta: rng.random_range(0.01..2.0),
        mu_lambda: rng.random_range(-1.0..3.0),
        sigma_lambda: rng.random_range(0.01..2.0),
    };
    (model, data, state)
}

pub fn rel_diff(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}
