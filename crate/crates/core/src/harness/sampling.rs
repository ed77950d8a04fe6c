use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::models::{DataSample, GroundTruth, ScalarTransform};

/// Data-generating side of the experiment models.
#[derive(Debug, Clone)]
pub enum DataModel {
    /// `y_i = f(θ_0) + s z_i`.
    Single { f: ScalarTransform, noise_sd: f64 },
    /// `y_i = aθ_0 + e^{λ_0/2} z_i`.
    Linear { a: f64 },
}

pub fn sample_data<R: Rng + ?Sized>(model: &DataModel, truth: &GroundTruth, n: usize, rng: &mut R) -> Result<DataSample> {
    if n == 0 {
        return Err(Error::Config("sample size must be positive".into()));
    }
    let (center, scale) = match model {
        DataModel::Single { f, noise_sd } => {
            if !(noise_sd.is_finite() && *noise_sd >= 0.0) {
                return Err(Error::Config(format!("noise_sd must be nonnegative, got {noise_sd}")));
            }
            (f.value(truth.theta0), *noise_sd)
        }
        DataModel::Linear { a } => {
            let l0 = truth.lambda0.ok_or_else(|| Error::Config("linear model needs lambda0".into()))?;
            (a * truth.theta0, (0.5 * l0).exp())
        }
    };
    if !(center.is_finite() && scale.is_finite()) {
        return Err(Error::Config("truth produces a non-finite data distribution".into()));
    }
    let y = (0..n)
        .map(|_| {
            let z: f64 = rng.sample(StandardNormal);
            center + scale * z
        })
        .collect();
    DataSample::new(y)
}
