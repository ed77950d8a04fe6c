use std::fmt;

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::models::GroundTruth;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EstimatorTag {
    Varlap,
    Mle,
    Map,
    ElboOracle,
}

impl fmt::Display for EstimatorTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Varlap => "varlap",
            Self::Mle => "mle",
            Self::Map => "map",
            Self::ElboOracle => "elbo_oracle",
        })
    }
}

/// `h = √n (estimate − truth)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RescaledEstimate {
    pub h: DVector<f64>,
    pub n: usize,
    pub tag: EstimatorTag,
}

/// Truth as a vector: `(θ_0)` or `(θ_0, λ_0)`.
pub fn truth_vector(truth: &GroundTruth) -> DVector<f64> {
    match truth.lambda0 {
        Some(l) => DVector::from_column_slice(&[truth.theta0, l]),
        None => DVector::from_element(1, truth.theta0),
    }
}

pub fn rescale(estimate: &DVector<f64>, truth: &GroundTruth, n: usize, tag: EstimatorTag) -> Result<RescaledEstimate> {
    let t = truth_vector(truth);
    if estimate.len() != t.len() {
        return Err(Error::Shape { expected: t.len(), found: estimate.len() });
    }
    if n == 0 {
        return Err(Error::Domain("sample size must be positive".into()));
    }
    Ok(RescaledEstimate { h: (estimate - t) * (n as f64).sqrt(), n, tag })
}
