use nalgebra::DVector;

use crate::error::{Error, Result};

/// Observations `y_1..y_n` with cached sufficient statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct DataSample {
    y: DVector<f64>,
    mean_y: f64,
    sumsq_y: f64,
    centered_ss: f64,
}

impl DataSample {
    pub fn new(y: Vec<f64>) -> Result<Self> {
        if y.is_empty() {
            return Err(Error::DegenerateData("empty sample".into()));
        }
        if let Some(i) = y.iter().position(|v| !v.is_finite()) {
            return Err(Error::DegenerateData(format!("observation {} is not finite", i + 1)));
        }
        let n = y.len() as f64;
        let mean_y = y.iter().sum::<f64>() / n;
        let sumsq_y = y.iter().map(|v| v * v).sum();
        let centered_ss = y.iter().map(|v| (v - mean_y) * (v - mean_y)).sum();
        Ok(Self { y: DVector::from_vec(y), mean_y, sumsq_y, centered_ss })
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn mean_y(&self) -> f64 {
        self.mean_y
    }

    pub fn sumsq_y(&self) -> f64 {
        self.sumsq_y
    }

    /// `Σ (y_i − ȳ)²`, computed in two passes.
    pub fn centered_ss(&self) -> f64 {
        self.centered_ss
    }

    /// `Σ (y_i − c)²` from the cached statistics.
    pub fn ss_about(&self, c: f64) -> f64 {
        let d = self.mean_y - c;
        self.centered_ss + self.n() as f64 * d * d
    }
}
