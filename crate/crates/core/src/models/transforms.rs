use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::vl::Transform;

pub type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Scalar transform `f(θ)` applied identically to every observation.
#[derive(Clone)]
pub enum ScalarTransform {
    Identity,
    Linear { slope: f64 },
    Exp,
    Cube,
    /// `e^{2θ} + θ³`
    ExpTwoPlusCube,
    Custom { name: String, f: ScalarFn, df: ScalarFn },
}

impl fmt::Debug for ScalarTransform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Linear { slope } => write!(f, "Linear {{ slope: {slope} }}"),
            other => f.write_str(&other.name()),
        }
    }
}

/// Custom transforms compare equal only when they share the same closures.
impl PartialEq for ScalarTransform {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (Self::Linear { slope: a }, Self::Linear { slope: b }) => a == b,
            (Self::Custom { name: n1, f: f1, df: d1 }, Self::Custom { name: n2, f: f2, df: d2 }) => {
                n1 == n2 && Arc::ptr_eq(f1, f2) && Arc::ptr_eq(d1, d2)
            }
            (a, b) => std::mem::discriminant(a) == std::mem::discriminant(b),
        }
    }
}

impl ScalarTransform {
    /// Catalog lookup: `identity`, `exp`, `cube`, `exp2cube`.
    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "identity" => Ok(Self::Identity),
            "exp" => Ok(Self::Exp),
            "cube" => Ok(Self::Cube),
            "exp2cube" => Ok(Self::ExpTwoPlusCube),
            other => Err(Error::Config(format!("unknown transform `{other}`"))),
        }
    }

    pub fn name(&self) -> String {
        match self {
            Self::Identity => "identity".into(),
            Self::Linear { .. } => "linear".into(),
            Self::Exp => "exp".into(),
            Self::Cube => "cube".into(),
            Self::ExpTwoPlusCube => "exp2cube".into(),
            Self::Custom { name, .. } => name.clone(),
        }
    }

    pub fn value(&self, t: f64) -> f64 {
        match self {
            Self::Identity => t,
            Self::Linear { slope } => slope * t,
            Self::Exp => t.exp(),
            Self::Cube => t * t * t,
            Self::ExpTwoPlusCube => (2.0 * t).exp() + t * t * t,
            Self::Custom { f, .. } => f(t),
        }
    }

    pub fn derivative(&self, t: f64) -> f64 {
        match self {
            Self::Identity => 1.0,
            Self::Linear { slope } => *slope,
            Self::Exp => t.exp(),
            Self::Cube => 3.0 * t * t,
            Self::ExpTwoPlusCube => 2.0 * (2.0 * t).exp() + 3.0 * t * t,
            Self::Custom { df, .. } => df(t),
        }
    }

    /// `f''(θ)`; central differences of `f'` for custom transforms.
    pub fn second_derivative(&self, t: f64) -> f64 {
        match self {
            Self::Identity | Self::Linear { .. } => 0.0,
            Self::Exp => t.exp(),
            Self::Cube => 6.0 * t,
            Self::ExpTwoPlusCube => 4.0 * (2.0 * t).exp() + 6.0 * t,
            Self::Custom { df, .. } => {
                let h = 1e-5 * t.abs().max(1.0);
                (df(t + h) - df(t - h)) / (2.0 * h)
            }
        }
    }
}

impl Transform for ScalarTransform {
    fn dim_theta(&self) -> usize {
        1
    }

    fn predict(&self, theta: &DVector<f64>, n: usize) -> DVector<f64> {
        DVector::from_element(n, self.value(theta[0]))
    }

    fn jacobian(&self, theta: &DVector<f64>, n: usize) -> DMatrix<f64> {
        DMatrix::from_element(n, 1, self.derivative(theta[0]))
    }
}
