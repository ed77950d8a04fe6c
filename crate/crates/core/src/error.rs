use thiserror::Error;

use crate::vl::VariationalState;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("shape mismatch: expected {expected}, found {found}")]
    Shape { expected: usize, found: usize },
    #[error("matrix is not symmetric positive definite: {0}")]
    NotSpd(String),
    #[error("unsupported dimension {0}")]
    UnsupportedDimension(usize),
    #[error("quadrature order {0} out of range")]
    OrderOutOfRange(usize),
    #[error("quadrature unresolved: orders {order} and {next} differ by {diff:e}")]
    QuadratureUnresolved { order: usize, next: usize, diff: f64 },
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("degenerate curvature: {0}")]
    DegenerateCurvature(String),
    #[error("degenerate data: {0}")]
    DegenerateData(String),
    #[error("{what} did not converge within {iterations} iterations")]
    NotConverged { what: String, iterations: usize },
    #[error("fixed-point iteration diverged after {} sweeps", .last_state.iteration)]
    Diverged { last_state: Box<VariationalState> },
    #[error("exclusion rate {rate:.4} exceeds budget {budget:.4}")]
    ExclusionBudget { rate: f64, budget: f64 },
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Process exit status for this error: 2 for input problems, 3 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Io(_) | Error::Csv(_) | Error::DegenerateData(_) => 2,
            _ => 3,
        }
    }
}
