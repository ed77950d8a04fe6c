//! The generic variational Laplace engine.

mod engine;
mod model;
mod newton;
mod remainder;

pub use engine::{
    fixed_point_report, lambda_energy_derivatives, log_joint, run_to_fixed_point,
    run_to_fixed_point_with, theta_energy_derivatives, update_covariance_lambda,
    update_covariance_theta, update_lambda_factor, update_theta_factor, variational_energy_lambda, variational_energy_theta, vl_step,
    vl_step_with, FixedPointReport, VariationalState, VlSettings,
};
pub use model::{FixedNoise, LinearDesign, LogVarianceNoise, NoiseModel, Transform, TransformModel};
pub use newton::{newton_maximize, NewtonReport};
pub use remainder::remainder_diagnostic;
