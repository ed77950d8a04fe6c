//! The concrete study models: closed-form updates, exact ELBOs, MLEs and
//! Fisher information.

mod data;
mod exp_model;
mod linear;
mod linearized;
mod single;
mod transforms;

pub use data::DataSample;
pub use exp_model::{
    exp_model_as_single, exp_model_elbo, exp_model_elbo_constant, exp_model_elbo_grad,
    exp_model_map_grad,
};
pub use linear::{
    linear_closed_form_step, linear_fisher, linear_fixed_point, linear_lambda_stationarity,
    linear_mle, linear_remainder_closed_form, GroundTruth, LinearFit, LinearLambdaModel,
    LinearState,
};
pub use linearized::linearized_vb_step;
pub use single::{
    single_param_gaussian, single_param_map, single_param_map_with, single_param_newton_step,
    MapFit, SingleParamModel,
};
pub use transforms::{ScalarFn, ScalarTransform};
