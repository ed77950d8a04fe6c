use nalgebra::DVector;

use super::data::DataSample;
use crate::error::{Error, Result};
use crate::numkit::{inverse_spd, symmetrize, GaussianParams};
use crate::vl::{
    update_lambda_factor, variational_energy_theta, TransformModel, VariationalState, VlSettings,
};

/// θ update from a first-order expansion of `f` around the current mean,
/// followed by the usual λ update.
///
/// `Σ* = (JᵀE[Q⁻¹]J + S⁻¹)⁻¹` and `μ* = Σ*(JᵀE[Q⁻¹](y − f(μ) + Jμ) + S⁻¹m)`,
/// with `E[Q⁻¹]` taken under the current λ factor.
pub fn linearized_vb_step(
    model: &TransformModel,
    data: &DataSample,
    state: &VariationalState,
) -> Result<VariationalState> {
    let mu = state.q_theta.mean();
    let n = data.n();
    let noise = model.noise();
    let q_lambda = state.q_lambda.as_ref();
    let expected = |v: &DVector<f64>| {
        noise
            .expected_precision_apply(q_lambda, v)
            .ok_or_else(|| Error::Domain("noise model has no closed-form expected precision".into()))
    };
    let jac = model.transform().jacobian(mu, n);
    let mut ej = jac.clone();
    for c in 0..jac.ncols() {
        ej.set_column(c, &expected(&jac.column(c).into_owned())?);
    }
    let prior = model.prior_theta();
    let prior_prec = prior.precision();
    let prec = symmetrize(&(jac.transpose() * &ej)) + &prior_prec;
    let cov = inverse_spd(&prec).map_err(|_| Error::DegenerateCurvature("linearized theta block".into()))?;
    let pseudo = data.y() - model.transform().predict(mu, n) + &jac * mu;
    let rhs = ej.transpose() * pseudo + &prior_prec * prior.mean();
    let q_theta = GaussianParams::new(&cov * rhs, cov)?;
    let energy_theta = variational_energy_theta(model, data, q_theta.mean(), q_lambda)?;
    let (q_lambda, energy_lambda) =
        match update_lambda_factor(model, data, &q_theta, q_lambda, &VlSettings::default())? {
            Some((q, e)) => (Some(q), Some(e)),
            None => (None, None),
        };
    Ok(VariationalState {
        q_theta,
        q_lambda,
        iteration: state.iteration + 1,
        energy_theta,
        energy_lambda,
        converged: false,
    })
}
