use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use super::data::DataSample;
use super::transforms::ScalarTransform;
use crate::error::{Error, Result};
use crate::numkit::{solve_exp_linear, GaussianParams};
use crate::vl::{LogVarianceNoise, TransformModel, VariationalState};

/// `y_i ~ N(aθ, e^λ)` with Gaussian priors on θ and λ.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearLambdaModel {
    pub a: f64,
    pub m_theta: f64,
    pub s2_theta: f64,
    pub m_lambda: f64,
    pub s2_lambda: f64,
}

impl LinearLambdaModel {
    pub fn new(a: f64, m_theta: f64, s2_theta: f64, m_lambda: f64, s2_lambda: f64) -> Result<Self> {
        if !(a.is_finite() && a != 0.0) {
            return Err(Error::Domain(format!("slope must be finite and nonzero, got {a}")));
        }
        if !(s2_theta.is_finite() && s2_theta > 0.0 && s2_lambda.is_finite() && s2_lambda > 0.0) {
            return Err(Error::Domain("prior variances must be positive".into()));
        }
        if !(m_theta.is_finite() && m_lambda.is_finite()) {
            return Err(Error::Domain("prior means must be finite".into()));
        }
        Ok(Self { a, m_theta, s2_theta, m_lambda, s2_lambda })
    }

    pub fn to_transform_model(&self) -> Result<TransformModel> {
        TransformModel::new(
            Arc::new(ScalarTransform::Linear { slope: self.a }),
            Arc::new(LogVarianceNoise),
            GaussianParams::scalar(self.m_theta, self.s2_theta)?,
            Some(GaussianParams::scalar(self.m_lambda, self.s2_lambda)?),
        )
    }
}

/// True parameter values generating the data.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroundTruth {
    pub theta0: f64,
    pub lambda0: Option<f64>,
}

/// `(μ_θ, σ_θ, μ_λ, σ_λ)` with σ denoting variances.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearState {
    pub mu_theta: f64,
    pub sigma_theta: f64,
    pub mu_lambda: f64,
    pub sigma_lambda: f64,
}

impl LinearState {
    pub fn from_priors(model: &LinearLambdaModel) -> Self {
        Self {
            mu_theta: model.m_theta,
            sigma_theta: model.s2_theta,
            mu_lambda: model.m_lambda,
            sigma_lambda: model.s2_lambda,
        }
    }

    pub fn to_variational(&self) -> Result<VariationalState> {
        Ok(VariationalState::new(
            GaussianParams::scalar(self.mu_theta, self.sigma_theta)?,
            Some(GaussianParams::scalar(self.mu_lambda, self.sigma_lambda)?),
        ))
    }

    pub fn from_variational(state: &VariationalState) -> Result<Self> {
        let ql = state.q_lambda.as_ref().ok_or(Error::Shape { expected: 1, found: 0 })?;
        if state.q_theta.dim() != 1 || ql.dim() != 1 {
            return Err(Error::Shape { expected: 1, found: state.q_theta.dim().max(ql.dim()) });
        }
        Ok(Self {
            mu_theta: state.q_theta.mean()[0],
            sigma_theta: state.q_theta.cov()[(0, 0)],
            mu_lambda: ql.mean()[0],
            sigma_lambda: ql.cov()[(0, 0)],
        })
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.mu_theta, self.sigma_theta, self.mu_lambda, self.sigma_lambda]
    }

    pub fn max_change(&self, other: &Self) -> f64 {
        self.as_array().iter().zip(other.as_array()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }
}

/// One sweep of the closed-form updates: θ from the current λ factor, then
/// λ from the new θ factor, with `μ_λ` obtained through Lambert W.
pub fn linear_closed_form_step(
    model: &LinearLambdaModel,
    data: &DataSample,
    state: &LinearState,
) -> Result<LinearState> {
    if !(state.sigma_theta >= 0.0 && state.sigma_lambda >= 0.0) {
        return Err(Error::Domain("state variances must be nonnegative".into()));
    }
    let LinearLambdaModel { a, m_theta, s2_theta, m_lambda, s2_lambda } = *model;
    let n = data.n() as f64;
    let inflate = 1.0 + 0.5 * state.sigma_lambda;
    let prior_w = (state.mu_lambda).exp() / (n * s2_theta);
    let mu_theta = (a * inflate * data.mean_y() + prior_w * m_theta) / (a * a * inflate + prior_w);
    let sigma_theta = 1.0 / (a * a * n * (-state.mu_lambda).exp() + 1.0 / s2_theta);

    let ss = data.ss_about(a * mu_theta);
    let rhs = ss + a * a * n * sigma_theta;
    let mu_lambda = solve_exp_linear(2.0 / s2_lambda, n - 2.0 * m_lambda / s2_lambda, rhs)?;
    let sigma_lambda = 1.0 / (0.5 * ss * (-mu_lambda).exp() + 1.0 / s2_lambda);
    let next = LinearState { mu_theta, sigma_theta, mu_lambda, sigma_lambda };
    if next.as_array().iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("linear closed-form step".into()));
    }
    Ok(next)
}

/// Relative residual of `e^{μ_λ}(2μ_λ/s_λ² − 2m_λ/s_λ² + n) = SS(μ_θ) + a²nσ_θ`.
pub fn linear_lambda_stationarity(
    model: &LinearLambdaModel,
    data: &DataSample,
    mu_theta: f64,
    sigma_theta: f64,
    mu_lambda: f64,
) -> f64 {
    let n = data.n() as f64;
    let rhs = data.ss_about(model.a * mu_theta) + model.a * model.a * n * sigma_theta;
    let lhs = mu_lambda.exp() * (2.0 * (mu_lambda - model.m_lambda) / model.s2_lambda + n);
    (lhs - rhs).abs() / rhs.abs().max(f64::MIN_POSITIVE)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearFit {
    pub state: LinearState,
    pub sweeps: usize,
    pub converged: bool,
}

/// Iterates [`linear_closed_form_step`] until the largest parameter change
/// is below `tol`.
pub fn linear_fixed_point(
    model: &LinearLambdaModel,
    data: &DataSample,
    init: &LinearState,
    tol: f64,
    max_sweeps: usize,
) -> Result<LinearFit> {
    let mut state = *init;
    for sweep in 1..=max_sweeps {
        let next = linear_closed_form_step(model, data, &state)?;
        let change = next.max_change(&state);
        state = next;
        if change < tol {
            return Ok(LinearFit { state, sweeps: sweep, converged: true });
        }
    }
    Ok(LinearFit { state, sweeps: max_sweeps, converged: false })
}

/// `θ̂ = ȳ/a`, `λ̂ = ln(SS/n)`.
pub fn linear_mle(model: &LinearLambdaModel, data: &DataSample) -> Result<(f64, f64)> {
    if data.n() < 2 {
        return Err(Error::DegenerateData("maximum likelihood needs n >= 2".into()));
    }
    let theta = data.mean_y() / model.a;
    let ss = data.centered_ss();
    if ss <= 0.0 {
        return Err(Error::DegenerateData("all residuals are zero; log-variance MLE is -inf".into()));
    }
    Ok((theta, (ss / data.n() as f64).ln()))
}

/// Fisher information per observation at the truth, and its inverse.
pub fn linear_fisher(model: &LinearLambdaModel, truth: &GroundTruth) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let lambda0 = truth
        .lambda0
        .ok_or_else(|| Error::Config("Fisher information needs lambda0".into()))?;
    let a2 = model.a * model.a;
    let info = DMatrix::from_diagonal(&DVector::from_column_slice(&[a2 / lambda0.exp(), 0.5]));
    let inv = DMatrix::from_diagonal(&DVector::from_column_slice(&[lambda0.exp() / a2, 2.0]));
    Ok((info, inv))
}

/// Closed-form remainder components `(R_θ, R_λ)` at a state.
pub fn linear_remainder_closed_form(model: &LinearLambdaModel, data: &DataSample, state: &LinearState) -> [f64; 2] {
    let n = data.n() as f64;
    let a = model.a;
    let sum_r = n * (data.mean_y() - a * state.mu_theta);
    let ss = data.ss_about(a * state.mu_theta);
    let el = state.mu_lambda.exp();
    let r_theta = (state.mu_theta - model.m_theta) / model.s2_theta
        - a * sum_r * model.s2_lambda / (ss * model.s2_lambda + 2.0 * el);
    let sigma_theta = 1.0 / (a * a * n / el + 1.0 / model.s2_theta);
    let r_lambda = (state.mu_lambda - model.m_lambda) / model.s2_lambda - 0.5 * a * a * n / el * sigma_theta;
    [r_theta / n, r_lambda / n]
}
