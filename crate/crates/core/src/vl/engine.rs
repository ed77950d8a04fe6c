use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use super::model::TransformModel;
use super::newton::newton_maximize;
use super::remainder::remainder_diagnostic;
use crate::error::{Error, Result};
use crate::models::DataSample;
use crate::numkit::{inverse_spd, symmetrize, GaussianParams};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VlSettings {
    /// Fixed-point tolerance on the largest absolute parameter change.
    pub tol: f64,
    pub max_sweeps: usize,
    pub newton_tol: f64,
    pub newton_max_iter: usize,
}

impl Default for VlSettings {
    fn default() -> Self {
        Self { tol: 1e-10, max_sweeps: 500, newton_tol: 1e-13, newton_max_iter: 100 }
    }
}

/// Gaussian factors for θ and (optionally) λ, plus bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct VariationalState {
    pub q_theta: GaussianParams,
    pub q_lambda: Option<GaussianParams>,
    pub iteration: usize,
    /// Last evaluated variational energies; NaN before the first sweep.
    pub energy_theta: f64,
    pub energy_lambda: Option<f64>,
    pub converged: bool,
}

impl VariationalState {
    pub fn new(q_theta: GaussianParams, q_lambda: Option<GaussianParams>) -> Self {
        let energy_lambda = q_lambda.as_ref().map(|_| f64::NAN);
        Self { q_theta, q_lambda, iteration: 0, energy_theta: f64::NAN, energy_lambda, converged: false }
    }

    /// Starts at the prior means and covariances.
    pub fn from_priors(model: &TransformModel) -> Self {
        Self::new(model.prior_theta().clone(), model.prior_lambda().cloned())
    }

    pub fn mu_lambda(&self) -> DVector<f64> {
        self.q_lambda.as_ref().map_or_else(|| DVector::zeros(0), |q| q.mean().clone())
    }

    /// Largest absolute change over all means and covariance entries.
    pub fn max_change(&self, other: &VariationalState) -> f64 {
        let mut worst = diff_gauss(&self.q_theta, &other.q_theta);
        if let (Some(a), Some(b)) = (&self.q_lambda, &other.q_lambda) {
            worst = worst.max(diff_gauss(a, b));
        }
        worst
    }
}

fn diff_gauss(a: &GaussianParams, b: &GaussianParams) -> f64 {
    let dm = (a.mean() - b.mean()).amax();
    let dc = (a.cov() - b.cov()).amax();
    dm.max(dc)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FixedPointReport {
    pub state: VariationalState,
    /// Length of the Newton step each energy would still take at the final
    /// state; comparable with the parameter tolerance.
    pub residual_theta: f64,
    pub residual_lambda: f64,
    pub grad_norm_theta: f64,
    pub grad_norm_lambda: f64,
    pub remainder: DVector<f64>,
    pub remainder_scaled: DVector<f64>,
    pub n: usize,
    pub sweeps: usize,
    pub converged: bool,
}

fn check_theta(model: &TransformModel, theta: &DVector<f64>) -> Result<()> {
    if theta.len() != model.dim_theta() {
        return Err(Error::Shape { expected: model.dim_theta(), found: theta.len() });
    }
    Ok(())
}

fn check_lambda(model: &TransformModel, lambda: &DVector<f64>) -> Result<()> {
    if lambda.len() != model.dim_lambda() {
        return Err(Error::Shape { expected: model.dim_lambda(), found: lambda.len() });
    }
    Ok(())
}

pub(crate) fn ln_prior(prior: Option<&GaussianParams>, x: &DVector<f64>) -> f64 {
    prior.map_or(0.0, |p| p.ln_pdf(x))
}

/// `−S⁻¹(x − m)`.
pub(crate) fn prior_grad(prior: Option<&GaussianParams>, x: &DVector<f64>) -> DVector<f64> {
    prior.map_or_else(|| DVector::zeros(x.len()), |p| -(p.precision() * (x - p.mean())))
}

fn prior_precision(prior: Option<&GaussianParams>, d: usize) -> DMatrix<f64> {
    prior.map_or_else(|| DMatrix::zeros(d, d), |p| p.precision())
}

fn residual(model: &TransformModel, data: &DataSample, theta: &DVector<f64>) -> DVector<f64> {
    data.y() - model.transform().predict(theta, data.n())
}

fn likelihood(model: &TransformModel, n: usize, lambda: &DVector<f64>, r: &DVector<f64>) -> f64 {
    -0.5 * model.noise().quad_form(lambda, r)
        - 0.5 * model.noise().log_det(lambda, n)
        - 0.5 * n as f64 * (2.0 * PI).ln()
}

/// `ln p(y, θ, λ)` with all normalizing constants.
pub fn log_joint(
    model: &TransformModel,
    data: &DataSample,
    theta: &DVector<f64>,
    lambda: &DVector<f64>,
) -> Result<f64> {
    check_theta(model, theta)?;
    check_lambda(model, lambda)?;
    let r = residual(model, data, theta);
    let v = likelihood(model, data.n(), lambda, &r)
        + ln_prior(Some(model.prior_theta()), theta)
        + ln_prior(model.prior_lambda(), lambda);
    if v.is_nan() {
        return Err(Error::NonFinite("log joint".into()));
    }
    Ok(v)
}

/// Exact λ-block Hessian of the log joint for residual `r`.
pub(crate) fn lambda_block_hessian(
    model: &TransformModel,
    n: usize,
    lambda: &DVector<f64>,
    r: &DVector<f64>,
) -> DMatrix<f64> {
    let noise = model.noise();
    -0.5 * noise.quad_form_hess(lambda, r)
        - 0.5 * noise.log_det_hess(lambda, n)
        - prior_precision(model.prior_lambda(), lambda.len())
}

/// Gauss–Newton θ-block Hessian `−(JᵀQ(λ)⁻¹J + S_θ⁻¹)`.
pub(crate) fn theta_block_hessian_gn(
    model: &TransformModel,
    data: &DataSample,
    theta: &DVector<f64>,
    lambda: &DVector<f64>,
) -> DMatrix<f64> {
    let jac = model.transform().jacobian(theta, data.n());
    let mut qj = DMatrix::zeros(jac.nrows(), jac.ncols());
    for c in 0..jac.ncols() {
        let col = jac.column(c).into_owned();
        qj.set_column(c, &model.noise().precision_apply(lambda, &col));
    }
    -(symmetrize(&(jac.transpose() * qj)) + model.prior_theta().precision())
}

struct ThetaEnergy<'a> {
    model: &'a TransformModel,
    data: &'a DataSample,
    lambda: DVector<f64>,
    sigma_lambda: Option<DMatrix<f64>>,
    prior_prec: DMatrix<f64>,
}

impl<'a> ThetaEnergy<'a> {
    fn new(model: &'a TransformModel, data: &'a DataSample, q_lambda: Option<&GaussianParams>) -> Result<Self> {
        let lambda = q_lambda.map_or_else(|| DVector::zeros(0), |q| q.mean().clone());
        check_lambda(model, &lambda)?;
        Ok(Self {
            model,
            data,
            lambda,
            sigma_lambda: q_lambda.map(|q| q.cov().clone()),
            prior_prec: model.prior_theta().precision(),
        })
    }

    fn value(&self, theta: &DVector<f64>) -> f64 {
        let r = residual(self.model, self.data, theta);
        let mut v = likelihood(self.model, self.data.n(), &self.lambda, &r)
            + self.model.prior_theta().ln_pdf(theta)
            + ln_prior(self.model.prior_lambda(), &self.lambda);
        if let Some(w) = &self.sigma_lambda {
            let h = lambda_block_hessian(self.model, self.data.n(), &self.lambda, &r);
            v += 0.5 * w.component_mul(&h).sum();
        }
        v
    }

    /// `M v = Q⁻¹v + ½ Σ_kl (Σ_λ)_kl ∂²Q⁻¹ v`.
    fn effective_precision(&self, v: &DVector<f64>) -> DVector<f64> {
        let noise = self.model.noise();
        let mut out = noise.precision_apply(&self.lambda, v);
        if let Some(w) = &self.sigma_lambda {
            out += 0.5 * noise.curvature_apply(&self.lambda, w, v);
        }
        out
    }

    fn grad(&self, theta: &DVector<f64>) -> DVector<f64> {
        let r = residual(self.model, self.data, theta);
        let jac = self.model.transform().jacobian(theta, self.data.n());
        jac.transpose() * self.effective_precision(&r)
            - &self.prior_prec * (theta - self.model.prior_theta().mean())
    }

    fn hess(&self, theta: &DVector<f64>) -> DMatrix<f64> {
        let jac = self.model.transform().jacobian(theta, self.data.n());
        let mut mj = DMatrix::zeros(jac.nrows(), jac.ncols());
        for c in 0..jac.ncols() {
            mj.set_column(c, &self.effective_precision(&jac.column(c).into_owned()));
        }
        -(symmetrize(&(jac.transpose() * mj)) + &self.prior_prec)
    }
}

struct LambdaEnergy<'a> {
    model: &'a TransformModel,
    n: usize,
    r: DVector<f64>,
    /// Columns of `J L` with `Σ_θ = L Lᵀ`.
    spread: Vec<DVector<f64>>,
    theta_part: f64,
    prior_prec: DMatrix<f64>,
}

impl<'a> LambdaEnergy<'a> {
    fn new(model: &'a TransformModel, data: &'a DataSample, q_theta: &GaussianParams) -> Result<Self> {
        check_theta(model, q_theta.mean())?;
        let mu = q_theta.mean();
        let r = residual(model, data, mu);
        let jac = model.transform().jacobian(mu, data.n());
        let l = q_theta
            .cov()
            .clone()
            .cholesky()
            .ok_or_else(|| Error::NotSpd("theta covariance".into()))?
            .unpack();
        let jl = jac * l;
        let spread = (0..jl.ncols()).map(|c| jl.column(c).into_owned()).collect();
        let prior = model.prior_theta();
        let theta_part = prior.ln_pdf(mu) - 0.5 * (q_theta.cov() * prior.precision()).trace()
            - 0.5 * data.n() as f64 * (2.0 * PI).ln();
        Ok(Self {
            model,
            n: data.n(),
            r,
            spread,
            theta_part,
            prior_prec: prior_precision(model.prior_lambda(), model.dim_lambda()),
        })
    }

    fn value(&self, lambda: &DVector<f64>) -> f64 {
        let noise = self.model.noise();
        let quad = noise.quad_form(lambda, &self.r)
            + self.spread.iter().map(|b| noise.quad_form(lambda, b)).sum::<f64>();
        -0.5 * quad - 0.5 * noise.log_det(lambda, self.n)
            + ln_prior(self.model.prior_lambda(), lambda)
            + self.theta_part
    }

    fn grad(&self, lambda: &DVector<f64>) -> DVector<f64> {
        let noise = self.model.noise();
        let mut g = noise.quad_form_grad(lambda, &self.r);
        for b in &self.spread {
            g += noise.quad_form_grad(lambda, b);
        }
        -0.5 * g - 0.5 * noise.log_det_grad(lambda, self.n) + prior_grad(self.model.prior_lambda(), lambda)
    }

    fn hess(&self, lambda: &DVector<f64>) -> DMatrix<f64> {
        let noise = self.model.noise();
        let mut h = noise.quad_form_hess(lambda, &self.r);
        for b in &self.spread {
            h += noise.quad_form_hess(lambda, b);
        }
        -0.5 * h - 0.5 * noise.log_det_hess(lambda, self.n) - &self.prior_prec
    }
}

/// `I(μ_θ) = L(μ_θ, μ_λ) + ½ tr(Σ_λ H^λ(μ_θ, μ_λ))`, keeping every constant
/// of the log joint.
pub fn variational_energy_theta(
    model: &TransformModel,
    data: &DataSample,
    mu_theta: &DVector<f64>,
    q_lambda: Option<&GaussianParams>,
) -> Result<f64> {
    check_theta(model, mu_theta)?;
    Ok(ThetaEnergy::new(model, data, q_lambda)?.value(mu_theta))
}

/// Gradient and Gauss–Newton Hessian of the θ energy.
pub fn theta_energy_derivatives(
    model: &TransformModel,
    data: &DataSample,
    mu_theta: &DVector<f64>,
    q_lambda: Option<&GaussianParams>,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    check_theta(model, mu_theta)?;
    let e = ThetaEnergy::new(model, data, q_lambda)?;
    Ok((e.grad(mu_theta), e.hess(mu_theta)))
}

/// `I(μ_λ) = L(μ_θ, μ_λ) + ½ tr(Σ_θ H^θ(μ_θ, μ_λ))` with the Gauss–Newton
/// θ-block Hessian.
pub fn variational_energy_lambda(
    model: &TransformModel,
    data: &DataSample,
    mu_lambda: &DVector<f64>,
    q_theta: &GaussianParams,
) -> Result<f64> {
    check_lambda(model, mu_lambda)?;
    Ok(LambdaEnergy::new(model, data, q_theta)?.value(mu_lambda))
}

/// Exact gradient and Hessian of the λ energy.
pub fn lambda_energy_derivatives(
    model: &TransformModel,
    data: &DataSample,
    mu_lambda: &DVector<f64>,
    q_theta: &GaussianParams,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    check_lambda(model, mu_lambda)?;
    let e = LambdaEnergy::new(model, data, q_theta)?;
    Ok((e.grad(mu_lambda), e.hess(mu_lambda)))
}

/// `(J(μ_θ)ᵀ Q(μ_λ)⁻¹ J(μ_θ) + S_θ⁻¹)⁻¹`.
pub fn update_covariance_theta(
    model: &TransformModel,
    data: &DataSample,
    mu_theta: &DVector<f64>,
    q_lambda: Option<&GaussianParams>,
) -> Result<DMatrix<f64>> {
    check_theta(model, mu_theta)?;
    let lambda = q_lambda.map_or_else(|| DVector::zeros(0), |q| q.mean().clone());
    check_lambda(model, &lambda)?;
    let h = theta_block_hessian_gn(model, data, mu_theta, &lambda);
    inverse_spd(&(-h)).map_err(|_| Error::DegenerateCurvature("theta block".into()))
}

/// Negative inverse of the exact λ-block Hessian of the log joint.
pub fn update_covariance_lambda(
    model: &TransformModel,
    data: &DataSample,
    mu_theta: &DVector<f64>,
    mu_lambda: &DVector<f64>,
) -> Result<DMatrix<f64>> {
    check_theta(model, mu_theta)?;
    check_lambda(model, mu_lambda)?;
    let r = residual(model, data, mu_theta);
    let h = lambda_block_hessian(model, data.n(), mu_lambda, &r);
    inverse_spd(&(-h)).map_err(|_| {
        Error::DegenerateCurvature(format!("lambda block Hessian not negative definite at {mu_lambda}"))
    })
}

fn gaussian_from(mean: DVector<f64>, cov: DMatrix<f64>, what: &str) -> Result<GaussianParams> {
    GaussianParams::new(mean, cov).map_err(|e| match e {
        Error::NotSpd(_) => Error::DegenerateCurvature(what.to_string()),
        other => other,
    })
}

pub fn vl_step(model: &TransformModel, data: &DataSample, state: &VariationalState) -> Result<VariationalState> {
    vl_step_with(model, data, state, &VlSettings::default())
}

/// New θ factor: Newton on the θ energy from the current mean, then the
/// Gauss–Newton covariance. Returns the factor and its energy.
pub fn update_theta_factor(
    model: &TransformModel,
    data: &DataSample,
    q_theta: &GaussianParams,
    q_lambda: Option<&GaussianParams>,
    settings: &VlSettings,
) -> Result<(GaussianParams, f64)> {
    let te = ThetaEnergy::new(model, data, q_lambda)?;
    let (mu_theta, rep) = newton_maximize(
        |x| te.value(x),
        |x| te.grad(x),
        |x| te.hess(x),
        q_theta.mean(),
        settings.newton_tol,
        settings.newton_max_iter,
    )?;
    let cov = update_covariance_theta(model, data, &mu_theta, q_lambda)?;
    Ok((gaussian_from(mu_theta, cov, "theta covariance")?, rep.value))
}

/// New λ factor given the θ factor; `None` when the model has no λ block.
pub fn update_lambda_factor(
    model: &TransformModel,
    data: &DataSample,
    q_theta: &GaussianParams,
    q_lambda: Option<&GaussianParams>,
    settings: &VlSettings,
) -> Result<Option<(GaussianParams, f64)>> {
    let Some(ql) = q_lambda else {
        return Ok(None);
    };
    let le = LambdaEnergy::new(model, data, q_theta)?;
    let (mu_lambda, rep) = newton_maximize(
        |x| le.value(x),
        |x| le.grad(x),
        |x| le.hess(x),
        ql.mean(),
        settings.newton_tol,
        settings.newton_max_iter,
    )?;
    let cov = update_covariance_lambda(model, data, q_theta.mean(), &mu_lambda)?;
    Ok(Some((gaussian_from(mu_lambda, cov, "lambda covariance")?, rep.value)))
}

/// One sweep: θ mean by Newton, θ covariance, then the same for λ using
/// the fresh θ factor.
pub fn vl_step_with(
    model: &TransformModel,
    data: &DataSample,
    state: &VariationalState,
    settings: &VlSettings,
) -> Result<VariationalState> {
    let (q_theta, energy_theta) =
        update_theta_factor(model, data, &state.q_theta, state.q_lambda.as_ref(), settings)?;
    let (q_lambda, energy_lambda) =
        match update_lambda_factor(model, data, &q_theta, state.q_lambda.as_ref(), settings)? {
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

pub fn run_to_fixed_point(
    model: &TransformModel,
    data: &DataSample,
    init: &VariationalState,
    tol: f64,
    max_sweeps: usize,
) -> Result<FixedPointReport> {
    let settings = VlSettings { tol, max_sweeps, ..VlSettings::default() };
    run_to_fixed_point_with(model, data, init, &settings)
}

/// Iterates [`vl_step_with`] until the largest parameter change is below
/// `settings.tol` or the sweep budget runs out.
pub fn run_to_fixed_point_with(
    model: &TransformModel,
    data: &DataSample,
    init: &VariationalState,
    settings: &VlSettings,
) -> Result<FixedPointReport> {
    let mut state = init.clone();
    let mut sweeps = 0;
    let mut converged = false;
    while sweeps < settings.max_sweeps {
        let next = match vl_step_with(model, data, &state, settings) {
            Ok(s) => s,
            Err(Error::NonFinite(_)) => return Err(Error::Diverged { last_state: Box::new(state) }),
            Err(e) => return Err(e),
        };
        sweeps += 1;
        let change = next.max_change(&state);
        if !change.is_finite() {
            return Err(Error::Diverged { last_state: Box::new(state) });
        }
        state = next;
        if change < settings.tol {
            converged = true;
            break;
        }
    }
    state.converged = converged;
    fixed_point_report(model, data, state, sweeps, converged)
}

fn newton_residual(g: &DVector<f64>, h: &DMatrix<f64>) -> f64 {
    match (-h).cholesky() {
        Some(c) => c.solve(g).norm(),
        None => g.norm(),
    }
}

/// Residuals and remainder at a given state.
pub fn fixed_point_report(
    model: &TransformModel,
    data: &DataSample,
    state: VariationalState,
    sweeps: usize,
    converged: bool,
) -> Result<FixedPointReport> {
    let (gt, ht) = theta_energy_derivatives(model, data, state.q_theta.mean(), state.q_lambda.as_ref())?;
    let (residual_lambda, grad_norm_lambda) = match &state.q_lambda {
        Some(ql) => {
            let (gl, hl) = lambda_energy_derivatives(model, data, ql.mean(), &state.q_theta)?;
            (newton_residual(&gl, &hl), gl.norm())
        }
        None => (0.0, 0.0),
    };
    let (remainder, remainder_scaled) = remainder_diagnostic(model, data, &state);
    Ok(FixedPointReport {
        residual_theta: newton_residual(&gt, &ht),
        residual_lambda,
        grad_norm_theta: gt.norm(),
        grad_norm_lambda,
        remainder,
        remainder_scaled,
        n: data.n(),
        sweeps,
        converged,
        state,
    })
}
