use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::numkit::GaussianParams;

/// The deterministic part `f(θ)` of the observation model, evaluated for
/// a sample of size `n`.
pub trait Transform: Send + Sync {
    fn dim_theta(&self) -> usize;
    fn predict(&self, theta: &DVector<f64>, n: usize) -> DVector<f64>;
    /// `n × dim_theta` Jacobian of `predict`.
    fn jacobian(&self, theta: &DVector<f64>, n: usize) -> DMatrix<f64>;
}

/// Noise covariance `Q(λ)`, accessed only through its action on vectors so
/// that `n × n` matrices are never formed.
pub trait NoiseModel: Send + Sync {
    fn dim_lambda(&self) -> usize;

    /// `Q(λ)⁻¹ v`.
    fn precision_apply(&self, lambda: &DVector<f64>, v: &DVector<f64>) -> DVector<f64>;

    /// `Σ_kl W_kl ∂²Q(λ)⁻¹/∂λ_k∂λ_l · v`.
    fn curvature_apply(&self, lambda: &DVector<f64>, w: &DMatrix<f64>, v: &DVector<f64>)
        -> DVector<f64>;

    /// `rᵀ Q(λ)⁻¹ r`.
    fn quad_form(&self, lambda: &DVector<f64>, r: &DVector<f64>) -> f64 {
        r.dot(&self.precision_apply(lambda, r))
    }

    fn quad_form_grad(&self, lambda: &DVector<f64>, r: &DVector<f64>) -> DVector<f64>;
    fn quad_form_hess(&self, lambda: &DVector<f64>, r: &DVector<f64>) -> DMatrix<f64>;

    /// `ln det Q(λ)` for a sample of size `n`.
    fn log_det(&self, lambda: &DVector<f64>, n: usize) -> f64;
    fn log_det_grad(&self, lambda: &DVector<f64>, n: usize) -> DVector<f64>;
    fn log_det_hess(&self, lambda: &DVector<f64>, n: usize) -> DMatrix<f64>;

    /// `E_q[Q(λ)⁻¹] v` when it has a closed form.
    fn expected_precision_apply(
        &self,
        _q_lambda: Option<&GaussianParams>,
        _v: &DVector<f64>,
    ) -> Option<DVector<f64>> {
        None
    }
}

/// `Q(λ) = e^λ I`: a single log-variance parameter.
#[derive(Debug, Clone, Copy, Default)]
pub struct LogVarianceNoise;

impl NoiseModel for LogVarianceNoise {
    fn dim_lambda(&self) -> usize {
        1
    }

    fn precision_apply(&self, lambda: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
        v * (-lambda[0]).exp()
    }

    fn curvature_apply(&self, lambda: &DVector<f64>, w: &DMatrix<f64>, v: &DVector<f64>)
        -> DVector<f64> {
        v * (w[(0, 0)] * (-lambda[0]).exp())
    }

    fn quad_form(&self, lambda: &DVector<f64>, r: &DVector<f64>) -> f64 {
        (-lambda[0]).exp() * r.norm_squared()
    }

    fn quad_form_grad(&self, lambda: &DVector<f64>, r: &DVector<f64>) -> DVector<f64> {
        DVector::from_element(1, -self.quad_form(lambda, r))
    }

    fn quad_form_hess(&self, lambda: &DVector<f64>, r: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, self.quad_form(lambda, r))
    }

    fn log_det(&self, lambda: &DVector<f64>, n: usize) -> f64 {
        n as f64 * lambda[0]
    }

    fn log_det_grad(&self, _lambda: &DVector<f64>, n: usize) -> DVector<f64> {
        DVector::from_element(1, n as f64)
    }

    fn log_det_hess(&self, _lambda: &DVector<f64>, _n: usize) -> DMatrix<f64> {
        DMatrix::zeros(1, 1)
    }

    /// Log-normal moment `E[e^{-λ}] = e^{-μ + σ/2}`.
    fn expected_precision_apply(
        &self,
        q_lambda: Option<&GaussianParams>,
        v: &DVector<f64>,
    ) -> Option<DVector<f64>> {
        let q = q_lambda?;
        Some(v * (-q.mean()[0] + 0.5 * q.cov()[(0, 0)]).exp())
    }
}

/// Known noise variance `Q = s² I`; no λ block.
#[derive(Debug, Clone, Copy)]
pub struct FixedNoise {
    pub variance: f64,
}

impl NoiseModel for FixedNoise {
    fn dim_lambda(&self) -> usize {
        0
    }

    fn precision_apply(&self, _lambda: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
        v / self.variance
    }

    fn curvature_apply(&self, _lambda: &DVector<f64>, _w: &DMatrix<f64>, v: &DVector<f64>)
        -> DVector<f64> {
        DVector::zeros(v.len())
    }

    fn quad_form(&self, _lambda: &DVector<f64>, r: &DVector<f64>) -> f64 {
        r.norm_squared() / self.variance
    }

    fn quad_form_grad(&self, _lambda: &DVector<f64>, _r: &DVector<f64>) -> DVector<f64> {
        DVector::zeros(0)
    }

    fn quad_form_hess(&self, _lambda: &DVector<f64>, _r: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::zeros(0, 0)
    }

    fn log_det(&self, _lambda: &DVector<f64>, n: usize) -> f64 {
        n as f64 * self.variance.ln()
    }

    fn log_det_grad(&self, _lambda: &DVector<f64>, _n: usize) -> DVector<f64> {
        DVector::zeros(0)
    }

    fn log_det_hess(&self, _lambda: &DVector<f64>, _n: usize) -> DMatrix<f64> {
        DMatrix::zeros(0, 0)
    }

    fn expected_precision_apply(
        &self,
        _q_lambda: Option<&GaussianParams>,
        v: &DVector<f64>,
    ) -> Option<DVector<f64>> {
        Some(v / self.variance)
    }
}

/// `f(θ) = X θ` for a fixed `n × p` design.
#[derive(Debug, Clone)]
pub struct LinearDesign {
    pub design: DMatrix<f64>,
}

impl Transform for LinearDesign {
    fn dim_theta(&self) -> usize {
        self.design.ncols()
    }

    fn predict(&self, theta: &DVector<f64>, n: usize) -> DVector<f64> {
        assert_eq!(n, self.design.nrows(), "design has {} rows", self.design.nrows());
        &self.design * theta
    }

    fn jacobian(&self, _theta: &DVector<f64>, n: usize) -> DMatrix<f64> {
        assert_eq!(n, self.design.nrows(), "design has {} rows", self.design.nrows());
        self.design.clone()
    }
}

/// Observation model `y ~ N(f(θ), Q(λ))` with Gaussian priors on θ and λ.
#[derive(Clone)]
pub struct TransformModel {
    transform: Arc<dyn Transform>,
    noise: Arc<dyn NoiseModel>,
    prior_theta: GaussianParams,
    prior_lambda: Option<GaussianParams>,
}

impl fmt::Debug for TransformModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TransformModel")
            .field("dim_theta", &self.dim_theta())
            .field("dim_lambda", &self.dim_lambda())
            .field("prior_theta", &self.prior_theta)
            .field("prior_lambda", &self.prior_lambda)
            .finish()
    }
}

impl TransformModel {
    pub fn new(
        transform: Arc<dyn Transform>,
        noise: Arc<dyn NoiseModel>,
        prior_theta: GaussianParams,
        prior_lambda: Option<GaussianParams>,
    ) -> Result<Self> {
        let dt = transform.dim_theta();
        if dt == 0 {
            return Err(Error::Shape { expected: 1, found: 0 });
        }
        if prior_theta.dim() != dt {
            return Err(Error::Shape { expected: dt, found: prior_theta.dim() });
        }
        let dl = noise.dim_lambda();
        let found = prior_lambda.as_ref().map_or(0, |p| p.dim());
        if found != dl {
            return Err(Error::Shape { expected: dl, found });
        }
        Ok(Self { transform, noise, prior_theta, prior_lambda })
    }

    pub fn transform(&self) -> &dyn Transform {
        self.transform.as_ref()
    }

    pub fn noise(&self) -> &dyn NoiseModel {
        self.noise.as_ref()
    }

    pub fn prior_theta(&self) -> &GaussianParams {
        &self.prior_theta
    }

    pub fn prior_lambda(&self) -> Option<&GaussianParams> {
        self.prior_lambda.as_ref()
    }

    pub fn dim_theta(&self) -> usize {
        self.transform.dim_theta()
    }

    pub fn dim_lambda(&self) -> usize {
        self.noise.dim_lambda()
    }

    /// Largest relative disagreement between the Jacobian and central
    /// differences of `predict` over the given points.
    pub fn check_jacobian(&self, points: &[DVector<f64>], n: usize) -> f64 {
        let mut worst = 0.0f64;
        for theta in points {
            let jac = self.transform.jacobian(theta, n);
            for j in 0..theta.len() {
                let h = 1e-6 * theta[j].abs().max(1.0);
                let mut up = theta.clone();
                let mut dn = theta.clone();
                up[j] += h;
                dn[j] -= h;
                let fd = (self.transform.predict(&up, n) - self.transform.predict(&dn, n)) / (2.0 * h);
                for i in 0..n {
                    let scale = jac[(i, j)].abs().max(1.0);
                    worst = worst.max((fd[i] - jac[(i, j)]).abs() / scale);
                }
            }
        }
        worst
    }

    /// Checks `rᵀQ(λ)⁻¹r > 0` for a few nonzero `r` at each `λ`.
    pub fn check_noise_spd(&self, lambdas: &[DVector<f64>], n: usize) -> Result<()> {
        for lambda in lambdas {
            for k in 0..n.min(3) {
                let mut r = DVector::zeros(n);
                r[k] = 1.0;
                let q = self.noise.quad_form(lambda, &r);
                if !(q.is_finite() && q > 0.0) {
                    return Err(Error::NotSpd(format!("noise precision at lambda={lambda}")));
                }
            }
        }
        Ok(())
    }
}
