use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::DVector;

use super::data::DataSample;
use super::transforms::ScalarTransform;
use crate::error::{Error, Result};
use crate::numkit::GaussianParams;
use crate::vl::{FixedNoise, TransformModel};

const GOLDEN: f64 = 0.618_033_988_749_894_8;

/// `y_i ~ N(f(θ), s²)` with prior `θ ~ N(m_θ, s_θ²)`.
#[derive(Debug, Clone)]
pub struct SingleParamModel {
    pub f: ScalarTransform,
    pub s2: f64,
    pub m_theta: f64,
    pub s2_theta: f64,
}

impl SingleParamModel {
    pub fn new(f: ScalarTransform, s2: f64, m_theta: f64, s2_theta: f64) -> Result<Self> {
        if !(s2.is_finite() && s2 > 0.0 && s2_theta.is_finite() && s2_theta > 0.0) {
            return Err(Error::Domain(format!("variances must be positive, got s2={s2}, s2_theta={s2_theta}")));
        }
        if !m_theta.is_finite() {
            return Err(Error::Domain("prior mean must be finite".into()));
        }
        Ok(Self { f, s2, m_theta, s2_theta })
    }

    /// `ln p(y, θ)` with all constants, from the cached sample statistics.
    pub fn log_joint(&self, data: &DataSample, theta: f64) -> f64 {
        let n = data.n() as f64;
        let ss = data.ss_about(self.f.value(theta));
        let d = theta - self.m_theta;
        -0.5 * n * (2.0 * PI * self.s2).ln() - 0.5 * ss / self.s2
            - 0.5 * (2.0 * PI * self.s2_theta).ln()
            - 0.5 * d * d / self.s2_theta
    }

    /// `(n/s²) f'(θ)(ȳ − f(θ)) − (θ − m_θ)/s_θ²`.
    pub fn log_joint_grad(&self, data: &DataSample, theta: f64) -> f64 {
        let n = data.n() as f64;
        n / self.s2 * self.f.derivative(theta) * (data.mean_y() - self.f.value(theta))
            - (theta - self.m_theta) / self.s2_theta
    }

    /// Negative inverse Gauss–Newton curvature `s²s_θ²/(n f'(θ)² s_θ² + s²)`.
    pub fn gn_variance(&self, n: usize, theta: f64) -> f64 {
        let fp = self.f.derivative(theta);
        self.s2 * self.s2_theta / (n as f64 * fp * fp * self.s2_theta + self.s2)
    }

    pub fn to_transform_model(&self) -> Result<TransformModel> {
        TransformModel::new(
            Arc::new(self.f.clone()),
            Arc::new(FixedNoise { variance: self.s2 }),
            GaussianParams::scalar(self.m_theta, self.s2_theta)?,
            None,
        )
    }
}

/// One Gauss–Newton step from `mu`, returning the new mean and the variance
/// evaluated there.
pub fn single_param_newton_step(model: &SingleParamModel, data: &DataSample, mu: f64) -> Result<(f64, f64)> {
    let n = data.n() as f64;
    let (s2, s2t) = (model.s2, model.s2_theta);
    let fp = model.f.derivative(mu);
    let fv = model.f.value(mu);
    let gain = s2 * s2t / (n * fp * fp * s2t + s2);
    let mu_star = mu + gain * ((model.m_theta - mu) / s2t - n / s2 * (fp * (fv - data.mean_y())));
    let sigma_star = model.gn_variance(data.n(), mu_star);
    if !(mu_star.is_finite() && sigma_star.is_finite() && sigma_star > 0.0) {
        return Err(Error::NonFinite(format!("single-parameter step from {mu}")));
    }
    Ok((mu_star, sigma_star))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MapFit {
    pub map: f64,
    /// Gauss–Newton Laplace variance at the MAP.
    pub laplace_var: f64,
    pub iterations: usize,
    /// Set when Newton stalled and bracketed golden-section search took over.
    pub used_fallback: bool,
    pub grad: f64,
}

pub fn single_param_map(model: &SingleParamModel, data: &DataSample, init: f64) -> Result<MapFit> {
    single_param_map_with(model, data, init, 1e-8, 500)
}

pub fn single_param_map_with(
    model: &SingleParamModel,
    data: &DataSample,
    init: f64,
    tol: f64,
    max_iter: usize,
) -> Result<MapFit> {
    if !init.is_finite() {
        return Err(Error::Domain("initial value must be finite".into()));
    }
    let lj = |t: f64| {
        let v = model.log_joint(data, t);
        if v.is_nan() { f64::NEG_INFINITY } else { v }
    };
    let mut mu = init;
    let mut f = lj(mu);
    let mut iterations = 0;
    let mut stalled = false;
    while iterations < max_iter {
        let g = model.log_joint_grad(data, mu);
        if g.abs() <= tol {
            return Ok(finish(model, data, mu, iterations, false));
        }
        let Ok((target, _)) = single_param_newton_step(model, data, mu) else {
            stalled = true;
            break;
        };
        iterations += 1;
        let step = target - mu;
        if step.abs() <= 4.0 * f64::EPSILON * mu.abs().max(1.0) {
            return Ok(finish(model, data, mu, iterations, false));
        }
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let cand = mu + t * step;
            let fc = lj(cand);
            if fc >= f {
                mu = cand;
                f = fc;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            stalled = true;
            break;
        }
    }
    if !stalled && model.log_joint_grad(data, mu).abs() <= tol {
        return Ok(finish(model, data, mu, iterations, false));
    }
    let located = golden_fallback(&lj, mu);
    let polished = polish(model, data, located);
    let fit = finish(model, data, polished, iterations, true);
    let curvature = 1.0 / fit.laplace_var;
    if fit.grad.abs() <= tol.max(1e-9 * curvature * polished.abs().max(1.0)) {
        Ok(fit)
    } else {
        Err(Error::NotConverged { what: "single-parameter MAP".into(), iterations })
    }
}

fn finish(model: &SingleParamModel, data: &DataSample, mu: f64, iterations: usize, used_fallback: bool) -> MapFit {
    MapFit {
        map: mu,
        laplace_var: model.gn_variance(data.n(), mu),
        iterations,
        used_fallback,
        grad: model.log_joint_grad(data, mu),
    }
}

/// Brackets a maximum around `start` by doubling steps, then golden-section
/// search down to `1e-12` relative width.
fn golden_fallback(lj: &impl Fn(f64) -> f64, start: f64) -> f64 {
    let f0 = lj(start);
    let mut w = start.abs().max(1.0) * 1e-3;
    let (mut lo, mut hi) = (start - w, start + w);
    for _ in 0..200 {
        if lj(lo) <= f0 {
            break;
        }
        w *= 2.0;
        lo = start - w;
    }
    w = start.abs().max(1.0) * 1e-3;
    for _ in 0..200 {
        if lj(hi) <= f0 {
            break;
        }
        w *= 2.0;
        hi = start + w;
    }
    let mut a = lo;
    let mut b = hi;
    let mut c = b - GOLDEN * (b - a);
    let mut d = a + GOLDEN * (b - a);
    let (mut fc, mut fd) = (lj(c), lj(d));
    while (b - a).abs() > 1e-12 * (a.abs() + b.abs()).max(1.0) {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - GOLDEN * (b - a);
            fc = lj(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + GOLDEN * (b - a);
            fd = lj(d);
        }
    }
    0.5 * (a + b)
}

/// A few exact Newton steps on the gradient, each kept only if it shrinks
/// the gradient.
fn polish(model: &SingleParamModel, data: &DataSample, mut mu: f64) -> f64 {
    for _ in 0..5 {
        let g = model.log_joint_grad(data, mu);
        let h = (1e-6 * mu.abs().max(1.0)).max(1e-8);
        let dg = (model.log_joint_grad(data, mu + h) - model.log_joint_grad(data, mu - h)) / (2.0 * h);
        if !(dg < 0.0) {
            break;
        }
        let cand = mu - g / dg;
        if model.log_joint_grad(data, cand).abs() < g.abs() {
            mu = cand;
        } else {
            break;
        }
    }
    mu
}

/// Convenience: state of the variational engine for a single-parameter fit.
pub fn single_param_gaussian(fit: &MapFit) -> Result<GaussianParams> {
    GaussianParams::new(DVector::from_element(1, fit.map), nalgebra::DMatrix::from_element(1, 1, fit.laplace_var))
}
