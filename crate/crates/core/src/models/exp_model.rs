//! One observation `y ~ N(e^θ, 1)` with prior `θ ~ N(m, s²)`, where the
//! ELBO of a Gaussian `q = N(μ, σ²)` is available in closed form.

use super::data::DataSample;
use super::transforms::ScalarTransform;
use super::single::SingleParamModel;
use crate::error::{Error, Result};

fn check(s2: f64, sigma2: f64) -> Result<()> {
    if !(sigma2.is_finite() && sigma2 > 0.0) {
        return Err(Error::Domain(format!("sigma2 must be positive, got {sigma2}")));
    }
    if !(s2.is_finite() && s2 > 0.0) {
        return Err(Error::Domain(format!("prior variance must be positive, got {s2}")));
    }
    Ok(())
}

/// `y e^μ e^{σ²/2} − ½e^{2μ}e^{2σ²} − ½(μ−m)²/s² − ½σ²/s² + ½ ln σ²`.
///
/// The full ELBO is this plus [`exp_model_elbo_constant`].
pub fn exp_model_elbo(y: f64, m: f64, s2: f64, mu: f64, sigma2: f64) -> Result<f64> {
    check(s2, sigma2)?;
    let d = mu - m;
    Ok(y * (mu + 0.5 * sigma2).exp() - 0.5 * (2.0 * mu + 2.0 * sigma2).exp() - 0.5 * d * d / s2
        - 0.5 * sigma2 / s2
        + 0.5 * sigma2.ln())
}

/// Terms dropped from [`exp_model_elbo`]: `−½y² − ½ln(2πs²) + ½`.
pub fn exp_model_elbo_constant(y: f64, s2: f64) -> f64 {
    -0.5 * y * y - 0.5 * (2.0 * std::f64::consts::PI * s2).ln() + 0.5
}

/// `(∂E/∂μ, ∂E/∂σ²)`.
pub fn exp_model_elbo_grad(y: f64, m: f64, s2: f64, mu: f64, sigma2: f64) -> Result<(f64, f64)> {
    check(s2, sigma2)?;
    let e1 = (mu + 0.5 * sigma2).exp();
    let e2 = (2.0 * mu + 2.0 * sigma2).exp();
    let d_mu = y * e1 - e2 - (mu - m) / s2;
    let d_s2 = 0.5 * y * e1 - e2 - 0.5 / s2 + 0.5 / sigma2;
    Ok((d_mu, d_s2))
}

/// `∂ ln p(y, μ)/∂μ = y e^μ − e^{2μ} − (μ − m)/s²`.
pub fn exp_model_map_grad(y: f64, m: f64, s2: f64, mu: f64) -> f64 {
    y * mu.exp() - (2.0 * mu).exp() - (mu - m) / s2
}

/// The same model as a single-parameter model with one observation.
pub fn exp_model_as_single(y: f64, m: f64, s2: f64) -> Result<(SingleParamModel, DataSample)> {
    Ok((SingleParamModel::new(ScalarTransform::Exp, 1.0, m, s2)?, DataSample::new(vec![y])?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::single_param_map;
    use crate::numkit::gauss_hermite;

    #[test]
    fn gradients_match_finite_differences() {
        for &(y, m, s2, mu, v) in &[(-1.0, 0.0, 1.0, -0.7, 0.8), (2.0, 1.0, 3.0, 0.4, 0.2), (-5.0, 0.5, 0.5, -1.5, 1.3)] {
            let (gm, gv) = exp_model_elbo_grad(y, m, s2, mu, v).unwrap();
            let h = 1e-6;
            let fm = (exp_model_elbo(y, m, s2, mu + h, v).unwrap() - exp_model_elbo(y, m, s2, mu - h, v).unwrap()) / (2.0 * h);
            let fv = (exp_model_elbo(y, m, s2, mu, v + h).unwrap() - exp_model_elbo(y, m, s2, mu, v - h).unwrap()) / (2.0 * h);
            assert!((gm - fm).abs() <= 1e-6 * gm.abs().max(1.0));
            assert!((gv - fv).abs() <= 1e-6 * gv.abs().max(1.0));
        }
    }

    #[test]
    fn matches_gauss_hermite() {
        let (y, m, s2, mu, v): (f64, f64, f64, f64, f64) = (-1.0, 0.3, 2.0, -0.4, 0.6);
        let rule = gauss_hermite(40).unwrap();
        let ln_joint = |t: f64| {
            let lik = -0.5 * (2.0 * std::f64::consts::PI).ln() - 0.5 * (y - t.exp()).powi(2);
            let prior = -0.5 * (2.0 * std::f64::consts::PI * s2).ln() - 0.5 * (t - m).powi(2) / s2;
            lik + prior
        };
        let expect = rule.expect_standard_normal(|z| ln_joint(mu + v.sqrt() * z));
        let entropy = 0.5 * (2.0 * std::f64::consts::PI * std::f64::consts::E * v).ln();
        let closed = exp_model_elbo(y, m, s2, mu, v).unwrap() + exp_model_elbo_constant(y, s2);
        assert!((expect + entropy - closed).abs() < 1e-6);
    }

    #[test]
    fn prior_dominates_far_left() {
        let e = exp_model_elbo(1.0, 0.0, 1.0, -30.0, 0.5).unwrap();
        let prior_only = -0.5 * 900.0 - 0.25 + 0.5 * 0.5f64.ln();
        assert!((e - prior_only).abs() < 1e-12);
        assert!(exp_model_elbo(1.0, 0.0, 1.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn map_point_is_not_elbo_stationary() {
        let (model, data) = exp_model_as_single(-1.0, 0.0, 1.0).unwrap();
        let fit = single_param_map(&model, &data, 0.0).unwrap();
        assert!(exp_model_map_grad(-1.0, 0.0, 1.0, fit.map).abs() < 1e-8);
        let (gm, _) = exp_model_elbo_grad(-1.0, 0.0, 1.0, fit.map, fit.laplace_var).unwrap();
        assert!(gm.abs() >= 1e-3, "{gm}");
    }
}
