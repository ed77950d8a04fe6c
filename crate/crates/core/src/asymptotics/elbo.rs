use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::models::{DataSample, LinearLambdaModel, SingleParamModel};
use crate::numkit::{gauss_hermite, GaussianParams, MAX_GAUSS_HERMITE_ORDER};
use crate::vl::newton_maximize;

/// Gauss–Hermite order used inside the oracle optimizer.
pub const DEFAULT_ORACLE_ORDER: usize = 40;
/// Two successive orders must agree to this absolute tolerance.
const ORDER_AGREEMENT: f64 = 1e-4;
const ORACLE_GRAD_TOL: f64 = 1e-6;

/// An unnormalized log posterior `ln p(y, x)` with data already bound in.
pub trait LogJointDensity: Sync {
    fn dim(&self) -> usize;
    fn ln_joint(&self, x: &[f64]) -> f64;
    fn grad(&self, x: &[f64]) -> DVector<f64>;
    fn hess(&self, x: &[f64]) -> DMatrix<f64>;
}

/// [`SingleParamModel`] evaluated through `(n, ȳ, Σy²)`.
#[derive(Debug, Clone, Copy)]
pub struct SingleParamTarget<'a> {
    pub model: &'a SingleParamModel,
    pub data: &'a DataSample,
}

impl LogJointDensity for SingleParamTarget<'_> {
    fn dim(&self) -> usize {
        1
    }

    fn ln_joint(&self, x: &[f64]) -> f64 {
        self.model.log_joint(self.data, x[0])
    }

    fn grad(&self, x: &[f64]) -> DVector<f64> {
        DVector::from_element(1, self.model.log_joint_grad(self.data, x[0]))
    }

    fn hess(&self, x: &[f64]) -> DMatrix<f64> {
        let m = self.model;
        let n = self.data.n() as f64;
        let t = x[0];
        let fp = m.f.derivative(t);
        let h = n / m.s2 * (m.f.second_derivative(t) * (self.data.mean_y() - m.f.value(t)) - fp * fp)
            - 1.0 / m.s2_theta;
        DMatrix::from_element(1, 1, h)
    }
}

/// [`LinearLambdaModel`] over `x = (θ, λ)`.
#[derive(Debug, Clone, Copy)]
pub struct LinearTarget<'a> {
    pub model: &'a LinearLambdaModel,
    pub data: &'a DataSample,
}

impl LogJointDensity for LinearTarget<'_> {
    fn dim(&self) -> usize {
        2
    }

    fn ln_joint(&self, x: &[f64]) -> f64 {
        let m = self.model;
        let n = self.data.n() as f64;
        let (t, l) = (x[0], x[1]);
        let dt = t - m.m_theta;
        let dl = l - m.m_lambda;
        -0.5 * n * ((2.0 * PI).ln() + l) - 0.5 * (-l).exp() * self.data.ss_about(m.a * t)
            - 0.5 * (2.0 * PI * m.s2_theta).ln()
            - 0.5 * dt * dt / m.s2_theta
            - 0.5 * (2.0 * PI * m.s2_lambda).ln()
            - 0.5 * dl * dl / m.s2_lambda
    }

    fn grad(&self, x: &[f64]) -> DVector<f64> {
        let m = self.model;
        let n = self.data.n() as f64;
        let (t, l) = (x[0], x[1]);
        let e = (-l).exp();
        DVector::from_column_slice(&[
            m.a * e * n * (self.data.mean_y() - m.a * t) - (t - m.m_theta) / m.s2_theta,
            -0.5 * n + 0.5 * e * self.data.ss_about(m.a * t) - (l - m.m_lambda) / m.s2_lambda,
        ])
    }

    fn hess(&self, x: &[f64]) -> DMatrix<f64> {
        let m = self.model;
        let n = self.data.n() as f64;
        let (t, l) = (x[0], x[1]);
        let e = (-l).exp();
        let tl = -m.a * e * n * (self.data.mean_y() - m.a * t);
        DMatrix::from_row_slice(
            2,
            2,
            &[
                -m.a * m.a * n * e - 1.0 / m.s2_theta,
                tl,
                tl,
                -0.5 * e * self.data.ss_about(m.a * t) - 1.0 / m.s2_lambda,
            ],
        )
    }
}

/// Tensor-product standard-normal nodes `z` and weights for dimension `d`.
fn tensor_points(order: usize, d: usize) -> Result<Vec<(Vec<f64>, f64)>> {
    let rule = gauss_hermite(order)?;
    let one: Vec<(f64, f64)> = rule.standard_normal_points().collect();
    let mut out: Vec<(Vec<f64>, f64)> = vec![(Vec::new(), 1.0)];
    for _ in 0..d {
        out = out
            .iter()
            .flat_map(|(z, w)| {
                one.iter().map(move |&(zi, wi)| {
                    let mut z = z.clone();
                    z.push(zi);
                    (z, w * wi)
                })
            })
            .collect();
    }
    Ok(out)
}

fn check_family(target: &dyn LogJointDensity, q: &GaussianParams) -> Result<()> {
    if q.dim() != target.dim() {
        return Err(Error::Shape { expected: target.dim(), found: q.dim() });
    }
    if q.dim() > 2 {
        return Err(Error::UnsupportedDimension(q.dim()));
    }
    if !q.is_diagonal() {
        return Err(Error::Domain("the ELBO oracle works on diagonal Gaussians only".into()));
    }
    Ok(())
}

fn elbo_at(target: &dyn LogJointDensity, points: &[(Vec<f64>, f64)], mean: &[f64], sd: &[f64]) -> f64 {
    let d = mean.len();
    let mut x = vec![0.0; d];
    let mut e = 0.0;
    for (z, w) in points {
        for i in 0..d {
            x[i] = mean[i] + sd[i] * z[i];
        }
        e += w * target.ln_joint(&x);
    }
    let entropy: f64 = sd.iter().map(|s| s.ln()).sum::<f64>() + 0.5 * d as f64 * (1.0 + (2.0 * PI).ln());
    e + entropy
}

/// `E_q[ln p(y, x)] + H[q]` by tensorized Gauss–Hermite at `order`,
/// cross-checked against `order + 1`.
pub fn elbo_quadrature(target: &dyn LogJointDensity, q: &GaussianParams, order: usize) -> Result<f64> {
    check_family(target, q)?;
    let mean = q.mean().as_slice().to_vec();
    let sd: Vec<f64> = q.variances().iter().map(|v| v.sqrt()).collect();
    let value = elbo_at(target, &tensor_points(order, q.dim())?, &mean, &sd);
    if order < MAX_GAUSS_HERMITE_ORDER {
        let next = elbo_at(target, &tensor_points(order + 1, q.dim())?, &mean, &sd);
        let diff = (next - value).abs();
        if !(diff <= ORDER_AGREEMENT) {
            return Err(Error::QuadratureUnresolved { order, next: order + 1, diff });
        }
    }
    if !value.is_finite() {
        return Err(Error::NonFinite("ELBO quadrature".into()));
    }
    Ok(value)
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleFit {
    pub q: GaussianParams,
    pub elbo: f64,
    /// Gradient norm in `(means, log-variances)` coordinates.
    pub grad_norm: f64,
    /// False when no restart reached the gradient tolerance within budget.
    pub converged: bool,
    pub iterations: usize,
    /// Final ELBO of every restart, in restart order.
    pub restart_values: Vec<f64>,
}

impl OracleFit {
    /// Spread of converged restart optima; large values signal multimodality.
    pub fn restart_spread(&self) -> f64 {
        let v: Vec<f64> = self.restart_values.iter().copied().filter(|v| v.is_finite()).collect();
        v.iter().copied().fold(f64::NEG_INFINITY, f64::max) - v.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// Exact ELBO derivatives in `p = (μ, ν)` with `ν = ln σ²`.
struct Objective<'a> {
    target: &'a dyn LogJointDensity,
    points: Vec<(Vec<f64>, f64)>,
    d: usize,
}

impl Objective<'_> {
    fn split(&self, p: &DVector<f64>) -> (Vec<f64>, Vec<f64>) {
        let mean = p.rows(0, self.d).iter().copied().collect();
        let sd = p.rows(self.d, self.d).iter().map(|v| (0.5 * v).exp()).collect();
        (mean, sd)
    }

    fn value(&self, p: &DVector<f64>) -> f64 {
        let (mean, sd) = self.split(p);
        let v = elbo_at(self.target, &self.points, &mean, &sd);
        if v.is_nan() { f64::NEG_INFINITY } else { v }
    }

    fn derivatives(&self, p: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
        let d = self.d;
        let (mean, sd) = self.split(p);
        let mut g = DVector::zeros(2 * d);
        let mut h = DMatrix::zeros(2 * d, 2 * d);
        // Accumulate E[g], E[g_i s_i z_i], E[H], E[H_ij s_i z_i], E[H_ij s_i z_i s_j z_j].
        let mut eg = DVector::<f64>::zeros(d);
        let mut egz = DVector::<f64>::zeros(d);
        let mut eh = DMatrix::<f64>::zeros(d, d);
        let mut ehz = DMatrix::<f64>::zeros(d, d);
        let mut ehzz = DMatrix::<f64>::zeros(d, d);
        let mut x = vec![0.0; d];
        for (z, w) in &self.points {
            for i in 0..d {
                x[i] = mean[i] + sd[i] * z[i];
            }
            let gx = self.target.grad(&x);
            let hx = self.target.hess(&x);
            for i in 0..d {
                let si = sd[i] * z[i];
                eg[i] += w * gx[i];
                egz[i] += w * gx[i] * si;
                for j in 0..d {
                    let sj = sd[j] * z[j];
                    eh[(i, j)] += w * hx[(i, j)];
                    // Column j carries the ν_j derivative.
                    ehz[(i, j)] += w * hx[(i, j)] * sj;
                    ehzz[(i, j)] += w * hx[(i, j)] * si * sj;
                }
            }
        }
        for i in 0..d {
            g[i] = eg[i];
            g[d + i] = 0.5 * egz[i] + 0.5;
            for j in 0..d {
                h[(i, j)] = eh[(i, j)];
                h[(i, d + j)] = 0.5 * ehz[(i, j)];
                h[(d + j, i)] = 0.5 * ehz[(i, j)];
                h[(d + i, d + j)] = 0.25 * ehzz[(i, j)];
            }
            h[(d + i, d + i)] += 0.25 * egz[i];
        }
        (g, h)
    }
}

/// Maximizes the quadrature ELBO over diagonal Gaussians.
///
/// Newton runs from `init` and from two deterministic perturbations of it;
/// the best converged restart wins. `budget` caps Newton iterations per
/// restart.
pub fn elbo_oracle_fit(target: &dyn LogJointDensity, init: &GaussianParams, budget: usize) -> Result<OracleFit> {
    check_family(target, init)?;
    let d = init.dim();
    let obj = Objective { target, points: tensor_points(DEFAULT_ORACLE_ORDER, d)?, d };
    let vars = init.variances();
    let mut starts = Vec::with_capacity(3);
    for (shift, dv) in [(0.0, 0.0), (2.0, -1.0), (-2.0, 1.0)] {
        let mut p = DVector::zeros(2 * d);
        for i in 0..d {
            p[i] = init.mean()[i] + shift * vars[i].sqrt();
            p[d + i] = vars[i].ln() + dv;
        }
        starts.push(p);
    }

    let mut best: Option<(DVector<f64>, f64, f64, bool)> = None;
    let mut restart_values = Vec::with_capacity(starts.len());
    let mut iterations = 0;
    for p0 in &starts {
        let run = newton_maximize(
            |p| obj.value(p),
            |p| obj.derivatives(p).0,
            |p| obj.derivatives(p).1,
            p0,
            ORACLE_GRAD_TOL,
            budget,
        );
        let (p, report) = match run {
            Ok(r) => r,
            Err(_) => {
                restart_values.push(f64::NAN);
                continue;
            }
        };
        iterations += report.iterations;
        let value = obj.value(&p);
        let grad_norm = obj.derivatives(&p).0.norm();
        let ok = grad_norm <= ORACLE_GRAD_TOL && value.is_finite();
        restart_values.push(if ok { value } else { f64::NAN });
        let better = match &best {
            None => true,
            Some((_, bv, _, bok)) => (ok && !bok) || (ok == *bok && value > *bv),
        };
        if better {
            best = Some((p, value, grad_norm, ok));
        }
    }
    let (p, elbo, grad_norm, converged) =
        best.ok_or_else(|| Error::NonFinite("every oracle restart failed".into()))?;
    let (mean, sd) = obj.split(&p);
    let q = GaussianParams::diagonal(&mean, &sd.iter().map(|s| s * s).collect::<Vec<_>>())?;
    Ok(OracleFit { q, elbo, grad_norm, converged, iterations, restart_values })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{exp_model_as_single, exp_model_elbo, exp_model_elbo_constant, single_param_map, ScalarTransform};
    use crate::vl::log_joint;

    fn linear_data() -> (LinearLambdaModel, DataSample) {
        let m = LinearLambdaModel::new(3.0, 1.0, 1.0, 1.0, 1.0).unwrap();
        let y = (0..40).map(|i| 6.0 + ((i * 37 % 17) as f64 - 8.0) * 0.4).collect();
        (m, DataSample::new(y).unwrap())
    }

    #[test]
    fn linear_target_matches_generic_log_joint() {
        let (m, data) = linear_data();
        let tm = m.to_transform_model().unwrap();
        let t = LinearTarget { model: &m, data: &data };
        for &(a, b) in &[(2.0, 2.0), (1.5, 0.3), (-1.0, 3.0)] {
            let generic = log_joint(&tm, &data, &DVector::from_element(1, a), &DVector::from_element(1, b)).unwrap();
            assert!((t.ln_joint(&[a, b]) - generic).abs() < 1e-9 * generic.abs());
            let h = 1e-5;
            for k in 0..2 {
                let mut xp = [a, b];
                let mut xm = [a, b];
                xp[k] += h;
                xm[k] -= h;
                let fd = (t.ln_joint(&xp) - t.ln_joint(&xm)) / (2.0 * h);
                assert!((fd - t.grad(&[a, b])[k]).abs() < 1e-5 * (1.0 + fd.abs()));
                let gfd = (t.grad(&xp) - t.grad(&xm)) / (2.0 * h);
                for r in 0..2 {
                    assert!((gfd[r] - t.hess(&[a, b])[(r, k)]).abs() < 1e-5 * (1.0 + gfd[r].abs()));
                }
            }
        }
    }

    #[test]
    fn single_target_hessian_matches_finite_differences() {
        let data = DataSample::new(vec![2.0, 3.5, 1.0]).unwrap();
        for f in [ScalarTransform::Exp, ScalarTransform::Cube, ScalarTransform::ExpTwoPlusCube] {
            let m = SingleParamModel::new(f, 1.0, 0.5, 4.0).unwrap();
            let t = SingleParamTarget { model: &m, data: &data };
            let x = 0.3;
            let h = 1e-5;
            let fd = (t.grad(&[x + h])[0] - t.grad(&[x - h])[0]) / (2.0 * h);
            assert!((fd - t.hess(&[x])[(0, 0)]).abs() < 1e-5 * (1.0 + fd.abs()));
        }
    }

    #[test]
    fn conjugate_closed_form() {
        // Identity transform with known noise: the ELBO of N(μ, v) is
        // ln p(y, μ) − ½v(n/s² + 1/s_θ²) + ½ln(2πe v).
        let data = DataSample::new(vec![0.3, 1.7, 1.1, 0.8]).unwrap();
        let m = SingleParamModel::new(ScalarTransform::Identity, 0.5, -1.0, 2.0).unwrap();
        let t = SingleParamTarget { model: &m, data: &data };
        let (mu, v) = (0.7, 0.09);
        let exact = m.log_joint(&data, mu) - 0.5 * v * (4.0 / 0.5 + 1.0 / 2.0) + 0.5 * (2.0 * PI * std::f64::consts::E * v).ln();
        let q = GaussianParams::scalar(mu, v).unwrap();
        assert!((elbo_quadrature(&t, &q, 10).unwrap() - exact).abs() < 1e-8);

        let fit = elbo_oracle_fit(&t, &GaussianParams::scalar(0.0, 1.0).unwrap(), 100).unwrap();
        let prec = 4.0 / 0.5 + 1.0 / 2.0;
        let post_mean = (data.y().sum() / 0.5 - 1.0 / 2.0) / prec;
        assert!(fit.converged);
        assert!((fit.q.mean()[0] - post_mean).abs() < 1e-6);
        assert!((fit.q.cov()[(0, 0)] - 1.0 / prec).abs() < 1e-6);
    }

    #[test]
    fn exp_model_matches_closed_form() {
        for &(y, m, s2, mu, v) in &[(-1.0, 0.0, 1.0, -0.4, 0.3), (2.0, 0.5, 2.0, 0.6, 0.05), (-5.0, 0.0, 1.0, -1.2, 0.2)] {
            let (model, data) = exp_model_as_single(y, m, s2).unwrap();
            let t = SingleParamTarget { model: &model, data: &data };
            let q = GaussianParams::scalar(mu, v).unwrap();
            let quad = elbo_quadrature(&t, &q, 40).unwrap();
            let exact = exp_model_elbo(y, m, s2, mu, v).unwrap() + exp_model_elbo_constant(y, s2);
            assert!((quad - exact).abs() < 1e-6, "{quad} vs {exact}");
        }
    }

    #[test]
    fn point_mass_limit_decreases() {
        let (m, data) = linear_data();
        let t = LinearTarget { model: &m, data: &data };
        let mut last = f64::INFINITY;
        for k in [2, 4, 8, 12] {
            let v = 10f64.powi(-k);
            let e = elbo_quadrature(&t, &GaussianParams::diagonal(&[2.0, 1.0], &[v, v]).unwrap(), 8).unwrap();
            assert!(e < last);
            last = e;
        }
        let lp = t.ln_joint(&[2.0, 1.0]);
        let v: f64 = 1e-12;
        let e = elbo_quadrature(&t, &GaussianParams::diagonal(&[2.0, 1.0], &[v, v]).unwrap(), 8).unwrap();
        assert!((e - (lp + v.ln() + (2.0 * PI * std::f64::consts::E).ln())).abs() < 1e-6);
    }

    #[test]
    fn unresolved_order_is_flagged() {
        let (m, data) = linear_data();
        let t = LinearTarget { model: &m, data: &data };
        let wide = GaussianParams::diagonal(&[2.0, 1.0], &[1.0, 9.0]).unwrap();
        assert!(matches!(elbo_quadrature(&t, &wide, 2), Err(Error::QuadratureUnresolved { .. })));
        let bad = GaussianParams::scalar(0.0, 1.0).unwrap();
        assert!(matches!(elbo_quadrature(&t, &bad, 10), Err(Error::Shape { .. })));
    }

    #[test]
    fn oracle_exp_model_differs_from_map() {
        let (model, data) = exp_model_as_single(-1.0, 0.0, 1.0).unwrap();
        let t = SingleParamTarget { model: &model, data: &data };
        let map = single_param_map(&model, &data, 0.0).unwrap();
        let fit = elbo_oracle_fit(&t, &GaussianParams::scalar(map.map, map.laplace_var).unwrap(), 100).unwrap();
        assert!(fit.converged);
        assert!(fit.grad_norm <= 1e-6);
        assert!((fit.q.mean()[0] - map.map).abs() > 1e-3);
    }

    #[test]
    fn oracle_linear_is_restart_invariant_and_dominates() {
        let (m, data) = linear_data();
        let t = LinearTarget { model: &m, data: &data };
        let a = elbo_oracle_fit(&t, &GaussianParams::diagonal(&[2.0, 1.0], &[0.01, 0.05]).unwrap(), 200).unwrap();
        let b = elbo_oracle_fit(&t, &GaussianParams::diagonal(&[0.0, 4.0], &[1.0, 1.0]).unwrap(), 200).unwrap();
        assert!(a.converged && b.converged);
        assert!((a.elbo - b.elbo).abs() < 1e-8, "{} vs {}", a.elbo, b.elbo);
        let vl = crate::models::linear_fixed_point(&m, &data, &crate::models::LinearState::from_priors(&m), 1e-12, 500)
            .unwrap()
            .state;
        let qv = GaussianParams::diagonal(&[vl.mu_theta, vl.mu_lambda], &[vl.sigma_theta, vl.sigma_lambda]).unwrap();
        assert!(a.elbo >= elbo_quadrature(&t, &qv, DEFAULT_ORACLE_ORDER).unwrap() - 1e-9);
    }
}
