use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use super::quadrature::{QuadratureRule, RuleKind};
use super::spd::{cholesky, log_det_from_cholesky, symmetrize};
use crate::error::{Error, Result};

const SYMMETRY_TOL: f64 = 1e-10;
const TV_HALF_WIDTH_SDS: f64 = 8.0;

/// Mean and SPD covariance of a multivariate normal.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianParams {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
}

impl GaussianParams {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let d = mean.len();
        if d == 0 {
            return Err(Error::Shape { expected: 1, found: 0 });
        }
        if cov.nrows() != d || cov.ncols() != d {
            return Err(Error::Shape { expected: d, found: cov.nrows().max(cov.ncols()) });
        }
        if mean.iter().chain(cov.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("gaussian parameters".into()));
        }
        let scale = cov.amax();
        for i in 0..d {
            for j in (i + 1)..d {
                if (cov[(i, j)] - cov[(j, i)]).abs() > SYMMETRY_TOL * scale {
                    return Err(Error::NotSpd(format!("covariance not symmetric at ({i},{j})")));
                }
            }
        }
        let cov = symmetrize(&cov);
        cholesky(&cov, "covariance")?;
        Ok(Self { mean, cov })
    }

    pub fn scalar(mean: f64, var: f64) -> Result<Self> {
        Self::new(DVector::from_element(1, mean), DMatrix::from_element(1, 1, var))
    }

    pub fn diagonal(means: &[f64], vars: &[f64]) -> Result<Self> {
        if means.len() != vars.len() {
            return Err(Error::Shape { expected: means.len(), found: vars.len() });
        }
        Self::new(
            DVector::from_column_slice(means),
            DMatrix::from_diagonal(&DVector::from_column_slice(vars)),
        )
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn variances(&self) -> DVector<f64> {
        self.cov.diagonal()
    }

    pub fn is_diagonal(&self) -> bool {
        let d = self.dim();
        (0..d).all(|i| (0..d).all(|j| i == j || self.cov[(i, j)] == 0.0))
    }

    pub fn log_det(&self) -> f64 {
        log_det_from_cholesky(&self.chol())
    }

    pub fn precision(&self) -> DMatrix<f64> {
        symmetrize(&self.chol().inverse())
    }

    pub fn ln_pdf(&self, x: &DVector<f64>) -> f64 {
        let chol = self.chol();
        let r = x - &self.mean;
        let z = chol.l().solve_lower_triangular(&r).expect("cholesky factor is nonsingular");
        -0.5 * (z.norm_squared() + log_det_from_cholesky(&chol) + self.dim() as f64 * (2.0 * PI).ln())
    }

    fn chol(&self) -> nalgebra::Cholesky<f64, nalgebra::Dyn> {
        nalgebra::Cholesky::new(self.cov.clone()).expect("covariance validated on construction")
    }
}

pub fn gaussian_entropy(g: &GaussianParams) -> f64 {
    let d = g.dim() as f64;
    0.5 * g.log_det() + 0.5 * d * (1.0 + (2.0 * PI).ln())
}

/// `KL(p ‖ q)`, clamped at zero against rounding.
pub fn kl_gaussians(p: &GaussianParams, q: &GaussianParams) -> Result<f64> {
    if p.dim() != q.dim() {
        return Err(Error::Shape { expected: p.dim(), found: q.dim() });
    }
    let q_prec = q.precision();
    let diff = q.mean() - p.mean();
    let trace = (&q_prec * p.cov()).trace();
    let quad = (diff.transpose() * &q_prec * &diff)[(0, 0)];
    let kl = 0.5 * (trace - p.dim() as f64 + quad + q.log_det() - p.log_det());
    Ok(kl.max(0.0))
}

/// Evaluates a density quickly at many points: stores the precision and
/// normalizing constant once.
struct DensityEval {
    mean: DVector<f64>,
    prec: DMatrix<f64>,
    log_norm: f64,
}

impl DensityEval {
    fn new(g: &GaussianParams) -> Self {
        let log_norm = -0.5 * (g.log_det() + g.dim() as f64 * (2.0 * PI).ln());
        Self { mean: g.mean().clone(), prec: g.precision(), log_norm }
    }

    fn pdf1(&self, x: f64) -> f64 {
        let r = x - self.mean[0];
        (self.log_norm - 0.5 * self.prec[(0, 0)] * r * r).exp()
    }

    fn pdf2(&self, x: f64, y: f64) -> f64 {
        let (r, s) = (x - self.mean[0], y - self.mean[1]);
        let p = &self.prec;
        let quad = p[(0, 0)] * r * r + 2.0 * p[(0, 1)] * r * s + p[(1, 1)] * s * s;
        (self.log_norm - 0.5 * quad).exp()
    }
}

/// Total variation distance `½∫|p − q|` by grid quadrature, for `d ≤ 2`.
///
/// `rule` must be a uniform grid on `[-1, 1]`; each axis is mapped onto
/// `[min mean − 8s, max mean + 8s]` where `s` is the larger of the two
/// standard deviations on that axis. Tensor product in two dimensions.
pub fn tv_gaussians(p: &GaussianParams, q: &GaussianParams, rule: &QuadratureRule) -> Result<f64> {
    if p.dim() != q.dim() {
        return Err(Error::Shape { expected: p.dim(), found: q.dim() });
    }
    let d = p.dim();
    if d > 2 {
        return Err(Error::UnsupportedDimension(d));
    }
    if rule.kind() != RuleKind::UniformGrid {
        return Err(Error::Domain("tv_gaussians needs a uniform-grid rule".into()));
    }
    if p == q {
        return Ok(0.0);
    }
    let axes: Vec<(f64, f64)> = (0..d)
        .map(|i| {
            let s = p.cov()[(i, i)].max(q.cov()[(i, i)]).sqrt();
            let lo = p.mean()[i].min(q.mean()[i]) - TV_HALF_WIDTH_SDS * s;
            let hi = p.mean()[i].max(q.mean()[i]) + TV_HALF_WIDTH_SDS * s;
            (0.5 * (lo + hi), 0.5 * (hi - lo))
        })
        .collect();
    let map = |axis: usize, t: f64| axes[axis].0 + axes[axis].1 * t;
    let (pe, qe) = (DensityEval::new(p), DensityEval::new(q));
    let nodes = rule.nodes();
    let weights = rule.weights();
    let total = if d == 1 {
        let mut acc = 0.0;
        for (&t, &w) in nodes.iter().zip(weights) {
            let x = map(0, t);
            acc += w * (pe.pdf1(x) - qe.pdf1(x)).abs();
        }
        acc * axes[0].1
    } else {
        let ys: Vec<f64> = nodes.iter().map(|&t| map(1, t)).collect();
        let mut acc = 0.0;
        for (&t, &wx) in nodes.iter().zip(weights) {
            let x = map(0, t);
            let mut row = 0.0;
            for (&y, &wy) in ys.iter().zip(weights) {
                row += wy * (pe.pdf2(x, y) - qe.pdf2(x, y)).abs();
            }
            acc += wx * row;
        }
        acc * axes[0].1 * axes[1].1
    };
    Ok((0.5 * total).clamp(0.0, 1.0))
}

/// Diagonal Gaussian closest to `target` in `KL(· ‖ target)`: same mean,
/// variances `1 / (Σ⁻¹)_jj`.
pub fn best_diagonal_approx(target: &GaussianParams) -> GaussianParams {
    if target.is_diagonal() {
        return target.clone();
    }
    let prec = target.precision();
    let vars: Vec<f64> = prec.diagonal().iter().map(|p| 1.0 / p).collect();
    GaussianParams::diagonal(target.mean().as_slice(), &vars)
        .expect("reciprocal precision diagonal of an SPD matrix is positive")
}
