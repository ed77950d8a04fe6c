use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::numkit::symmetrize;

const BACKTRACK: f64 = 0.5;
const ARMIJO: f64 = 1e-4;
const SHIFT_DELTA: f64 = 1e-8;
const MAX_BACKTRACKS: usize = 60;

#[derive(Debug, Clone, PartialEq)]
pub struct NewtonReport {
    pub iterations: usize,
    pub converged: bool,
    pub grad_norm: f64,
    pub value: f64,
    /// Iterations on which the Hessian had to be shifted.
    pub hessian_shifts: usize,
    /// Energy at the start and after every accepted step.
    pub history: Vec<f64>,
}

/// Safeguarded Newton ascent.
///
/// Stops when `‖grad‖ ≤ tol`, or when the Newton step falls below working
/// precision relative to `x`. The Hessian is shifted by `−(|λ_max| + δ)I`
/// whenever it is not negative definite, and steps are halved until the
/// Armijo condition holds or the energy at least does not decrease.
pub fn newton_maximize<E, G, H>(
    energy: E,
    grad: G,
    hess: H,
    x0: &DVector<f64>,
    tol: f64,
    max_iter: usize,
) -> Result<(DVector<f64>, NewtonReport)>
where
    E: Fn(&DVector<f64>) -> f64,
    G: Fn(&DVector<f64>) -> DVector<f64>,
    H: Fn(&DVector<f64>) -> DMatrix<f64>,
{
    let mut x = x0.clone();
    let mut f = energy(&x);
    if !f.is_finite() {
        return Err(Error::NonFinite(format!("energy at starting point is {f}")));
    }
    let mut report = NewtonReport {
        iterations: 0,
        converged: false,
        grad_norm: f64::NAN,
        value: f,
        hessian_shifts: 0,
        history: vec![f],
    };
    if max_iter == 0 {
        return Ok((x, report));
    }
    let d = x.len();
    loop {
        let g = grad(&x);
        let gnorm = g.norm();
        report.grad_norm = gnorm;
        report.value = f;
        if !gnorm.is_finite() {
            return Err(Error::NonFinite("gradient".into()));
        }
        if gnorm <= tol {
            report.converged = true;
            break;
        }
        if report.iterations >= max_iter {
            break;
        }
        let mut h = symmetrize(&hess(&x));
        if h.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("hessian".into()));
        }
        let lmax = SymmetricEigen::new(h.clone()).eigenvalues.max();
        if lmax > -SHIFT_DELTA {
            h -= DMatrix::identity(d, d) * (lmax.abs() + SHIFT_DELTA);
            report.hessian_shifts += 1;
        }
        let neg = -h;
        let step = match neg.clone().cholesky() {
            Some(c) => c.solve(&g),
            None => neg.lu().solve(&g).ok_or_else(|| Error::NonFinite("newton step".into()))?,
        };
        report.iterations += 1;
        if step.norm() <= 4.0 * f64::EPSILON * x.norm().max(1.0) {
            report.converged = true;
            break;
        }
        let slope = g.dot(&step);
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..MAX_BACKTRACKS {
            let xn = &x + &step * t;
            let fnew = energy(&xn);
            if fnew.is_finite() && (fnew >= f + ARMIJO * t * slope || fnew >= f) {
                accepted = Some((xn, fnew));
                break;
            }
            t *= BACKTRACK;
        }
        match accepted {
            Some((xn, fnew)) => {
                let moved = xn != x;
                x = xn;
                f = fnew;
                report.history.push(f);
                if !moved {
                    report.converged = true;
                    break;
                }
            }
            None => break,
        }
    }
    report.value = f;
    Ok((x, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_in_one_step() {
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let c = DVector::from_column_slice(&[1.0, -3.0]);
        let energy = |x: &DVector<f64>| {
            let r = x - &c;
            -0.5 * (r.transpose() * &a * &r)[(0, 0)]
        };
        let grad = |x: &DVector<f64>| -(&a * (x - &c));
        let hess = |_: &DVector<f64>| -a.clone();
        let (x, rep) = newton_maximize(energy, grad, hess, &DVector::zeros(2), 1e-12, 10).unwrap();
        assert!((x - &c).norm() < 1e-14);
        assert_eq!(rep.iterations, 1);
        assert!(rep.converged);
    }

    #[test]
    fn zero_budget_returns_start() {
        let x0 = DVector::from_element(1, 3.0);
        let (x, rep) = newton_maximize(
            |x| -x[0] * x[0],
            |x| DVector::from_element(1, -2.0 * x[0]),
            |_| DMatrix::from_element(1, 1, -2.0),
            &x0,
            1e-12,
            0,
        )
        .unwrap();
        assert_eq!(x, x0);
        assert!(!rep.converged);
    }

    #[test]
    fn nonconcave_start_is_shifted() {
        // f(x) = −x⁴/4 + x²/2 has maxima at ±1 and a minimum at 0
        let (x, rep) = newton_maximize(
            |x| -x[0].powi(4) / 4.0 + x[0] * x[0] / 2.0,
            |x| DVector::from_element(1, -x[0].powi(3) + x[0]),
            |x| DMatrix::from_element(1, 1, -3.0 * x[0] * x[0] + 1.0),
            &DVector::from_element(1, 0.1),
            1e-12,
            100,
        )
        .unwrap();
        assert!(rep.converged);
        assert!(rep.hessian_shifts > 0);
        assert!((x[0] - 1.0).abs() < 1e-10);
    }

    #[test]
    fn non_finite_start_is_error() {
        let r = newton_maximize(
            |_| f64::NAN,
            |_| DVector::zeros(1),
            |_| DMatrix::zeros(1, 1),
            &DVector::zeros(1),
            1e-8,
            5,
        );
        assert!(matches!(r, Err(Error::NonFinite(_))));
    }

    #[test]
    fn energy_never_decreases() {
        let f = |x: &DVector<f64>| -(x[0] - 2.0).exp() + x[0] - 0.1 * x[1] * x[1] + 0.05 * x[0] * x[1];
        let g = |x: &DVector<f64>| {
            DVector::from_column_slice(&[
                -(x[0] - 2.0).exp() + 1.0 + 0.05 * x[1],
                -0.2 * x[1] + 0.05 * x[0],
            ])
        };
        let h = |x: &DVector<f64>| {
            DMatrix::from_row_slice(2, 2, &[-(x[0] - 2.0).exp(), 0.05, 0.05, -0.2])
        };
        for start in [[-5.0, 4.0], [6.0, -3.0], [0.0, 0.0], [10.0, 10.0]] {
            let (_, rep) =
                newton_maximize(f, g, h, &DVector::from_column_slice(&start), 1e-10, 200).unwrap();
            assert!(rep.converged, "{start:?}");
            assert!(rep.history.windows(2).all(|w| w[1] >= w[0]), "{:?}", rep.history);
        }
    }
}
