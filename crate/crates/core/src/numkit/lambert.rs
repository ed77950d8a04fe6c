//! Principal branch of the Lambert W function on the nonnegative reals.

use std::f64::consts::E;

use crate::error::{Error, Result};

const MAX_ITER: usize = 50;
const RESIDUAL_TARGET: f64 = 1e-14;

/// `W(x)` for `x ≥ 0`, i.e. the `w ≥ 0` with `w·e^w = x`.
///
/// Halley iteration seeded with `ln x − ln ln x` above `e`; below `e` the
/// seed is `ln(1 + x)`, which is within a factor two of the root.
pub fn lambert_w(x: f64) -> Result<f64> {
    if !x.is_finite() || x < 0.0 {
        return Err(Error::Domain(format!("lambert_w requires finite x >= 0, got {x}")));
    }
    if x == 0.0 {
        return Ok(0.0);
    }
    let mut w = if x > E {
        let l1 = x.ln();
        l1 - l1.ln()
    } else {
        x.ln_1p()
    };
    let target = RESIDUAL_TARGET * x;
    for _ in 0..MAX_ITER {
        let ew = w.exp();
        let f = w * ew - x;
        if f.abs() <= target {
            break;
        }
        let wp1 = w + 1.0;
        let step = f / (ew * wp1 - (w + 2.0) * f / (2.0 * wp1));
        w -= step;
        if step.abs() <= 2.0 * f64::EPSILON * w.abs() {
            break;
        }
    }
    Ok(w.max(0.0))
}

/// `W(exp(log_x))` without forming `exp(log_x)`.
///
/// For `log_x ≥ 1` this solves `w + ln w = log_x` directly (so `w ≥ 1`);
/// below that the argument is representable and the direct branch is used.
pub fn lambert_w_log(log_x: f64) -> Result<f64> {
    if !log_x.is_finite() {
        return Err(Error::Domain(format!("lambert_w_log requires finite input, got {log_x}")));
    }
    if log_x < 1.0 {
        return lambert_w(log_x.exp());
    }
    let mut w = log_x - log_x.ln();
    for _ in 0..MAX_ITER {
        let g = w + w.ln() - log_x;
        if g.abs() <= RESIDUAL_TARGET * log_x {
            break;
        }
        let g1 = 1.0 + 1.0 / w;
        let g2 = -1.0 / (w * w);
        let step = g / (g1 - 0.5 * g * g2 / g1);
        w -= step;
        if step.abs() <= 2.0 * f64::EPSILON * w {
            break;
        }
    }
    Ok(w)
}

/// Unique real solution of `e^x (a x + c) = b` for `a > 0`, `b ≥ 0`.
///
/// `x = W(b e^{c/a} / a) − c/a`, evaluated through the log branch and then
/// polished with Newton steps on `x + ln(a x + c) = ln b`, which removes the
/// cancellation in `W(·) − c/a` when `c/a` is large.
pub fn solve_exp_linear(a: f64, c: f64, b: f64) -> Result<f64> {
    if !(a.is_finite() && a > 0.0) {
        return Err(Error::Domain(format!("solve_exp_linear requires a > 0, got {a}")));
    }
    if !(b.is_finite() && b >= 0.0) {
        return Err(Error::Domain(format!("solve_exp_linear requires b >= 0, got {b}")));
    }
    if !c.is_finite() {
        return Err(Error::Domain(format!("solve_exp_linear requires finite c, got {c}")));
    }
    let shift = c / a;
    if b == 0.0 {
        return Ok(-shift);
    }
    let mut x = lambert_w_log(b.ln() - a.ln() + shift)? - shift;
    let ln_b = b.ln();
    for _ in 0..3 {
        let inner = a * x + c;
        if inner <= 0.0 {
            break;
        }
        let g = x + inner.ln() - ln_b;
        let step = g / (1.0 + a / inner);
        if !step.is_finite() {
            break;
        }
        x -= step;
        if step.abs() <= f64::EPSILON * x.abs().max(1.0) {
            break;
        }
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if f(mid) > 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
            if hi - lo < 1e-15 {
                break;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn trivial_points() {
        assert_eq!(lambert_w(0.0).unwrap(), 0.0);
        assert!((lambert_w(E).unwrap() - 1.0).abs() < 1e-15);
        assert!((lambert_w_log(1.0).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn w_of_ten_matches_bisection() {
        let oracle = bisect(|w| w * w.exp() - 10.0, 0.0, 10f64.ln() + 1.0);
        let w = lambert_w(10.0).unwrap();
        assert!((w - oracle).abs() < 1e-13, "{w} vs {oracle}");
        let via_log = lambert_w_log(10f64.ln()).unwrap();
        assert!((via_log - w).abs() <= 1e-10 * w);
    }

    #[test]
    fn log_branch_at_700_matches_newton_oracle() {
        let mut w: f64 = 700.0;
        for _ in 0..100 {
            w -= (w + w.ln() - 700.0) / (1.0 + 1.0 / w);
        }
        let got = lambert_w_log(700.0).unwrap();
        assert!((got - w).abs() <= 1e-12 * w);
        let direct = lambert_w(700f64.exp()).unwrap();
        assert!((got - direct).abs() <= 1e-10 * direct);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(lambert_w(-1.0).is_err());
        assert!(lambert_w(f64::NAN).is_err());
        assert!(lambert_w(f64::INFINITY).is_err());
        assert!(lambert_w_log(f64::NAN).is_err());
        assert!(solve_exp_linear(0.0, 1.0, 1.0).is_err());
        assert!(solve_exp_linear(1.0, 1.0, -1.0).is_err());
    }

    #[test]
    fn exp_linear_examples() {
        assert!(solve_exp_linear(1.0, 1.0, 1.0).unwrap().abs() < 1e-14);
        assert!((solve_exp_linear(1.0, 0.0, E).unwrap() - 1.0).abs() < 1e-14);
        let oracle = bisect(|x| x.exp() * (2.0 * x - 1.0) - 5.0, 0.5, 3.0);
        let x = solve_exp_linear(2.0, -1.0, 5.0).unwrap();
        assert!((x - oracle).abs() < 1e-12);
        assert!((x.exp() * (2.0 * x - 1.0) - 5.0).abs() <= 1e-9 * 5.0);
    }

    #[test]
    fn exp_linear_large_shift_residual() {
        // the shape of the variance update at n = 1e6
        let (a, c, b) = (2.0, 1e6 - 2.0, 7.389e6);
        let x = solve_exp_linear(a, c, b).unwrap();
        let resid = x.exp() * (a * x + c) - b;
        assert!(resid.abs() <= 1e-9 * b, "residual {resid}");
    }

    #[test]
    fn monotone_on_grid() {
        let mut last = 0.0;
        for k in 0..=400 {
            let x = 10f64.powf(-8.0 + 16.0 * k as f64 / 400.0);
            let w = lambert_w(x).unwrap();
            assert!(w >= last);
            last = w;
        }
    }
}
