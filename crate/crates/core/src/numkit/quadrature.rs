use std::f64::consts::{PI, SQRT_2};

use crate::error::{Error, Result};

pub const MAX_GAUSS_HERMITE_ORDER: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RuleKind {
    /// Physicists' Gauss–Hermite rule for `∫ e^{-x²} g(x) dx`.
    GaussHermite,
    /// Trapezoid rule on equally spaced points of `[-1, 1]`.
    UniformGrid,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    nodes: Vec<f64>,
    weights: Vec<f64>,
    kind: RuleKind,
    order: usize,
}

impl QuadratureRule {
    /// Trapezoid rule with `points ≥ 2` equally spaced nodes on `[-1, 1]`.
    pub fn uniform_grid(points: usize) -> Result<Self> {
        if points < 2 {
            return Err(Error::OrderOutOfRange(points));
        }
        let h = 2.0 / (points - 1) as f64;
        let nodes = (0..points).map(|i| -1.0 + i as f64 * h).collect();
        let mut weights = vec![h; points];
        weights[0] = 0.5 * h;
        weights[points - 1] = 0.5 * h;
        Ok(Self { nodes, weights, kind: RuleKind::UniformGrid, order: points })
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn kind(&self) -> RuleKind {
        self.kind
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// `Σ w_i g(x_i)`.
    pub fn integrate(&self, mut g: impl FnMut(f64) -> f64) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(&x, &w)| w * g(x)).sum()
    }

    /// `E[g(Z)]` for `Z ~ N(0, 1)`; only meaningful for Gauss–Hermite rules.
    pub fn expect_standard_normal(&self, mut g: impl FnMut(f64) -> f64) -> f64 {
        self.integrate(|x| g(SQRT_2 * x)) / PI.sqrt()
    }

    /// Standard-normal nodes `√2 x_i` and probability weights `w_i / √π`.
    pub fn standard_normal_points(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        let norm = PI.sqrt();
        self.nodes.iter().zip(&self.weights).map(move |(&x, &w)| (SQRT_2 * x, w / norm))
    }
}

/// Gauss–Hermite rule of the given order, nodes ascending.
///
/// Newton iteration on the orthonormal Hermite recurrence with the usual
/// asymptotic initial guesses for the largest roots.
pub fn gauss_hermite(order: usize) -> Result<QuadratureRule> {
    if order == 0 || order > MAX_GAUSS_HERMITE_ORDER {
        return Err(Error::OrderOutOfRange(order));
    }
    let n = order;
    let nf = n as f64;
    let pim4 = PI.powf(-0.25);
    let m = n.div_ceil(2);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let mut z = 0.0f64;
    for i in 0..m {
        z = match i {
            0 => (2.0 * nf + 1.0).sqrt() - 1.85575 * (2.0 * nf + 1.0).powf(-1.0 / 6.0),
            1 => z - 1.14 * nf.powf(0.426) / z,
            2 => 1.86 * z - 0.86 * nodes[0],
            3 => 1.91 * z - 0.91 * nodes[1],
            _ => 2.0 * z - nodes[i - 2],
        };
        let mut pp = 0.0;
        for _ in 0..100 {
            let mut p1 = pim4;
            let mut p2 = 0.0;
            for j in 1..=n {
                let p3 = p2;
                p2 = p1;
                let jf = j as f64;
                p1 = z * (2.0 / jf).sqrt() * p2 - ((jf - 1.0) / jf).sqrt() * p3;
            }
            pp = (2.0 * nf).sqrt() * p2;
            let step = p1 / pp;
            z -= step;
            if step.abs() <= 3e-16 * z.abs().max(1.0) {
                break;
            }
        }
        nodes[i] = z;
        nodes[n - 1 - i] = -z;
        weights[i] = 2.0 / (pp * pp);
        weights[n - 1 - i] = weights[i];
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    nodes.reverse();
    weights.reverse();
    Ok(QuadratureRule { nodes, weights, kind: RuleKind::GaussHermite, order })
}
