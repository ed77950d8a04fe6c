//! Scalar and small-matrix numerical primitives.

mod gaussian;
mod lambert;
mod quadrature;
mod spd;

pub use gaussian::{
    best_diagonal_approx, gaussian_entropy, kl_gaussians, tv_gaussians, GaussianParams,
};
pub use lambert::{lambert_w, lambert_w_log, solve_exp_linear};
pub use quadrature::{gauss_hermite, QuadratureRule, RuleKind, MAX_GAUSS_HERMITE_ORDER};
pub use spd::{inverse_spd, symmetrize};
