use nalgebra::{Cholesky, DMatrix, Dyn};

use crate::error::{Error, Result};

/// Returns `(a + aᵀ) / 2`.
pub fn symmetrize(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

pub(crate) fn cholesky(a: &DMatrix<f64>, what: &str) -> Result<Cholesky<f64, Dyn>> {
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(what.to_string()));
    }
    Cholesky::new(symmetrize(a)).ok_or_else(|| Error::NotSpd(what.to_string()))
}

/// Inverse of a symmetric positive definite matrix, symmetrized.
pub fn inverse_spd(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let chol = cholesky(a, "inverse_spd")?;
    Ok(symmetrize(&chol.inverse()))
}

pub(crate) fn log_det_from_cholesky(chol: &Cholesky<f64, Dyn>) -> f64 {
    2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>()
}
