use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::models::{linear_fisher, GroundTruth, LinearLambdaModel};
use crate::numkit::GaussianParams;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LimitKind {
    /// `N(center, I⁻¹)` in `h` coordinates; `center` defaults to 0 and is
    /// `√n(MLE − truth)` when data are available.
    Rescaled { center: Option<[f64; 2]> },
    /// `N(MLE, I⁻¹/n)` on the parameter scale.
    Unrescaled { n: usize, mle: [f64; 2] },
}

/// Gaussian limit of the posterior for the linear model.
pub fn limit_density(model: &LinearLambdaModel, truth: &GroundTruth, kind: LimitKind) -> Result<GaussianParams> {
    let (_, inv) = linear_fisher(model, truth)?;
    match kind {
        LimitKind::Rescaled { center } => {
            GaussianParams::new(DVector::from_column_slice(&center.unwrap_or([0.0; 2])), inv)
        }
        LimitKind::Unrescaled { n, mle } => {
            if n == 0 {
                return Err(Error::Domain("sample size must be positive".into()));
            }
            GaussianParams::new(DVector::from_column_slice(&mle), inv / n as f64)
        }
    }
}

/// Axis-aligned one-standard-deviation ellipse.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ellipse {
    pub center: [f64; 2],
    pub half_width: f64,
    pub half_height: f64,
}

pub fn ellipse_data(g: &GaussianParams) -> Result<Ellipse> {
    if g.dim() != 2 {
        return Err(Error::Shape { expected: 2, found: g.dim() });
    }
    if !g.is_diagonal() {
        return Err(Error::Domain("ellipse data needs a diagonal covariance".into()));
    }
    let c = g.cov();
    Ok(Ellipse { center: [g.mean()[0], g.mean()[1]], half_width: c[(0, 0)].sqrt(), half_height: c[(1, 1)].sqrt() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    fn reference() -> (LinearLambdaModel, GroundTruth) {
        (LinearLambdaModel::new(3.0, 1.0, 1.0, 1.0, 1.0).unwrap(), GroundTruth { theta0: 2.0, lambda0: Some(2.0) })
    }

    #[test]
    fn fisher_plug_in() {
        let (m, t) = reference();
        let g = limit_density(&m, &t, LimitKind::Rescaled { center: None }).unwrap();
        assert!((g.cov()[(0, 0)] - 2f64.exp() / 9.0).abs() < 1e-14);
        assert_eq!(g.cov()[(1, 1)], 2.0);
        assert_eq!(g.mean().as_slice(), &[0.0, 0.0]);
        let e = ellipse_data(&g).unwrap();
        assert!((e.half_width - (2f64.exp() / 9.0).sqrt()).abs() < 1e-14);
        assert!((e.half_height - 2f64.sqrt()).abs() < 1e-14);

        let unit = LinearLambdaModel::new(1.0, 0.0, 1.0, 0.0, 1.0).unwrap();
        let g = limit_density(&unit, &GroundTruth { theta0: 0.0, lambda0: Some(0.0) }, LimitKind::Rescaled { center: None })
            .unwrap();
        assert_eq!(g.cov().diagonal().as_slice(), &[1.0, 2.0]);

        let u = limit_density(&m, &t, LimitKind::Unrescaled { n: 100, mle: [2.1, 1.9] }).unwrap();
        assert_eq!(u.mean().as_slice(), &[2.1, 1.9]);
        assert!((u.cov()[(1, 1)] - 0.02).abs() < 1e-15);
        assert!(limit_density(&m, &GroundTruth { theta0: 2.0, lambda0: None }, LimitKind::Rescaled { center: None }).is_err());
    }

    #[test]
    fn ellipse_examples() {
        let g = GaussianParams::diagonal(&[1.0, -1.0], &[4.0, 0.25]).unwrap();
        let e = ellipse_data(&g).unwrap();
        assert_eq!((e.center, e.half_width, e.half_height), ([1.0, -1.0], 2.0, 0.5));
        let full = GaussianParams::new(DVector::zeros(2), DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0])).unwrap();
        assert!(ellipse_data(&full).is_err());
        assert!(ellipse_data(&GaussianParams::scalar(0.0, 1.0).unwrap()).is_err());
    }
}
