//! Frequentist diagnostics: rescaled estimators, limit densities, ELBO
//! oracles and total-variation convergence.

mod elbo;
mod limit;
mod rescale;
mod summary;
mod tv_curve;

pub use elbo::{
    elbo_oracle_fit, elbo_quadrature, LinearTarget, LogJointDensity, OracleFit, SingleParamTarget,
    DEFAULT_ORACLE_ORDER,
};
pub use limit::{ellipse_data, limit_density, Ellipse, LimitKind};
pub use rescale::{rescale, EstimatorTag, RescaledEstimate};
pub use summary::{quantile, BoxStats, EmpiricalSummary, Histogram, SUMMARY_PROBS};
pub use tv_curve::{
    median_ladder, tv_convergence_curve, tv_convergence_curve_with, TvCurve, TvOptions, TvRow, TvSummary, TV_STREAM_LABEL,
};
