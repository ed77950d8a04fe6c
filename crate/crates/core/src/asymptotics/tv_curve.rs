use rayon::prelude::*;

use super::limit::{ellipse_data, limit_density, Ellipse, LimitKind};
use super::summary::quantile;
use crate::error::{Error, Result};
use crate::harness::{sample_data, stream_rng, DataModel};
use crate::models::{linear_closed_form_step, linear_fixed_point, linear_mle, GroundTruth, LinearLambdaModel, LinearState};
use crate::numkit::{tv_gaussians, GaussianParams, QuadratureRule};

pub const TV_STREAM_LABEL: &str = "tv-curve";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TvOptions {
    /// Points per axis of the TV grid.
    pub grid_points: usize,
    pub tol: f64,
    pub max_sweeps: usize,
}

impl Default for TvOptions {
    fn default() -> Self {
        Self { grid_points: 401, tol: 1e-10, max_sweeps: 500 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TvRow {
    pub n: usize,
    pub rep: usize,
    pub converged: bool,
    pub sweeps: usize,
    pub state: LinearState,
    /// Largest parameter change of one further sweep from the returned state.
    pub fixed_point_residual: f64,
    pub mle: [f64; 2],
    /// NaN for excluded replications.
    pub tv: f64,
    pub varlap: Option<Ellipse>,
    pub limit: Option<Ellipse>,
    /// Why the replication was excluded, if it was.
    pub failure: Option<String>,
}

impl TvRow {
    pub fn excluded(&self) -> bool {
        self.failure.is_some()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TvSummary {
    pub n: usize,
    pub total: usize,
    pub excluded: usize,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TvCurve {
    /// Sorted by `(n, rep)`.
    pub rows: Vec<TvRow>,
    pub summaries: Vec<TvSummary>,
}

impl TvCurve {
    pub fn excluded(&self) -> usize {
        self.rows.iter().filter(|r| r.excluded()).count()
    }
}

pub fn tv_convergence_curve(
    model: &LinearLambdaModel,
    truth: &GroundTruth,
    n_grid: &[usize],
    reps: usize,
    seed: u64,
) -> Result<TvCurve> {
    tv_convergence_curve_with(model, truth, n_grid, reps, seed, &TvOptions::default())
}

/// Replications run on the current rayon pool; each draws from its own
/// `(seed, n, rep)` stream so results do not depend on scheduling.
pub fn tv_convergence_curve_with(
    model: &LinearLambdaModel,
    truth: &GroundTruth,
    n_grid: &[usize],
    reps: usize,
    seed: u64,
    opts: &TvOptions,
) -> Result<TvCurve> {
    if n_grid.is_empty() || n_grid.windows(2).any(|w| w[0] >= w[1]) || n_grid[0] == 0 {
        return Err(Error::Config("n_grid must be positive and strictly increasing".into()));
    }
    if reps == 0 {
        return Err(Error::Config("reps must be at least 1".into()));
    }
    if truth.lambda0.is_none() {
        return Err(Error::Config("tv curve needs lambda0".into()));
    }
    let rule = QuadratureRule::uniform_grid(opts.grid_points)?;
    let tasks: Vec<(usize, usize)> = n_grid.iter().flat_map(|&n| (0..reps).map(move |r| (n, r))).collect();
    let rows: Vec<TvRow> = tasks
        .par_iter()
        .map(|&(n, rep)| one_replication(model, truth, n, rep, seed, opts, &rule))
        .collect::<Result<_>>()?;

    let summaries = n_grid
        .iter()
        .map(|&n| {
            let group: Vec<&TvRow> = rows.iter().filter(|r| r.n == n).collect();
            let mut tv: Vec<f64> = group.iter().filter(|r| !r.excluded()).map(|r| r.tv).collect();
            tv.sort_by(f64::total_cmp);
            TvSummary {
                n,
                total: group.len(),
                excluded: group.len() - tv.len(),
                median: quantile(&tv, 0.5),
                q1: quantile(&tv, 0.25),
                q3: quantile(&tv, 0.75),
            }
        })
        .collect();
    Ok(TvCurve { rows, summaries })
}

fn one_replication(
    model: &LinearLambdaModel,
    truth: &GroundTruth,
    n: usize,
    rep: usize,
    seed: u64,
    opts: &TvOptions,
    rule: &QuadratureRule,
) -> Result<TvRow> {
    let mut rng = stream_rng(seed, TV_STREAM_LABEL, n, rep);
    let data = sample_data(&DataModel::Linear { a: model.a }, truth, n, &mut rng)?;
    let mut row = TvRow {
        n,
        rep,
        converged: false,
        sweeps: 0,
        state: LinearState::from_priors(model),
        fixed_point_residual: f64::NAN,
        mle: [f64::NAN; 2],
        tv: f64::NAN,
        varlap: None,
        limit: None,
        failure: None,
    };
    let fit = match linear_fixed_point(model, &data, &LinearState::from_priors(model), opts.tol, opts.max_sweeps) {
        Ok(f) => f,
        Err(e) => {
            row.failure = Some(e.to_string());
            return Ok(row);
        }
    };
    row.converged = fit.converged;
    row.sweeps = fit.sweeps;
    row.state = fit.state;
    row.fixed_point_residual = linear_closed_form_step(model, &data, &fit.state)
        .map(|s| s.max_change(&fit.state))
        .unwrap_or(f64::NAN);
    if !fit.converged {
        row.failure = Some(format!("no fixed point within {} sweeps", opts.max_sweeps));
        return Ok(row);
    }
    let (theta_hat, lambda_hat) = match linear_mle(model, &data) {
        Ok(m) => m,
        Err(e) => {
            row.failure = Some(e.to_string());
            return Ok(row);
        }
    };
    row.mle = [theta_hat, lambda_hat];
    let l0 = truth.lambda0.unwrap_or(f64::NAN);
    let rn = (n as f64).sqrt();
    let nf = n as f64;
    let s = fit.state;
    let q = GaussianParams::diagonal(
        &[rn * (s.mu_theta - truth.theta0), rn * (s.mu_lambda - l0)],
        &[nf * s.sigma_theta, nf * s.sigma_lambda],
    )?;
    let limit = limit_density(
        model,
        truth,
        LimitKind::Rescaled { center: Some([rn * (theta_hat - truth.theta0), rn * (lambda_hat - l0)]) },
    )?;
    row.tv = tv_gaussians(&q, &limit, rule)?;
    row.varlap = Some(ellipse_data(&q)?);
    row.limit = Some(ellipse_data(&limit)?);
    Ok(row)
}

/// Median TV per n from a curve, for quick checks.
pub fn median_ladder(curve: &TvCurve) -> Vec<f64> {
    curve.summaries.iter().map(|s| s.median).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reference() -> (LinearLambdaModel, GroundTruth) {
        (LinearLambdaModel::new(3.0, 1.0, 1.0, 1.0, 1.0).unwrap(), GroundTruth { theta0: 2.0, lambda0: Some(2.0) })
    }

    #[test]
    fn deterministic_and_shaped() {
        let (m, t) = reference();
        let opts = TvOptions { grid_points: 101, ..TvOptions::default() };
        let a = tv_convergence_curve_with(&m, &t, &[50, 500], 3, 7, &opts).unwrap();
        let b = tv_convergence_curve_with(&m, &t, &[50, 500], 3, 7, &opts).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.rows.len(), 6);
        assert_eq!(a.rows.iter().map(|r| (r.n, r.rep)).collect::<Vec<_>>(), vec![(50, 0), (50, 1), (50, 2), (500, 0), (500, 1), (500, 2)]);
        for r in &a.rows {
            let e = r.varlap.unwrap();
            assert!((e.half_width - (r.n as f64 * r.state.sigma_theta).sqrt()).abs() < 1e-12);
            assert!((e.half_height - (r.n as f64 * r.state.sigma_lambda).sqrt()).abs() < 1e-12);
            assert!((0.0..=1.0).contains(&r.tv));
        }
        assert_eq!(a.summaries[0].total, 3);
        assert!(tv_convergence_curve_with(&m, &t, &[500, 50], 3, 7, &opts).is_err());
    }
}
