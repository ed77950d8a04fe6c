use std::f64::consts::PI;
use std::fs;
use std::path::PathBuf;

use rayon::prelude::*;

use super::config::{ExperimentConfig, ExperimentKind};
use super::records::{
    summarize, write_csv, write_meta, HistogramRow, NonequivalenceRecord, NonequivalenceRow, ReplicationRecord, SummaryLine,
};
use super::rng::stream_rng;
use super::sampling::{sample_data, DataModel};
use crate::asymptotics::{
    elbo_oracle_fit, elbo_quadrature, tv_convergence_curve_with, Histogram, SingleParamTarget, TvOptions,
    DEFAULT_ORACLE_ORDER,
};
use crate::error::{Error, Result};
use crate::models::{
    exp_model_as_single, exp_model_elbo_grad, linear_closed_form_step, linear_fixed_point, linear_mle, DataSample,
    GroundTruth, LinearLambdaModel, LinearState, SingleParamModel,
};
use crate::numkit::GaussianParams;
use crate::vl::fixed_point_report;

/// Largest tolerated share of non-converged replications.
pub const EXCLUSION_BUDGET: f64 = 0.02;
/// Margin both non-equivalence inequalities must clear.
pub const NONEQUIVALENCE_THRESHOLD: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutput {
    pub kind: ExperimentKind,
    pub records: Vec<ReplicationRecord>,
    pub nonequivalence: Vec<NonequivalenceRecord>,
    pub summary: Vec<SummaryLine>,
    pub histograms: Vec<HistogramRow>,
}

impl ExperimentOutput {
    pub fn total(&self) -> usize {
        self.records.len() + self.nonequivalence.len()
    }

    pub fn excluded(&self) -> usize {
        self.records.iter().filter(|r| !r.converged).count()
            + self.nonequivalence.iter().filter(|r| !r.oracle_converged).count()
    }

    pub fn exclusion_rate(&self) -> f64 {
        if self.total() == 0 { 0.0 } else { self.excluded() as f64 / self.total() as f64 }
    }

    fn new(kind: ExperimentKind) -> Self {
        Self { kind, records: Vec::new(), nonequivalence: Vec::new(), summary: Vec::new(), histograms: Vec::new() }
    }
}

const SINGLE_QUANTITIES: [&str; 6] = ["mu_theta", "abs_err_theta", "h_theta", "sigma_theta", "n_sigma_theta", "sweeps"];
const LINEAR_QUANTITIES: [&str; 13] = [
    "mu_theta", "mu_lambda", "abs_err_theta", "abs_err_lambda", "h_theta", "h_lambda", "sigma_theta", "sigma_lambda",
    "n_sigma_theta", "n_sigma_lambda", "remainder_scaled_norm", "fixed_point_residual", "sweeps",
];
const TV_QUANTITIES: [&str; 7] = [
    "tv", "n_sigma_theta", "n_sigma_lambda", "varlap_half_width", "varlap_half_height", "half_width_gap",
    "half_height_gap",
];
const REMAINDER_QUANTITIES: [&str; 4] = ["remainder_theta", "remainder_lambda", "remainder_norm", "remainder_scaled_norm"];

fn grid(cfg: &ExperimentConfig) -> Vec<(usize, usize)> {
    cfg.n_grid.iter().flat_map(|&n| (0..cfg.reps).map(move |r| (n, r))).collect()
}

pub fn run_single_consistency(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    expect(cfg, ExperimentKind::SingleConsistency)?;
    let truth = GroundTruth { theta0: cfg.theta0, lambda0: None };
    let mut tasks = Vec::new();
    for (fi, _) in cfg.transforms.iter().enumerate() {
        for (n, rep) in grid(cfg) {
            tasks.push((fi, n, rep));
        }
    }
    let records: Vec<ReplicationRecord> = tasks
        .par_iter()
        .map(|&(fi, n, rep)| {
            let f = &cfg.transforms[fi];
            let name = f.name();
            let mut rng = stream_rng(cfg.seed, &format!("{}/{name}", cfg.experiment), n, rep);
            let data = sample_data(&DataModel::Single { f: f.clone(), noise_sd: cfg.noise_sd }, &truth, n, &mut rng)?;
            let model = SingleParamModel::new(f.clone(), cfg.noise_sd.powi(2), cfg.m_theta, cfg.s_theta.powi(2))
                .map_err(|e| Error::Config(e.to_string()))?;
            Ok(single_record(cfg, &model, &data, &truth, &name, n, rep))
        })
        .collect::<Result<_>>()?;
    let mut out = ExperimentOutput::new(cfg.experiment);
    out.summary = summarize(&records, &SINGLE_QUANTITIES);
    out.records = records;
    Ok(out)
}

fn single_record(
    cfg: &ExperimentConfig,
    model: &SingleParamModel,
    data: &DataSample,
    truth: &GroundTruth,
    label: &str,
    n: usize,
    rep: usize,
) -> ReplicationRecord {
    let mut r = ReplicationRecord::new(cfg.experiment.tag(), label, n, rep);
    match crate::models::single_param_map_with(model, data, cfg.m_theta, cfg.tol, cfg.max_sweeps) {
        Ok(fit) => {
            r.sweeps = fit.iterations;
            r.mu_theta = fit.map;
            r.sigma_theta = fit.laplace_var;
            r.h_theta = (n as f64).sqrt() * (fit.map - truth.theta0);
            r.residual_theta = (fit.grad * fit.laplace_var).abs();
            r.fixed_point_residual = r.residual_theta;
            r.used_fallback = fit.used_fallback;
            r.converged = r.fixed_point_residual <= cfg.tol;
            if !r.converged {
                r.failure = format!("Newton displacement {:e} above tol", r.fixed_point_residual);
            }
        }
        Err(e) => r.failure = e.to_string(),
    }
    r
}

/// Fits one linear-model replication and fills estimates, residuals and
/// remainder.
fn linear_record(
    cfg: &ExperimentConfig,
    model: &LinearLambdaModel,
    truth: &GroundTruth,
    n: usize,
    rep: usize,
) -> Result<ReplicationRecord> {
    let mut rng = stream_rng(cfg.seed, cfg.experiment.tag(), n, rep);
    let data = sample_data(&DataModel::Linear { a: model.a }, truth, n, &mut rng)?;
    let mut r = ReplicationRecord::new(cfg.experiment.tag(), "linear", n, rep);
    let fit = match linear_fixed_point(model, &data, &LinearState::from_priors(model), cfg.tol, cfg.max_sweeps) {
        Ok(f) => f,
        Err(e) => {
            r.failure = e.to_string();
            return Ok(r);
        }
    };
    let s = fit.state;
    let l0 = truth.lambda0.unwrap_or(f64::NAN);
    let rn = (n as f64).sqrt();
    r.sweeps = fit.sweeps;
    r.mu_theta = s.mu_theta;
    r.sigma_theta = s.sigma_theta;
    r.mu_lambda = s.mu_lambda;
    r.sigma_lambda = s.sigma_lambda;
    r.h_theta = rn * (s.mu_theta - truth.theta0);
    r.h_lambda = rn * (s.mu_lambda - l0);
    r.fixed_point_residual = linear_closed_form_step(model, &data, &s).map_or(f64::NAN, |t| t.max_change(&s));
    if let Ok((t, l)) = linear_mle(model, &data) {
        r.mle_theta = t;
        r.mle_lambda = l;
    }
    let generic = model.to_transform_model()?;
    match fixed_point_report(&generic, &data, s.to_variational()?, fit.sweeps, fit.converged) {
        Ok(rep) => {
            r.residual_theta = rep.residual_theta;
            r.residual_lambda = rep.residual_lambda;
            r.remainder_theta = rep.remainder[0];
            r.remainder_lambda = rep.remainder[1];
        }
        Err(e) => r.failure = e.to_string(),
    }
    r.converged = fit.converged && r.fixed_point_residual <= cfg.tol && r.failure.is_empty();
    if !fit.converged {
        r.failure = format!("no fixed point within {} sweeps", cfg.max_sweeps);
    } else if !r.converged && r.failure.is_empty() {
        r.failure = format!("fixed-point residual {:e} above tol", r.fixed_point_residual);
    }
    Ok(r)
}

fn normal_pdf(x: f64, var: f64) -> f64 {
    (-0.5 * x * x / var).exp() / (2.0 * PI * var).sqrt()
}

pub fn run_linear_asymptotics(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    expect(cfg, ExperimentKind::LinearAsymptotics)?;
    let model = cfg.linear_model()?;
    let truth = cfg.linear_truth();
    let records: Vec<ReplicationRecord> =
        grid(cfg).par_iter().map(|&(n, rep)| linear_record(cfg, &model, &truth, n, rep)).collect::<Result<_>>()?;
    let limit_var = [cfg.lambda0.exp() / (cfg.a * cfg.a), 2.0];
    let mut histograms = Vec::new();
    for &n in &cfg.n_grid {
        for (ci, coord) in ["h_theta", "h_lambda"].into_iter().enumerate() {
            let vals: Vec<f64> = records
                .iter()
                .filter(|r| r.n == n && r.converged)
                .map(|r| if ci == 0 { r.h_theta } else { r.h_lambda })
                .collect();
            if vals.is_empty() {
                continue;
            }
            let h = Histogram::new(&vals, cfg.bins)?;
            for (b, (w, &mass)) in h.edges.windows(2).zip(&h.masses).enumerate() {
                histograms.push(HistogramRow {
                    label: "linear".into(),
                    n,
                    coordinate: coord.into(),
                    bin: b,
                    lower: w[0],
                    upper: w[1],
                    mass,
                    limit_density: normal_pdf(0.5 * (w[0] + w[1]), limit_var[ci]),
                });
            }
        }
    }
    let mut out = ExperimentOutput::new(cfg.experiment);
    out.summary = summarize(&records, &LINEAR_QUANTITIES);
    out.records = records;
    out.histograms = histograms;
    Ok(out)
}

pub fn run_tv_curve(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    expect(cfg, ExperimentKind::TvCurve)?;
    let model = cfg.linear_model()?;
    let truth = cfg.linear_truth();
    let opts = TvOptions { tol: cfg.tol, max_sweeps: cfg.max_sweeps, ..TvOptions::default() };
    let curve = tv_convergence_curve_with(&model, &truth, &cfg.n_grid, cfg.reps, cfg.seed, &opts)?;
    let records: Vec<ReplicationRecord> = curve
        .rows
        .iter()
        .map(|row| {
            let mut r = ReplicationRecord::new(cfg.experiment.tag(), "linear", row.n, row.rep);
            let s = row.state;
            let rn = (row.n as f64).sqrt();
            r.converged = !row.excluded() && row.fixed_point_residual <= cfg.tol;
            r.sweeps = row.sweeps;
            r.mu_theta = s.mu_theta;
            r.sigma_theta = s.sigma_theta;
            r.mu_lambda = s.mu_lambda;
            r.sigma_lambda = s.sigma_lambda;
            r.h_theta = rn * (s.mu_theta - cfg.theta0);
            r.h_lambda = rn * (s.mu_lambda - cfg.lambda0);
            r.mle_theta = row.mle[0];
            r.mle_lambda = row.mle[1];
            r.fixed_point_residual = row.fixed_point_residual;
            r.tv = row.tv;
            if let Some(e) = row.varlap {
                r.varlap_ellipse = [e.center[0], e.center[1], e.half_width, e.half_height];
            }
            if let Some(e) = row.limit {
                r.limit_ellipse = [e.center[0], e.center[1], e.half_width, e.half_height];
            }
            r.failure = row.failure.clone().unwrap_or_default();
            if !r.converged && r.failure.is_empty() {
                r.failure = format!("fixed-point residual {:e} above tol", r.fixed_point_residual);
            }
            r
        })
        .collect();
    let mut out = ExperimentOutput::new(cfg.experiment);
    out.summary = summarize(&records, &TV_QUANTITIES);
    out.records = records;
    Ok(out)
}

pub fn run_remainder_decay(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    expect(cfg, ExperimentKind::RemainderDecay)?;
    let model = cfg.linear_model()?;
    let truth = cfg.linear_truth();
    let records: Vec<ReplicationRecord> =
        grid(cfg).par_iter().map(|&(n, rep)| linear_record(cfg, &model, &truth, n, rep)).collect::<Result<_>>()?;
    let mut out = ExperimentOutput::new(cfg.experiment);
    out.summary = summarize(&records, &REMAINDER_QUANTITIES);
    out.records = records;
    Ok(out)
}

/// Certificate that the MAP/Laplace pair is not an ELBO stationary point
/// for one observation of the exp model.
pub fn nonequivalence_record(y: f64, m: f64, s2: f64, budget: usize) -> Result<NonequivalenceRecord> {
    if !(y < 0.0) {
        return Err(Error::Config(format!("the non-equivalence certificate covers y < 0 only, got {y}")));
    }
    let (model, data) = exp_model_as_single(y, m, s2).map_err(|e| Error::Config(e.to_string()))?;
    let map = crate::models::single_param_map(&model, &data, m)?;
    let elbo_grad = {
        let (a, b) = exp_model_elbo_grad(y, m, s2, map.map, map.laplace_var)?;
        [a, b]
    };
    let target = SingleParamTarget { model: &model, data: &data };
    let at_map = GaussianParams::scalar(map.map, map.laplace_var)?;
    let oracle = elbo_oracle_fit(&target, &at_map, budget)?;
    Ok(NonequivalenceRecord {
        y,
        m,
        s2,
        mu_map: map.map,
        laplace_var: map.laplace_var,
        map_used_fallback: map.used_fallback,
        elbo_grad,
        elbo_at_map: elbo_quadrature(&target, &at_map, DEFAULT_ORACLE_ORDER)?,
        mu_oracle: oracle.q.mean()[0],
        var_oracle: oracle.q.cov()[(0, 0)],
        elbo_oracle: oracle.elbo,
        oracle_grad_norm: oracle.grad_norm,
        oracle_converged: oracle.converged,
        threshold: NONEQUIVALENCE_THRESHOLD,
    })
}

pub fn run_nonequivalence(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    expect(cfg, ExperimentKind::Nonequivalence)?;
    let s2 = cfg.s_theta.powi(2);
    let recs = cfg.y.iter().map(|&y| nonequivalence_record(y, cfg.m_theta, s2, cfg.max_sweeps)).collect::<Result<Vec<_>>>()?;
    let rows: Vec<NonequivalenceRow> = recs.iter().map(|r| NonequivalenceRow(r, r.label())).collect();
    let mut out = ExperimentOutput::new(cfg.experiment);
    out.summary = summarize(&rows, &["elbo_grad_norm", "mu_gap", "elbo_gap"]);
    out.nonequivalence = recs;
    Ok(out)
}

pub fn nonequivalence_report(records: &[NonequivalenceRecord]) -> String {
    let mut s = String::from("non-equivalence of MAP/Laplace and the exact ELBO optimum, y ~ N(e^theta, 1)\n");
    for r in records {
        s.push_str(&format!(
            "{}: m={} s2={} mu_map={:.10} laplace_var={:.10}\n  |grad ELBO| at (mu_map, laplace_var) = {:.6e} (threshold {:.0e}, margin {:.6e})\n  oracle mu={:.10} var={:.10} |grad|={:.2e}\n  |mu_oracle - mu_map| = {:.6e} (threshold {:.0e}, margin {:.6e})\n  ELBO gain of oracle = {:.6e}\n  {}\n",
            r.label(),
            r.m,
            r.s2,
            r.mu_map,
            r.laplace_var,
            r.elbo_grad_norm(),
            r.threshold,
            r.elbo_grad_norm() - r.threshold,
            r.mu_oracle,
            r.var_oracle,
            r.oracle_grad_norm,
            r.mu_gap(),
            r.threshold,
            r.mu_gap() - r.threshold,
            r.elbo_oracle - r.elbo_at_map,
            if r.certified() { "CERTIFIED" } else { "NOT CERTIFIED" },
        ));
    }
    s
}

fn expect(cfg: &ExperimentConfig, kind: ExperimentKind) -> Result<()> {
    if cfg.experiment != kind {
        return Err(Error::Config(format!("config is for '{}', expected '{kind}'", cfg.experiment)));
    }
    Ok(())
}

/// Runs the configured experiment on the current rayon pool.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    match cfg.experiment {
        ExperimentKind::SingleConsistency => run_single_consistency(cfg),
        ExperimentKind::LinearAsymptotics => run_linear_asymptotics(cfg),
        ExperimentKind::TvCurve => run_tv_curve(cfg),
        ExperimentKind::RemainderDecay => run_remainder_decay(cfg),
        ExperimentKind::Nonequivalence => run_nonequivalence(cfg),
    }
}

/// Writes `raw.csv`, `summary.csv`, `histograms.csv` (linear asymptotics
/// only) and `meta.txt` under `<output_dir>/<experiment>/`.
pub fn write_outputs(cfg: &ExperimentConfig, out: &ExperimentOutput) -> Result<PathBuf> {
    let dir = cfg.output_dir.join(cfg.experiment.tag());
    fs::create_dir_all(&dir)?;
    if cfg.experiment == ExperimentKind::Nonequivalence {
        write_csv(&dir.join("raw.csv"), NonequivalenceRecord::header(), out.nonequivalence.iter().map(|r| r.row()))?;
        fs::write(dir.join("report.txt"), nonequivalence_report(&out.nonequivalence))?;
    } else {
        write_csv(&dir.join("raw.csv"), ReplicationRecord::header(), out.records.iter().map(|r| r.row()))?;
    }
    write_csv(&dir.join("summary.csv"), SummaryLine::header(), out.summary.iter().map(|r| r.row()))?;
    if cfg.experiment == ExperimentKind::LinearAsymptotics {
        write_csv(&dir.join("histograms.csv"), HistogramRow::header(), out.histograms.iter().map(|r| r.row()))?;
    }
    write_meta(
        &dir.join("meta.txt"),
        cfg,
        &[
            ("rows_total", out.total().to_string()),
            ("rows_excluded", out.excluded().to_string()),
            ("exclusion_budget", EXCLUSION_BUDGET.to_string()),
        ],
    )?;
    Ok(dir)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationOutcome {
    pub dir: PathBuf,
    pub output: ExperimentOutput,
}

/// Runs on a pool of `cfg.workers` threads, writes all outputs, then fails
/// with [`Error::ExclusionBudget`] if too many replications were excluded.
pub fn simulate(cfg: &ExperimentConfig) -> Result<SimulationOutcome> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| Error::Config(format!("cannot start {} workers: {e}", cfg.workers)))?;
    let output = pool.install(|| run_experiment(cfg))?;
    let dir = write_outputs(cfg, &output)?;
    let rate = output.exclusion_rate();
    if rate > EXCLUSION_BUDGET {
        return Err(Error::ExclusionBudget { rate, budget: EXCLUSION_BUDGET });
    }
    Ok(SimulationOutcome { dir, output })
}
