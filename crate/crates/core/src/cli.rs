//! Command-line front end: `fit`, `simulate`, `diagnose` and `selftest`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{ArgAction, Parser, Subcommand};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::asymptotics::{elbo_oracle_fit, elbo_quadrature, LinearTarget, DEFAULT_ORACLE_ORDER};
use crate::error::{Error, Result};
use crate::harness::{
    fmt_f64, nonequivalence_record, nonequivalence_report, parse_pairs, sample_data, simulate, stream_rng, DataModel,
    ExperimentConfig, NonequivalenceRecord, NONEQUIVALENCE_THRESHOLD,
};
use crate::models::{
    linear_fixed_point, DataSample, GroundTruth, LinearLambdaModel, LinearState, ScalarTransform, SingleParamModel,
};
use crate::numkit::{
    best_diagonal_approx, gauss_hermite, gaussian_entropy, kl_gaussians, lambert_w, GaussianParams,
};
use crate::vl::{run_to_fixed_point_with, FixedPointReport, TransformModel, VariationalState, VlSettings};

/// Seed for the built-in diagnostics, fixed so reports are reproducible.
const DIAGNOSE_SEED: u64 = 20_190_801;

#[derive(Debug, Parser)]
#[command(name = "varlap", version, about = "Variational Laplace fitting and asymptotic experiments")]
pub struct Cli {
    /// More output on stderr; repeat for more.
    #[arg(short, long, action = ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a model to a data file (one observation per line).
    Fit {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Run a simulation experiment.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Run a named diagnostic: nonequivalence, underdispersion or oracle-gap.
    Diagnose {
        name: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fast invariant checks.
    Selftest,
}

/// Parses `args` (including the program name) and runs; returns the exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let verbose = cli.verbose;
    let result = match cli.command {
        Command::Fit { config, data, overrides } => cmd_fit(&config, data.as_deref(), &overrides, verbose),
        Command::Simulate { config, overrides } => cmd_simulate(&config, &overrides, verbose),
        Command::Diagnose { name, out } => cmd_diagnose(&name, out.as_deref()),
        Command::Selftest => cmd_selftest(),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("varlap: {e}");
            e.exit_code()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig {
    /// `linear` or a transform name for the single-parameter model.
    pub model: String,
    pub a: f64,
    pub m_theta: f64,
    pub s_theta: f64,
    pub m_lambda: f64,
    pub s_lambda: f64,
    pub noise_sd: f64,
    pub data: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub tol: f64,
    pub max_sweeps: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            model: "linear".into(),
            a: 1.0,
            m_theta: 0.0,
            s_theta: 1.0,
            m_lambda: 0.0,
            s_lambda: 1.0,
            noise_sd: 1.0,
            data: None,
            output: None,
            tol: 1e-10,
            max_sweeps: 500,
        }
    }
}

impl FitConfig {
    pub fn parse(text: &str, overrides: &[String]) -> Result<Self> {
        let mut pairs = parse_pairs(text)?;
        for o in overrides {
            let (k, v) = o.split_once('=').ok_or_else(|| Error::Config(format!("override '{o}' is not key=value")))?;
            pairs.push((k.trim().to_string(), v.trim().to_string()));
        }
        let mut c = Self::default();
        for (k, v) in &pairs {
            let num = |v: &str| -> Result<f64> {
                v.parse::<f64>()
                    .ok()
                    .filter(|x| x.is_finite())
                    .ok_or_else(|| Error::Config(format!("{k}: '{v}' is not a finite number")))
            };
            match k.as_str() {
                "model" => c.model = v.clone(),
                "a" => c.a = num(v)?,
                "m_theta" => c.m_theta = num(v)?,
                "s_theta" => c.s_theta = num(v)?,
                "m_lambda" => c.m_lambda = num(v)?,
                "s_lambda" => c.s_lambda = num(v)?,
                "noise_sd" => c.noise_sd = num(v)?,
                "data" => c.data = Some(PathBuf::from(v)),
                "output" => c.output = Some(PathBuf::from(v)),
                "tol" => c.tol = num(v)?,
                "max_sweeps" => {
                    c.max_sweeps = v.parse().map_err(|_| Error::Config(format!("max_sweeps: '{v}' is not an integer")))?
                }
                _ => return Err(Error::Config(format!("unknown key '{k}'"))),
            }
        }
        if !(c.tol > 0.0) || c.max_sweeps == 0 {
            return Err(Error::Config("tol must be positive and max_sweeps at least 1".into()));
        }
        Ok(c)
    }

    pub fn transform_model(&self) -> Result<TransformModel> {
        let cfg = |e: Error| Error::Config(e.to_string());
        if self.model == "linear" {
            LinearLambdaModel::new(self.a, self.m_theta, self.s_theta.powi(2), self.m_lambda, self.s_lambda.powi(2))
                .and_then(|m| m.to_transform_model())
                .map_err(cfg)
        } else {
            let f = ScalarTransform::from_name(&self.model)?;
            SingleParamModel::new(f, self.noise_sd.powi(2), self.m_theta, self.s_theta.powi(2))
                .and_then(|m| m.to_transform_model())
                .map_err(cfg)
        }
    }

    fn echo(&self) -> String {
        let mut s = format!(
            "model={}\na={}\nm_theta={}\ns_theta={}\nm_lambda={}\ns_lambda={}\nnoise_sd={}\ntol={}\nmax_sweeps={}\n",
            self.model, self.a, self.m_theta, self.s_theta, self.m_lambda, self.s_lambda, self.noise_sd, self.tol,
            self.max_sweeps
        );
        if let Some(d) = &self.data {
            s.push_str(&format!("data={}\n", d.display()));
        }
        s
    }
}

/// Plain decimal text, one value per line; blank lines and `#` comments skipped.
pub fn read_data_file(path: &Path) -> Result<DataSample> {
    let text = fs::read_to_string(path)?;
    let mut y = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let t = line.split('#').next().unwrap_or("").trim();
        if t.is_empty() {
            continue;
        }
        let v: f64 = t
            .parse()
            .map_err(|_| Error::Config(format!("{}:{}: '{t}' is not a number", path.display(), i + 1)))?;
        y.push(v);
    }
    if y.is_empty() {
        return Err(Error::DegenerateData(format!("{} holds no observations", path.display())));
    }
    DataSample::new(y)
}

fn gaussian_lines(out: &mut String, name: &str, g: &GaussianParams) {
    let d = g.dim();
    for i in 0..d {
        let suffix = if d == 1 { String::new() } else { format!("_{i}") };
        let _ = writeln!(out, "mu_{name}{suffix}={}", fmt_f64(g.mean()[i]));
        let _ = writeln!(out, "sigma_{name}{suffix}={}", fmt_f64(g.cov()[(i, i)]));
    }
}

fn fit_result_text(cfg: &FitConfig, n: usize, state: &VariationalState, report: Option<&FixedPointReport>, note: &str) -> String {
    let mut s = String::from("# varlap fit result; sigma_* are variances\n");
    let _ = writeln!(s, "model={}", cfg.model);
    let _ = writeln!(s, "n={n}");
    let _ = writeln!(s, "converged={}", report.is_some_and(|r| r.converged));
    if let Some(r) = report {
        let _ = writeln!(s, "sweeps={}", r.sweeps);
    }
    gaussian_lines(&mut s, "theta", &state.q_theta);
    if let Some(ql) = &state.q_lambda {
        gaussian_lines(&mut s, "lambda", ql);
    }
    if let Some(r) = report {
        for (k, v) in [
            ("residual_theta", r.residual_theta),
            ("residual_lambda", r.residual_lambda),
            ("grad_norm_theta", r.grad_norm_theta),
            ("grad_norm_lambda", r.grad_norm_lambda),
            ("remainder_norm", r.remainder.norm()),
            ("remainder_scaled_norm", r.remainder_scaled.norm()),
        ] {
            let _ = writeln!(s, "{k}={}", fmt_f64(v));
        }
        for (i, v) in r.remainder.iter().enumerate() {
            let _ = writeln!(s, "remainder_{i}={}", fmt_f64(*v));
        }
    }
    if !note.is_empty() {
        let _ = writeln!(s, "note={note}");
    }
    s.push_str("# config\n");
    s.push_str(&cfg.echo());
    s
}

pub fn cmd_fit(config: &Path, data: Option<&Path>, overrides: &[String], verbose: u8) -> Result<i32> {
    let text = fs::read_to_string(config)
        .map_err(|e| Error::Config(format!("cannot read config {}: {e}", config.display())))?;
    let mut cfg = FitConfig::parse(&text, overrides)?;
    if let Some(d) = data {
        cfg.data = Some(d.to_path_buf());
    }
    let data_path = cfg.data.clone().ok_or_else(|| Error::Config("no data file given".into()))?;
    let sample = read_data_file(&data_path)?;
    let model = cfg.transform_model()?;
    let output = cfg.output.clone().unwrap_or_else(|| {
        let mut p = data_path.clone().into_os_string();
        p.push(".fit");
        PathBuf::from(p)
    });
    let settings = VlSettings { tol: cfg.tol, max_sweeps: cfg.max_sweeps, ..VlSettings::default() };
    let init = VariationalState::from_priors(&model);
    let start = Instant::now();
    let (text, code) = match run_to_fixed_point_with(&model, &sample, &init, &settings) {
        Ok(r) => {
            let code = if r.converged { 0 } else { 3 };
            let note = if r.converged { "" } else { "sweep budget exhausted; partial result" };
            (fit_result_text(&cfg, sample.n(), &r.state, Some(&r), note), code)
        }
        Err(Error::Diverged { last_state }) => {
            let note = format!("diverged after {} sweeps; last finite state", last_state.iteration);
            (fit_result_text(&cfg, sample.n(), &last_state, None, &note), 3)
        }
        Err(e) => return Err(e),
    };
    fs::write(&output, &text)?;
    let get = |k: &str| text.lines().find_map(|l| l.strip_prefix(&format!("{k}="))).unwrap_or("-").to_string();
    println!(
        "{} n={} converged={} sweeps={} mu_theta={} -> {}",
        cfg.model,
        sample.n(),
        get("converged"),
        get("sweeps"),
        get("mu_theta"),
        output.display()
    );
    if verbose > 0 {
        eprintln!("fit took {:.3}s", start.elapsed().as_secs_f64());
    }
    Ok(code)
}

pub fn cmd_simulate(config: &Path, overrides: &[String], verbose: u8) -> Result<i32> {
    let cfg = ExperimentConfig::load(config, overrides)?;
    let start = Instant::now();
    let outcome = simulate(&cfg)?;
    println!(
        "{}: {} rows, {} excluded -> {}",
        cfg.experiment,
        outcome.output.total(),
        outcome.output.excluded(),
        outcome.dir.display()
    );
    if verbose > 0 {
        eprintln!("simulate took {:.3}s on {} workers", start.elapsed().as_secs_f64(), cfg.workers);
    }
    Ok(0)
}

/// Non-equivalence certificates at `y = −1` and `y = −5` with a standard
/// normal prior.
pub fn diagnose_nonequivalence() -> Result<(String, bool)> {
    let recs: Vec<NonequivalenceRecord> =
        [-1.0, -5.0].iter().map(|&y| nonequivalence_record(y, 0.0, 1.0, 200)).collect::<Result<_>>()?;
    let ok = recs.iter().all(|r| r.certified());
    Ok((nonequivalence_report(&recs), ok))
}

/// Random SPD target of dimension `d` drawn from `rng`.
pub fn random_spd_target<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Result<GaussianParams> {
    let a = DMatrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal));
    let cov = &a * a.transpose() + DMatrix::identity(d, d) * 0.05;
    let mean = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
    GaussianParams::new(mean, crate::numkit::symmetrize(&cov))
}

/// `cases` random targets with `d ∈ {2..5}`: the best diagonal approximation
/// never has larger entropy than the target.
pub fn diagnose_underdispersion(cases: usize) -> Result<(String, bool)> {
    let mut violations = 0;
    let mut min_margin = f64::INFINITY;
    for i in 0..cases {
        let d = 2 + i % 4;
        let mut rng = stream_rng(DIAGNOSE_SEED, "underdispersion", d, i);
        let target = random_spd_target(d, &mut rng)?;
        let diag = best_diagonal_approx(&target);
        let margin = gaussian_entropy(&target) - gaussian_entropy(&diag);
        min_margin = min_margin.min(margin);
        if margin < -1e-12 {
            violations += 1;
        }
    }
    let report = format!(
        "underdispersion: {cases} random SPD targets, d in 2..=5\nH[target] - H[best diagonal] >= 0 in every case: {}\nviolations={violations}\nsmallest margin={min_margin:.6e}\n",
        if violations == 0 { "PASS" } else { "FAIL" }
    );
    Ok((report, violations == 0))
}

/// ELBO of the exact-quadrature oracle minus the ELBO at the variational
/// Laplace fixed point, on the reference linear model.
pub fn diagnose_oracle_gap(n_grid: &[usize]) -> Result<(String, bool)> {
    let model = LinearLambdaModel::new(3.0, 1.0, 1.0, 1.0, 1.0)?;
    let truth = GroundTruth { theta0: 2.0, lambda0: Some(2.0) };
    let mut report = String::from("n,elbo_varlap,elbo_oracle,gap,gap_over_n,oracle_grad_norm\n");
    let mut ok = true;
    for &n in n_grid {
        let mut rng = stream_rng(DIAGNOSE_SEED, "oracle-gap", n, 0);
        let data = sample_data(&DataModel::Linear { a: model.a }, &truth, n, &mut rng)?;
        let fit = linear_fixed_point(&model, &data, &LinearState::from_priors(&model), 1e-12, 1000)?;
        let s = fit.state;
        let q = GaussianParams::diagonal(&[s.mu_theta, s.mu_lambda], &[s.sigma_theta, s.sigma_lambda])?;
        let target = LinearTarget { model: &model, data: &data };
        let e_vl = elbo_quadrature(&target, &q, DEFAULT_ORACLE_ORDER)?;
        let oracle = elbo_oracle_fit(&target, &q, 200)?;
        let gap = oracle.elbo - e_vl;
        ok &= oracle.converged && gap >= -1e-9 * e_vl.abs().max(1.0);
        let _ = writeln!(
            report,
            "{n},{},{},{},{},{}",
            fmt_f64(e_vl),
            fmt_f64(oracle.elbo),
            fmt_f64(gap),
            fmt_f64(gap / n as f64),
            fmt_f64(oracle.grad_norm)
        );
    }
    Ok((report, ok))
}

pub fn cmd_diagnose(name: &str, out: Option<&Path>) -> Result<i32> {
    let (report, ok) = match name {
        "nonequivalence" => diagnose_nonequivalence()?,
        "underdispersion" => diagnose_underdispersion(1000)?,
        "oracle-gap" => diagnose_oracle_gap(&[10, 100, 1000, 10_000])?,
        other => {
            return Err(Error::Config(format!(
                "unknown diagnostic '{other}'; expected nonequivalence, underdispersion or oracle-gap"
            )))
        }
    };
    match out {
        Some(p) => fs::write(p, &report)?,
        None => print!("{report}"),
    }
    Ok(if ok { 0 } else { 3 })
}

/// Fast checks run by `varlap selftest`: `(name, passed, detail)`.
pub fn selftest_checks() -> Vec<(String, bool, String)> {
    let mut out = Vec::new();
    let mut push = |name: &str, r: Result<(bool, String)>| match r {
        Ok((ok, detail)) => out.push((name.to_string(), ok, detail)),
        Err(e) => out.push((name.to_string(), false, e.to_string())),
    };
    push("lambert_w residual on [1e-8, 1e8]", (|| {
        let mut worst: f64 = 0.0;
        for k in 0..=320 {
            let x = 10f64.powf(-8.0 + k as f64 * 0.05);
            let w = lambert_w(x)?;
            worst = worst.max((w * w.exp() - x).abs() / x.max(1.0));
        }
        Ok((worst <= 1e-12, format!("max relative residual {worst:.2e}")))
    })());
    push("gauss_hermite E[e^Z] at order 20", (|| {
        let v = gauss_hermite(20)?.expect_standard_normal(f64::exp);
        let err = (v - 0.5f64.exp()).abs();
        Ok((err <= 1e-8, format!("error {err:.2e}")))
    })());
    push("kl_gaussians self-divergence", (|| {
        let p = GaussianParams::diagonal(&[0.3, -1.0], &[2.0, 0.5])?;
        let k = kl_gaussians(&p, &p)?;
        Ok((k.abs() <= 1e-12, format!("KL(p,p) = {k:.2e}")))
    })());
    push("underdispersion on 200 targets", diagnose_underdispersion(200).map(|(r, ok)| (ok, r.lines().nth(2).unwrap_or("").into())));
    push("non-equivalence certificate", diagnose_nonequivalence().map(|(_, ok)| (ok, format!("threshold {NONEQUIVALENCE_THRESHOLD:e}"))));
    push("linear fixed point against generic engine", (|| {
        let model = LinearLambdaModel::new(3.0, 1.0, 1.0, 1.0, 1.0)?;
        let truth = GroundTruth { theta0: 2.0, lambda0: Some(2.0) };
        let data = sample_data(&DataModel::Linear { a: 3.0 }, &truth, 200, &mut stream_rng(DIAGNOSE_SEED, "selftest", 200, 0))?;
        let closed = linear_fixed_point(&model, &data, &LinearState::from_priors(&model), 1e-12, 1000)?.state;
        let tm = model.to_transform_model()?;
        let generic = run_to_fixed_point_with(&tm, &data, &VariationalState::from_priors(&tm), &VlSettings { tol: 1e-12, ..VlSettings::default() })?;
        let g = LinearState::from_variational(&generic.state)?;
        let diff = g.max_change(&closed);
        Ok((diff <= 1e-8, format!("max difference {diff:.2e}")))
    })());
    out
}

pub fn cmd_selftest() -> Result<i32> {
    let start = Instant::now();
    let checks = selftest_checks();
    let mut failed = 0;
    for (name, ok, detail) in &checks {
        println!("[{}] {name}: {detail}", if *ok { "PASS" } else { "FAIL" });
        failed += usize::from(!ok);
    }
    println!("{} checks, {failed} failed, {:.2}s", checks.len(), start.elapsed().as_secs_f64());
    Ok(if failed == 0 { 0 } else { 3 })
}
