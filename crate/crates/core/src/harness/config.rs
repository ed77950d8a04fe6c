use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::models::{GroundTruth, LinearLambdaModel, ScalarTransform};

pub const SEED_ENV: &str = "VARLAP_SEED";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExperimentKind {
    SingleConsistency,
    LinearAsymptotics,
    TvCurve,
    RemainderDecay,
    Nonequivalence,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 5] = [
        Self::SingleConsistency,
        Self::LinearAsymptotics,
        Self::TvCurve,
        Self::RemainderDecay,
        Self::Nonequivalence,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            Self::SingleConsistency => "single-consistency",
            Self::LinearAsymptotics => "linear-asymptotics",
            Self::TvCurve => "tv-curve",
            Self::RemainderDecay => "remainder-decay",
            Self::Nonequivalence => "nonequivalence",
        }
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for ExperimentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.tag() == s)
            .ok_or_else(|| Error::Config(format!("unknown experiment '{s}'")))
    }
}

/// Flat experiment configuration. Prior scales `s_theta`, `s_lambda` and
/// `noise_sd` are standard deviations.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub a: f64,
    pub theta0: f64,
    pub lambda0: f64,
    pub m_theta: f64,
    pub s_theta: f64,
    pub m_lambda: f64,
    pub s_lambda: f64,
    pub noise_sd: f64,
    pub transforms: Vec<ScalarTransform>,
    /// Observations for the non-equivalence certificate.
    pub y: Vec<f64>,
    pub n_grid: Vec<usize>,
    pub reps: usize,
    pub seed: u64,
    pub bins: usize,
    pub output_dir: PathBuf,
    /// Replication-level parallelism; does not affect any output.
    pub workers: usize,
    pub tol: f64,
    pub max_sweeps: usize,
}

pub const KEYS: [&str; 19] = [
    "experiment", "a", "theta0", "lambda0", "m_theta", "s_theta", "m_lambda", "s_lambda", "noise_sd",
    "transforms", "y", "n_grid", "reps", "seed", "bins", "output_dir", "workers", "tol", "max_sweeps",
];

fn default_workers() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

impl ExperimentConfig {
    pub fn defaults(experiment: ExperimentKind) -> Self {
        let mut c = Self {
            experiment,
            a: 3.0,
            theta0: 2.0,
            lambda0: 2.0,
            m_theta: 1.0,
            s_theta: 1.0,
            m_lambda: 1.0,
            s_lambda: 1.0,
            noise_sd: 1.0,
            transforms: vec![ScalarTransform::Exp, ScalarTransform::Cube, ScalarTransform::ExpTwoPlusCube],
            y: vec![-1.0, -5.0],
            n_grid: vec![10, 100, 1000, 10000],
            reps: 500,
            seed: 20_190_801,
            bins: 40,
            output_dir: PathBuf::from("out"),
            workers: default_workers(),
            tol: 1e-10,
            max_sweeps: 500,
        };
        match experiment {
            ExperimentKind::SingleConsistency => {
                c.theta0 = 1.0;
                c.m_theta = 10.0;
                c.s_theta = 10.0;
                c.n_grid = vec![10, 100, 1000];
            }
            ExperimentKind::LinearAsymptotics => {}
            ExperimentKind::TvCurve => {
                c.n_grid = vec![100, 10_000, 1_000_000];
                c.reps = 10;
            }
            ExperimentKind::RemainderDecay => {
                c.n_grid = vec![100, 1000, 10_000, 100_000, 1_000_000];
                c.reps = 10;
            }
            ExperimentKind::Nonequivalence => {
                c.m_theta = 0.0;
                c.s_theta = 1.0;
                c.n_grid = vec![1];
                c.reps = 1;
            }
        }
        c
    }

    /// Parses config text, then applies `VARLAP_SEED` (if `env_seed` is
    /// given) and finally the `key=value` overrides in order.
    pub fn parse(text: &str, env_seed: Option<&str>, overrides: &[String]) -> Result<Self> {
        let mut pairs = parse_pairs(text)?;
        if let Some(s) = env_seed {
            pairs.push(("seed".into(), s.trim().to_string()));
        }
        for o in overrides {
            pairs.push(split_pair(o).ok_or_else(|| Error::Config(format!("override '{o}' is not key=value")))?);
        }
        let kind: ExperimentKind = pairs
            .iter()
            .rev()
            .find(|(k, _)| k == "experiment")
            .ok_or_else(|| Error::Config("missing key 'experiment'".into()))?
            .1
            .parse()?;
        let mut c = Self::defaults(kind);
        for (k, v) in &pairs {
            c.set(k, v)?;
        }
        c.validate()?;
        Ok(c)
    }

    /// Reads `path`, honouring `VARLAP_SEED` from the process environment.
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let env = std::env::var(SEED_ENV).ok();
        Self::parse(&text, env.as_deref(), overrides)
    }

    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "experiment" => self.experiment = value.parse()?,
            "a" => self.a = num(key, value)?,
            "theta0" => self.theta0 = num(key, value)?,
            "lambda0" => self.lambda0 = num(key, value)?,
            "m_theta" => self.m_theta = num(key, value)?,
            "s_theta" => self.s_theta = num(key, value)?,
            "m_lambda" => self.m_lambda = num(key, value)?,
            "s_lambda" => self.s_lambda = num(key, value)?,
            "noise_sd" => self.noise_sd = num(key, value)?,
            "transforms" => {
                self.transforms = list(value).iter().map(|s| ScalarTransform::from_name(s)).collect::<Result<_>>()?
            }
            "y" => self.y = list(value).iter().map(|s| num(key, s)).collect::<Result<_>>()?,
            "n_grid" => self.n_grid = list(value).iter().map(|s| count(key, s)).collect::<Result<_>>()?,
            "reps" => self.reps = count(key, value)?,
            "seed" => {
                self.seed = value.parse().map_err(|_| Error::Config(format!("seed must be a u64, got '{value}'")))?
            }
            "bins" => self.bins = count(key, value)?,
            "output_dir" => self.output_dir = PathBuf::from(value),
            "workers" => self.workers = count(key, value)?,
            "tol" => self.tol = num(key, value)?,
            "max_sweeps" => self.max_sweeps = count(key, value)?,
            _ => return Err(Error::Config(format!("unknown key '{key}'"))),
        }
        Ok(())
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_grid.is_empty() || self.n_grid.windows(2).any(|w| w[0] >= w[1]) {
            return bad("n_grid must be non-empty and strictly increasing".into());
        }
        if self.n_grid.contains(&0) {
            return bad("n_grid entries must be positive".into());
        }
        if self.reps == 0 || self.bins == 0 || self.workers == 0 || self.max_sweeps == 0 {
            return bad("reps, bins, workers and max_sweeps must be at least 1".into());
        }
        if !(self.tol.is_finite() && self.tol > 0.0) {
            return bad(format!("tol must be positive, got {}", self.tol));
        }
        for (k, v) in [("s_theta", self.s_theta), ("s_lambda", self.s_lambda)] {
            if !(v.is_finite() && v > 0.0) {
                return bad(format!("{k} must be positive, got {v}"));
            }
        }
        match self.experiment {
            ExperimentKind::SingleConsistency => {
                if self.transforms.is_empty() {
                    return bad("transforms must name at least one transform".into());
                }
                if !(self.noise_sd.is_finite() && self.noise_sd > 0.0) {
                    return bad(format!("noise_sd must be positive, got {}", self.noise_sd));
                }
            }
            ExperimentKind::Nonequivalence => {
                if self.y.is_empty() {
                    return bad("y must list at least one observation".into());
                }
                if let Some(y) = self.y.iter().find(|&&y| !(y < 0.0)) {
                    return bad(format!("the non-equivalence certificate covers y < 0 only, got {y}"));
                }
            }
            _ => {
                if self.a == 0.0 {
                    return bad("a must be nonzero".into());
                }
            }
        }
        Ok(())
    }

    pub fn linear_model(&self) -> Result<LinearLambdaModel> {
        LinearLambdaModel::new(self.a, self.m_theta, self.s_theta.powi(2), self.m_lambda, self.s_lambda.powi(2))
            .map_err(|e| Error::Config(e.to_string()))
    }

    pub fn linear_truth(&self) -> GroundTruth {
        GroundTruth { theta0: self.theta0, lambda0: Some(self.lambda0) }
    }

    /// Every key except `workers`, which cannot change results.
    pub fn echo(&self) -> String {
        let join = |v: Vec<String>| v.join(",");
        let mut out = String::new();
        let mut put = |k: &str, v: String| {
            out.push_str(k);
            out.push('=');
            out.push_str(&v);
            out.push('\n');
        };
        put("experiment", self.experiment.tag().into());
        put("a", self.a.to_string());
        put("theta0", self.theta0.to_string());
        put("lambda0", self.lambda0.to_string());
        put("m_theta", self.m_theta.to_string());
        put("s_theta", self.s_theta.to_string());
        put("m_lambda", self.m_lambda.to_string());
        put("s_lambda", self.s_lambda.to_string());
        put("noise_sd", self.noise_sd.to_string());
        put("transforms", join(self.transforms.iter().map(|t| t.name().to_string()).collect()));
        put("y", join(self.y.iter().map(f64::to_string).collect()));
        put("n_grid", join(self.n_grid.iter().map(usize::to_string).collect()));
        put("reps", self.reps.to_string());
        put("seed", self.seed.to_string());
        put("bins", self.bins.to_string());
        put("output_dir", self.output_dir.display().to_string());
        put("tol", self.tol.to_string());
        put("max_sweeps", self.max_sweeps.to_string());
        out
    }
}

/// `key=value` lines with `#` comments; keys are not validated here.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        out.push(split_pair(line).ok_or_else(|| Error::Config(format!("line {}: expected key=value, got '{raw}'", i + 1)))?);
    }
    Ok(out)
}

fn split_pair(s: &str) -> Option<(String, String)> {
    let (k, v) = s.split_once('=')?;
    let k = k.trim();
    if k.is_empty() {
        return None;
    }
    Some((k.to_string(), v.trim().to_string()))
}

fn list(v: &str) -> Vec<String> {
    v.split(',').map(str::trim).filter(|s| !s.is_empty()).map(String::from).collect()
}

pub(crate) fn num(key: &str, v: &str) -> Result<f64> {
    let x: f64 = v.trim().parse().map_err(|_| Error::Config(format!("{key}: '{v}' is not a number")))?;
    if !x.is_finite() {
        return Err(Error::Config(format!("{key} must be finite")));
    }
    Ok(x)
}

pub(crate) fn count(key: &str, v: &str) -> Result<usize> {
    let t = v.trim();
    if let Ok(n) = t.parse::<usize>() {
        return Ok(n);
    }
    // Accept 1e6-style integers.
    match t.parse::<f64>() {
        Ok(x) if x >= 0.0 && x.fract() == 0.0 && x < 9.0e15 => Ok(x as usize),
        _ => Err(Error::Config(format!("{key}: '{v}' is not a nonnegative integer"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_comments() {
        let c = ExperimentConfig::parse("# linear run\nexperiment = linear-asymptotics # tag\nreps=20\n", None, &[]).unwrap();
        assert_eq!(c.experiment, ExperimentKind::LinearAsymptotics);
        assert_eq!(c.reps, 20);
        assert_eq!(c.n_grid, vec![10, 100, 1000, 10000]);
        assert_eq!((c.a, c.theta0, c.lambda0, c.bins), (3.0, 2.0, 2.0, 40));
        let s = ExperimentConfig::parse("experiment=single-consistency", None, &[]).unwrap();
        assert_eq!((s.m_theta, s.s_theta, s.theta0), (10.0, 10.0, 1.0));
        let t = ExperimentConfig::parse("experiment=tv-curve\nn_grid=1e2,1e4,1e6", None, &[]).unwrap();
        assert_eq!(t.n_grid, vec![100, 10_000, 1_000_000]);
    }

    #[test]
    fn precedence() {
        let text = "experiment=linear-asymptotics\nseed=1\ntol=1e-8";
        let c = ExperimentConfig::parse(text, Some("2"), &[]).unwrap();
        assert_eq!(c.seed, 2);
        let c = ExperimentConfig::parse(text, Some("2"), &["seed=3".into(), "tol=1e-6".into(), "tol=1e-7".into()]).unwrap();
        assert_eq!((c.seed, c.tol), (3, 1e-7));
    }

    #[test]
    fn rejects_bad_input() {
        for text in [
            "experiment=linear-asymptotics\nfoo=1",
            "experiment=bogus",
            "reps=3",
            "experiment=linear-asymptotics\nn_grid=100,10",
            "experiment=linear-asymptotics\nreps=0",
            "experiment=linear-asymptotics\njust a line",
            "experiment=nonequivalence\ny=-1,0.5",
            "experiment=single-consistency\ntransforms=exp,sin",
        ] {
            let e = ExperimentConfig::parse(text, None, &[]).unwrap_err();
            assert_eq!(e.exit_code(), 2, "{text}");
        }
        assert!(ExperimentConfig::parse("experiment=tv-curve", Some("x"), &[]).is_err());
    }

    #[test]
    fn echo_round_trips() {
        let c = ExperimentConfig::parse("experiment=single-consistency\nreps=7\nseed=99", None, &[]).unwrap();
        let back = ExperimentConfig::parse(&c.echo(), None, &[format!("workers={}", c.workers)]).unwrap();
        assert_eq!(c, back);
    }
}
