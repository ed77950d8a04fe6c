use std::fs;
use std::path::Path;

use super::config::ExperimentConfig;
use super::rng::RNG_ALGORITHM;
use crate::asymptotics::quantile;
use crate::error::Result;

pub const SCHEMA_VERSION: u32 = 1;

pub const INITIALIZATION_NOTE: &str =
    "every fit starts from the prior means and prior variances; the reference experiments do not state an initialization";

/// Floats are written with 17 significant digits so they round-trip exactly.
pub fn fmt_f64(x: f64) -> String {
    if x.is_nan() {
        "NaN".into()
    } else if x.is_infinite() {
        if x > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{x:.16e}")
    }
}

/// Rows that feed the long-format summary table.
pub trait Summarizable {
    fn label(&self) -> &str;
    fn n(&self) -> usize;
    fn converged(&self) -> bool;
    fn quantity(&self, name: &str) -> Option<f64>;
}

/// One replication of a simulation experiment. σ fields are variances;
/// fields that do not apply are NaN.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicationRecord {
    pub experiment: String,
    pub label: String,
    pub n: usize,
    pub rep: usize,
    pub converged: bool,
    pub sweeps: usize,
    pub mu_theta: f64,
    pub sigma_theta: f64,
    pub mu_lambda: f64,
    pub sigma_lambda: f64,
    pub h_theta: f64,
    pub h_lambda: f64,
    pub mle_theta: f64,
    pub mle_lambda: f64,
    /// Largest parameter change of one further update from the final state.
    pub fixed_point_residual: f64,
    pub residual_theta: f64,
    pub residual_lambda: f64,
    pub remainder_theta: f64,
    pub remainder_lambda: f64,
    pub tv: f64,
    pub varlap_ellipse: [f64; 4],
    pub limit_ellipse: [f64; 4],
    pub used_fallback: bool,
    pub failure: String,
}

impl ReplicationRecord {
    pub fn new(experiment: &str, label: &str, n: usize, rep: usize) -> Self {
        Self {
            experiment: experiment.into(),
            label: label.into(),
            n,
            rep,
            converged: false,
            sweeps: 0,
            mu_theta: f64::NAN,
            sigma_theta: f64::NAN,
            mu_lambda: f64::NAN,
            sigma_lambda: f64::NAN,
            h_theta: f64::NAN,
            h_lambda: f64::NAN,
            mle_theta: f64::NAN,
            mle_lambda: f64::NAN,
            fixed_point_residual: f64::NAN,
            residual_theta: f64::NAN,
            residual_lambda: f64::NAN,
            remainder_theta: f64::NAN,
            remainder_lambda: f64::NAN,
            tv: f64::NAN,
            varlap_ellipse: [f64::NAN; 4],
            limit_ellipse: [f64::NAN; 4],
            used_fallback: false,
            failure: String::new(),
        }
    }

    /// Converged rows must carry a residual within `tol`.
    pub fn is_consistent(&self, tol: f64) -> bool {
        !self.converged || (self.fixed_point_residual <= tol && self.failure.is_empty())
    }

    fn numeric(&self) -> [(&'static str, f64); 27] {
        let nf = self.n as f64;
        let r = self.remainder_theta.hypot(if self.remainder_lambda.is_nan() { 0.0 } else { self.remainder_lambda });
        [
            ("sweeps", self.sweeps as f64),
            ("mu_theta", self.mu_theta),
            ("sigma_theta", self.sigma_theta),
            ("mu_lambda", self.mu_lambda),
            ("sigma_lambda", self.sigma_lambda),
            ("h_theta", self.h_theta),
            ("h_lambda", self.h_lambda),
            ("abs_err_theta", (self.h_theta / nf.sqrt()).abs()),
            ("abs_err_lambda", (self.h_lambda / nf.sqrt()).abs()),
            ("n_sigma_theta", nf * self.sigma_theta),
            ("n_sigma_lambda", nf * self.sigma_lambda),
            ("mle_theta", self.mle_theta),
            ("mle_lambda", self.mle_lambda),
            ("fixed_point_residual", self.fixed_point_residual),
            ("residual_theta", self.residual_theta),
            ("residual_lambda", self.residual_lambda),
            ("remainder_theta", self.remainder_theta),
            ("remainder_lambda", self.remainder_lambda),
            ("remainder_norm", r),
            ("remainder_scaled_norm", nf.sqrt() * r),
            ("tv", self.tv),
            ("varlap_half_width", self.varlap_ellipse[2]),
            ("varlap_half_height", self.varlap_ellipse[3]),
            ("limit_half_width", self.limit_ellipse[2]),
            ("limit_half_height", self.limit_ellipse[3]),
            ("half_width_gap", (self.varlap_ellipse[2] - self.limit_ellipse[2]).abs()),
            ("half_height_gap", (self.varlap_ellipse[3] - self.limit_ellipse[3]).abs()),
        ]
    }

    pub fn header() -> Vec<String> {
        let mut h: Vec<String> =
            ["schema_version", "rng", "experiment", "label", "n", "rep", "converged"].iter().map(|s| s.to_string()).collect();
        h.extend(Self::new("", "", 1, 0).numeric().iter().map(|(k, _)| k.to_string()));
        h.extend(
            [
                "varlap_center_theta",
                "varlap_center_lambda",
                "limit_center_theta",
                "limit_center_lambda",
                "used_fallback",
                "failure",
            ]
            .iter()
            .map(|s| s.to_string()),
        );
        h
    }

    pub fn row(&self) -> Vec<String> {
        let mut r = vec![
            SCHEMA_VERSION.to_string(),
            RNG_ALGORITHM.to_string(),
            self.experiment.clone(),
            self.label.clone(),
            self.n.to_string(),
            self.rep.to_string(),
            self.converged.to_string(),
        ];
        r.extend(self.numeric().iter().map(|&(k, v)| if k == "sweeps" { self.sweeps.to_string() } else { fmt_f64(v) }));
        r.extend(
            [self.varlap_ellipse[0], self.varlap_ellipse[1], self.limit_ellipse[0], self.limit_ellipse[1]]
                .iter()
                .map(|&v| fmt_f64(v)),
        );
        r.push(self.used_fallback.to_string());
        r.push(self.failure.clone());
        r
    }
}

impl Summarizable for ReplicationRecord {
    fn label(&self) -> &str {
        &self.label
    }

    fn n(&self) -> usize {
        self.n
    }

    fn converged(&self) -> bool {
        self.converged
    }

    fn quantity(&self, name: &str) -> Option<f64> {
        self.numeric().iter().find(|(k, _)| *k == name).map(|&(_, v)| v)
    }
}

/// One observation of the exp-model non-equivalence certificate.
#[derive(Debug, Clone, PartialEq)]
pub struct NonequivalenceRecord {
    pub y: f64,
    pub m: f64,
    pub s2: f64,
    pub mu_map: f64,
    pub laplace_var: f64,
    pub map_used_fallback: bool,
    /// Exact ELBO gradient `(∂/∂μ, ∂/∂σ²)` at `(μ_MAP, σ²_Laplace)`.
    pub elbo_grad: [f64; 2],
    pub elbo_at_map: f64,
    pub mu_oracle: f64,
    pub var_oracle: f64,
    pub elbo_oracle: f64,
    pub oracle_grad_norm: f64,
    pub oracle_converged: bool,
    pub threshold: f64,
}

impl NonequivalenceRecord {
    pub fn label(&self) -> String {
        format!("y={}", self.y)
    }

    pub fn elbo_grad_norm(&self) -> f64 {
        self.elbo_grad[0].hypot(self.elbo_grad[1])
    }

    pub fn mu_gap(&self) -> f64 {
        (self.mu_oracle - self.mu_map).abs()
    }

    pub fn certified(&self) -> bool {
        self.oracle_converged && self.elbo_grad_norm() >= self.threshold && self.mu_gap() >= self.threshold
    }

    pub fn header() -> Vec<String> {
        [
            "schema_version", "experiment", "label", "y", "m", "s2", "mu_map", "laplace_var", "map_used_fallback",
            "elbo_grad_mu", "elbo_grad_sigma2", "elbo_grad_norm", "elbo_at_map", "mu_oracle", "var_oracle",
            "elbo_oracle", "oracle_grad_norm", "oracle_converged", "mu_gap", "threshold", "certified",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect()
    }

    pub fn row(&self) -> Vec<String> {
        vec![
            SCHEMA_VERSION.to_string(),
            "nonequivalence".into(),
            self.label(),
            fmt_f64(self.y),
            fmt_f64(self.m),
            fmt_f64(self.s2),
            fmt_f64(self.mu_map),
            fmt_f64(self.laplace_var),
            self.map_used_fallback.to_string(),
            fmt_f64(self.elbo_grad[0]),
            fmt_f64(self.elbo_grad[1]),
            fmt_f64(self.elbo_grad_norm()),
            fmt_f64(self.elbo_at_map),
            fmt_f64(self.mu_oracle),
            fmt_f64(self.var_oracle),
            fmt_f64(self.elbo_oracle),
            fmt_f64(self.oracle_grad_norm),
            self.oracle_converged.to_string(),
            fmt_f64(self.mu_gap()),
            fmt_f64(self.threshold),
            self.certified().to_string(),
        ]
    }
}

pub struct NonequivalenceRow<'a>(pub &'a NonequivalenceRecord, pub String);

impl Summarizable for NonequivalenceRow<'_> {
    fn label(&self) -> &str {
        &self.1
    }

    fn n(&self) -> usize {
        1
    }

    fn converged(&self) -> bool {
        self.0.oracle_converged
    }

    fn quantity(&self, name: &str) -> Option<f64> {
        match name {
            "elbo_grad_norm" => Some(self.0.elbo_grad_norm()),
            "mu_gap" => Some(self.0.mu_gap()),
            "elbo_gap" => Some(self.0.elbo_oracle - self.0.elbo_at_map),
            _ => None,
        }
    }
}

/// Long-format summary: one line per `(label, n, quantity)`, computed over
/// converged rows only.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryLine {
    pub label: String,
    pub n: usize,
    pub quantity: String,
    pub total: usize,
    pub converged: usize,
    pub excluded: usize,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    pub mean: f64,
    /// Unbiased; NaN with fewer than two values.
    pub variance: f64,
}

impl SummaryLine {
    pub fn header() -> Vec<String> {
        [
            "schema_version", "label", "n", "quantity", "total", "converged", "excluded", "min", "q1", "median", "q3",
            "max", "mean", "variance",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect()
    }

    pub fn row(&self) -> Vec<String> {
        let mut r = vec![
            SCHEMA_VERSION.to_string(),
            self.label.clone(),
            self.n.to_string(),
            self.quantity.clone(),
            self.total.to_string(),
            self.converged.to_string(),
            self.excluded.to_string(),
        ];
        r.extend([self.min, self.q1, self.median, self.q3, self.max, self.mean, self.variance].iter().map(|&v| fmt_f64(v)));
        r
    }

    /// Statistics of `values` in the given order.
    pub fn from_values(label: &str, n: usize, quantity: &str, total: usize, values: &[f64]) -> Self {
        let k = values.len();
        let mut s = values.to_vec();
        s.sort_by(f64::total_cmp);
        let mean = if k == 0 { f64::NAN } else { values.iter().sum::<f64>() / k as f64 };
        let variance = if k < 2 {
            f64::NAN
        } else {
            values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (k - 1) as f64
        };
        Self {
            label: label.into(),
            n,
            quantity: quantity.into(),
            total,
            converged: k,
            excluded: total - k,
            min: s.first().copied().unwrap_or(f64::NAN),
            q1: quantile(&s, 0.25),
            median: quantile(&s, 0.5),
            q3: quantile(&s, 0.75),
            max: s.last().copied().unwrap_or(f64::NAN),
            mean,
            variance,
        }
    }
}

/// Groups by `(label, n)` in first-appearance order.
pub fn summarize<R: Summarizable>(rows: &[R], quantities: &[&str]) -> Vec<SummaryLine> {
    let mut groups: Vec<(String, usize)> = Vec::new();
    for r in rows {
        let key = (r.label().to_string(), r.n());
        if !groups.contains(&key) {
            groups.push(key);
        }
    }
    let mut out = Vec::new();
    for (label, n) in groups {
        let group: Vec<&R> = rows.iter().filter(|r| r.label() == label && r.n() == n).collect();
        for q in quantities {
            let vals: Vec<f64> =
                group.iter().filter(|r| r.converged()).map(|r| r.quantity(q).unwrap_or(f64::NAN)).collect();
            out.push(SummaryLine::from_values(&label, n, q, group.len(), &vals));
        }
    }
    out
}

/// One bin of a normalized histogram with the limit density at its centre.
#[derive(Debug, Clone, PartialEq)]
pub struct HistogramRow {
    pub label: String,
    pub n: usize,
    pub coordinate: String,
    pub bin: usize,
    pub lower: f64,
    pub upper: f64,
    pub mass: f64,
    pub limit_density: f64,
}

impl HistogramRow {
    pub fn header() -> Vec<String> {
        [
            "schema_version", "label", "n", "coordinate", "bin", "lower", "upper", "center", "mass", "density",
            "limit_density",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect()
    }

    pub fn center(&self) -> f64 {
        0.5 * (self.lower + self.upper)
    }

    pub fn density(&self) -> f64 {
        self.mass / (self.upper - self.lower)
    }

    pub fn row(&self) -> Vec<String> {
        vec![
            SCHEMA_VERSION.to_string(),
            self.label.clone(),
            self.n.to_string(),
            self.coordinate.clone(),
            self.bin.to_string(),
            fmt_f64(self.lower),
            fmt_f64(self.upper),
            fmt_f64(self.center()),
            fmt_f64(self.mass),
            fmt_f64(self.density()),
            fmt_f64(self.limit_density),
        ]
    }
}

pub fn write_csv(path: &Path, header: Vec<String>, rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(&header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_meta(path: &Path, cfg: &ExperimentConfig, extra: &[(&str, String)]) -> Result<()> {
    let mut s = format!("schema_version={SCHEMA_VERSION}\nrng={RNG_ALGORITHM}\ninitialization={INITIALIZATION_NOTE}\n");
    s.push_str("parallelism=replications run concurrently; outputs are independent of the worker count\n");
    for (k, v) in extra {
        s.push_str(&format!("{k}={v}\n"));
    }
    s.push_str("# config\n");
    s.push_str(&cfg.echo());
    fs::write(path, s)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_format_round_trips() {
        for x in [0.1, -1.0 / 3.0, 1e-300, 6.02214076e23, 2f64.sqrt()] {
            assert_eq!(fmt_f64(x).parse::<f64>().unwrap(), x);
        }
        assert!(fmt_f64(f64::NAN).parse::<f64>().unwrap().is_nan());
    }

    #[test]
    fn header_and_row_align() {
        let r = ReplicationRecord::new("linear-asymptotics", "linear", 10, 3);
        assert_eq!(ReplicationRecord::header().len(), r.row().len());
        assert_eq!(SummaryLine::header().len(), SummaryLine::from_values("x", 1, "q", 1, &[1.0]).row().len());
    }

    #[test]
    fn summary_accounting() {
        let mut rows = Vec::new();
        for rep in 0..5 {
            let mut r = ReplicationRecord::new("e", "linear", 10, rep);
            r.converged = rep != 2;
            r.mu_theta = rep as f64;
            rows.push(r);
        }
        let s = summarize(&rows, &["mu_theta"]);
        assert_eq!(s.len(), 1);
        assert_eq!((s[0].total, s[0].converged, s[0].excluded), (5, 4, 1));
        assert_eq!(s[0].median, 2.0);
        assert_eq!(s[0].mean, 2.0);
        assert_eq!(s[0].max, 4.0);
    }
}
