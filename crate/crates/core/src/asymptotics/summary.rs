use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub const SUMMARY_PROBS: [f64; 5] = [0.025, 0.25, 0.5, 0.75, 0.975];

/// Type-7 (linear interpolation) quantile of sorted data.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    match sorted.len() {
        0 => f64::NAN,
        1 => sorted[0],
        len => {
            let h = (len - 1) as f64 * p.clamp(0.0, 1.0);
            let lo = h.floor() as usize;
            let hi = (lo + 1).min(len - 1);
            sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
        }
    }
}

fn sorted(values: &[f64]) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxStats {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

impl BoxStats {
    pub fn from_values(values: &[f64]) -> Self {
        let s = sorted(values);
        Self {
            min: s.first().copied().unwrap_or(f64::NAN),
            q1: quantile(&s, 0.25),
            median: quantile(&s, 0.5),
            q3: quantile(&s, 0.75),
            max: s.last().copied().unwrap_or(f64::NAN),
        }
    }

    pub fn iqr(&self) -> f64 {
        self.q3 - self.q1
    }
}

/// Equal-width histogram over the data range; masses sum to one.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub masses: Vec<f64>,
}

impl Histogram {
    pub fn new(values: &[f64], bins: usize) -> Result<Self> {
        if bins == 0 {
            return Err(Error::Domain("histogram needs at least one bin".into()));
        }
        if values.is_empty() {
            return Err(Error::Domain("histogram of an empty sample".into()));
        }
        let (mut lo, mut hi) = values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        if lo == hi {
            lo -= 0.5;
            hi += 0.5;
        }
        let width = (hi - lo) / bins as f64;
        let edges: Vec<f64> = (0..=bins).map(|i| if i == bins { hi } else { lo + i as f64 * width }).collect();
        let mut counts = vec![0usize; bins];
        for &v in values {
            let k = (((v - lo) / width).floor() as usize).min(bins - 1);
            counts[k] += 1;
        }
        let total = values.len() as f64;
        Ok(Self { edges, masses: counts.iter().map(|&c| c as f64 / total).collect() })
    }

    pub fn centers(&self) -> Vec<f64> {
        self.edges.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
    }

    /// Mass divided by bin width.
    pub fn densities(&self) -> Vec<f64> {
        self.edges.windows(2).zip(&self.masses).map(|(w, m)| m / (w[1] - w[0])).collect()
    }

    pub fn mode_bin(&self) -> usize {
        let mut best = 0;
        for (i, m) in self.masses.iter().enumerate() {
            if *m > self.masses[best] {
                best = i;
            }
        }
        best
    }
}

/// Summary of `count` points in `d` dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalSummary {
    pub count: usize,
    pub mean: DVector<f64>,
    /// Unbiased sample covariance; zero for a single point.
    pub cov: DMatrix<f64>,
    /// Per coordinate, at [`SUMMARY_PROBS`].
    pub quantiles: Vec<[f64; 5]>,
    pub histograms: Vec<Histogram>,
}

impl EmpiricalSummary {
    pub fn from_points(points: &[DVector<f64>], bins: usize) -> Result<Self> {
        let first = points.first().ok_or_else(|| Error::Domain("summary of an empty sample".into()))?;
        let d = first.len();
        if let Some(bad) = points.iter().find(|p| p.len() != d) {
            return Err(Error::Shape { expected: d, found: bad.len() });
        }
        let count = points.len();
        let mut mean = DVector::zeros(d);
        for p in points {
            mean += p;
        }
        mean /= count as f64;
        let mut cov = DMatrix::zeros(d, d);
        if count > 1 {
            for p in points {
                let c = p - &mean;
                cov += &c * c.transpose();
            }
            cov /= (count - 1) as f64;
        }
        let mut quantiles = Vec::with_capacity(d);
        let mut histograms = Vec::with_capacity(d);
        for j in 0..d {
            let col: Vec<f64> = points.iter().map(|p| p[j]).collect();
            let s = sorted(&col);
            quantiles.push(SUMMARY_PROBS.map(|p| quantile(&s, p)));
            histograms.push(Histogram::new(&col, bins)?);
        }
        Ok(Self { count, mean, cov, quantiles, histograms })
    }
}
