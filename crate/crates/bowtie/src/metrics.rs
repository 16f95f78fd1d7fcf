//! Test-set metrics: RMSE, predictive negative log-likelihood and empirical
//! coverage of Gaussian credible intervals.

use std::collections::BTreeMap;

use bowtie_core::linalg::Mat;
use bowtie_core::PredictiveSummary;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub rmse: f64,
    /// Mean negative log predictive density (lower is better).
    pub nll: f64,
    /// Coverage fraction per credible level, keyed by the level as text.
    pub ec: BTreeMap<String, f64>,
    pub n_test: usize,
}

/// Two-sided standard-normal quantile for a central credible level.
pub fn z_value(level: f64) -> f64 {
    Normal::standard().inverse_cdf(0.5 + 0.5 * level)
}

/// `mean -/+ z sd` bounds of the central `level` interval.
pub fn interval(mean: f64, variance: f64, level: f64) -> (f64, f64) {
    let half = z_value(level) * variance.sqrt();
    (mean - half, mean + half)
}

/// Metrics over every target coordinate of every test point.
pub fn metrics(y: &Mat, summaries: &[PredictiveSummary], levels: &[f64]) -> Result<MetricsReport, CliError> {
    if y.rows() != summaries.len() {
        return Err(CliError::Input(format!("{} targets vs {} predictions", y.rows(), summaries.len())));
    }
    if let Some(&bad) = levels.iter().find(|&&l| !(l > 0.0 && l < 1.0)) {
        return Err(CliError::Usage(format!("credible level {bad} not in (0, 1)")));
    }
    let half_log_2pi = 0.5 * (2.0 * std::f64::consts::PI).ln();
    let mut sq = 0.0;
    let mut nll = 0.0;
    let mut hits = vec![0usize; levels.len()];
    let mut count = 0usize;
    for (i, s) in summaries.iter().enumerate() {
        for d in 0..y.cols() {
            let (t, mu, var) = (y[(i, d)], s.mean[d], s.variance[d]);
            sq += (t - mu).powi(2);
            nll += half_log_2pi + 0.5 * var.ln() + (t - mu).powi(2) / (2.0 * var);
            for (h, &level) in hits.iter_mut().zip(levels) {
                let (lo, hi) = interval(mu, var, level);
                if lo <= t && t <= hi {
                    *h += 1;
                }
            }
            count += 1;
        }
    }
    let n = count.max(1) as f64;
    let ec = levels.iter().zip(&hits).map(|(l, &h)| (level_key(*l), h as f64 / n)).collect();
    Ok(MetricsReport { rmse: (sq / n).sqrt(), nll: nll / n, ec, n_test: summaries.len() })
}

/// Map key of a credible level, e.g. `0.95`.
pub fn level_key(level: f64) -> String {
    format!("{level}")
}
