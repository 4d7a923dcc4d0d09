//! Error metrics and aggregation: normalized bias, symmetric ratio error,
//! per-cell statistics, and region summaries over the experiment grid.

use serde::{Deserialize, Serialize};

use crate::error::{DveError, Result};

/// Normalized bias `(D̂ − D)/D`.
pub fn normalized_bias(estimate: f64, d_true: u64) -> f64 {
    let d = d_true as f64;
    (estimate - d) / d
}

/// Symmetric multiplicative ratio error `max(D̂/D, D/D̂)`, always ≥ 1.
pub fn ratio_error(estimate: f64, d_true: u64) -> Result<f64> {
    if !(estimate > 0.0) {
        return Err(DveError::InvalidEstimate(format!(
            "ratio error needs a positive estimate, got {estimate}"
        )));
    }
    let d = d_true as f64;
    Ok((estimate / d).max(d / estimate))
}

/// Aggregated statistics for one (cell, estimator) over its repetitions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellStats {
    pub mean_estimate: f64,
    pub mean_normalized_bias: f64,
    /// `100 · mean((D̂−D)/D)` over reps.
    pub pct_bias: f64,
    pub max_ratio_error: f64,
    pub mean_ratio_error: f64,
    /// `100 · sqrt(mean(((D̂−D)/D)²))` over reps.
    pub pct_rmse: f64,
    /// Unbiased sample variance of the raw estimates.
    pub estimate_variance: f64,
    pub reps: usize,
}

/// Aggregate the estimates of one (cell, estimator) across repetitions.
/// All records must share the same ground truth `D`.
pub fn aggregate_cell(estimates: &[f64], d_true: u64) -> Result<CellStats> {
    if estimates.is_empty() {
        return Err(DveError::EmptyAggregate);
    }
    let k = estimates.len() as f64;
    let mean_estimate = estimates.iter().sum::<f64>() / k;
    let biases: Vec<f64> = estimates.iter().map(|&e| normalized_bias(e, d_true)).collect();
    let mean_normalized_bias = biases.iter().sum::<f64>() / k;
    let pct_rmse = 100.0 * (biases.iter().map(|b| b * b).sum::<f64>() / k).sqrt();
    let mut max_ratio = 1.0f64;
    let mut sum_ratio = 0.0f64;
    for &e in estimates {
        let r = ratio_error(e, d_true)?;
        max_ratio = max_ratio.max(r);
        sum_ratio += r;
    }
    let variance = if estimates.len() > 1 {
        estimates.iter().map(|e| (e - mean_estimate).powi(2)).sum::<f64>() / (k - 1.0)
    } else {
        0.0
    };
    Ok(CellStats {
        mean_estimate,
        mean_normalized_bias,
        pct_bias: 100.0 * mean_normalized_bias,
        max_ratio_error: max_ratio,
        mean_ratio_error: sum_ratio / k,
        pct_rmse,
        estimate_variance: variance,
        reps: estimates.len(),
    })
}

/// Coordinates a region predicate sees for each cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellCoords {
    pub n_total: u64,
    pub alphabet: u64,
    pub theta: f64,
    pub q: f64,
    pub gamma_sq: f64,
}

impl CellCoords {
    pub fn avg_uniform_class_size(&self) -> f64 {
        self.n_total as f64 / self.alphabet as f64
    }
}

/// One row of a region summary: cell metrics averaged over the matching
/// cells (two-level mean: per-cell over reps, then over cells).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionSummary {
    pub cells: usize,
    pub mean_ratio_error: f64,
    pub max_ratio_error: f64,
    pub pct_bias: f64,
    pub pct_rmse: f64,
}

/// Average cell statistics over every cell matching the region predicate.
pub fn region_summary(
    cells: &[(CellCoords, CellStats)],
    region: impl Fn(&CellCoords) -> bool,
) -> Result<RegionSummary> {
    let matching: Vec<&CellStats> = cells
        .iter()
        .filter(|(c, _)| region(c))
        .map(|(_, s)| s)
        .collect();
    if matching.is_empty() {
        return Err(DveError::EmptyAggregate);
    }
    let k = matching.len() as f64;
    Ok(RegionSummary {
        cells: matching.len(),
        mean_ratio_error: matching.iter().map(|s| s.mean_ratio_error).sum::<f64>() / k,
        max_ratio_error: matching
            .iter()
            .map(|s| s.max_ratio_error)
            .fold(f64::NEG_INFINITY, f64::max),
        pct_bias: matching.iter().map(|s| s.pct_bias).sum::<f64>() / k,
        pct_rmse: matching.iter().map(|s| s.pct_rmse).sum::<f64>() / k,
    })
}

/// The study's built-in region bands. Low/high `N/A` overlap at 100.
pub mod bands {
    use super::CellCoords;

    pub fn theta_low(c: &CellCoords) -> bool {
        c.theta <= 1.0
    }
    pub fn theta_high(c: &CellCoords) -> bool {
        c.theta >= 1.5
    }
    pub fn na_low(c: &CellCoords) -> bool {
        c.avg_uniform_class_size() <= 100.0
    }
    pub fn na_high(c: &CellCoords) -> bool {
        c.avg_uniform_class_size() >= 100.0
    }
    pub fn q_low(c: &CellCoords) -> bool {
        c.q <= 0.005
    }
    pub fn q_high(c: &CellCoords) -> bool {
        c.q >= 0.01
    }
    pub fn gamma_low(c: &CellCoords) -> bool {
        c.gamma_sq < 1.0
    }
    pub fn gamma_mid(c: &CellCoords) -> bool {
        (1.0..=50.0).contains(&c.gamma_sq)
    }
    pub fn gamma_high(c: &CellCoords) -> bool {
        c.gamma_sq > 50.0
    }
}
