//! Sensitivity and alignment statistics: tie-corrected Kendall's tau,
//! coverage proportion, population standard deviation, and cross-dataset
//! rank stability.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum StatsError {
    #[error("series lengths differ: {x} vs {y}")]
    LengthMismatch { x: usize, y: usize },
    #[error("series too short (need at least 2 values)")]
    EmptyDataset,
    #[error("all values tied; tau is undefined")]
    Degenerate,
    #[error("range_max must exceed range_min")]
    BadRange,
    #[error("value {0} outside the declared range")]
    OutOfRange(f64),
    #[error("method label sets differ across datasets")]
    LabelMismatch,
    #[error("need at least 2 datasets for rank stability")]
    NotEnoughDatasets,
    #[error("non-finite value in series")]
    NonFinite,
}

/// A labeled series of metric values over ordered conditions (lambda values
/// or method names).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSeries {
    pub labels: Vec<String>,
    pub values: Vec<f64>,
}

impl MetricSeries {
    pub fn new(labels: Vec<String>, values: Vec<f64>) -> Result<Self, StatsError> {
        if labels.len() != values.len() {
            return Err(StatsError::LengthMismatch { x: labels.len(), y: values.len() });
        }
        if values.len() < 2 {
            return Err(StatsError::EmptyDataset);
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(StatsError::NonFinite);
        }
        Ok(Self { labels, values })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Tie-corrected Kendall's tau-b between two equal-length series:
/// `(C - D) / sqrt((n0 - n1)(n0 - n2))` over all pairs, where n1 and n2
/// count tied pairs within each series. Errors with [`StatsError::Degenerate`]
/// when either series is entirely tied.
pub fn kendall_tau(x: &MetricSeries, y: &MetricSeries) -> Result<f64, StatsError> {
    kendall_tau_values(&x.values, &y.values)
}

pub fn kendall_tau_values(xs: &[f64], ys: &[f64]) -> Result<f64, StatsError> {
    if xs.len() != ys.len() {
        return Err(StatsError::LengthMismatch { x: xs.len(), y: ys.len() });
    }
    let n = xs.len();
    if n < 2 {
        return Err(StatsError::EmptyDataset);
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(StatsError::NonFinite);
    }

    let mut concordant = 0i64;
    let mut discordant = 0i64;
    let mut ties_x = 0i64;
    let mut ties_y = 0i64;
    for i in 0..n {
        for j in (i + 1)..n {
            let dx = xs[i].partial_cmp(&xs[j]).expect("finite");
            let dy = ys[i].partial_cmp(&ys[j]).expect("finite");
            match (dx, dy) {
                (std::cmp::Ordering::Equal, std::cmp::Ordering::Equal) => {
                    ties_x += 1;
                    ties_y += 1;
                }
                (std::cmp::Ordering::Equal, _) => ties_x += 1,
                (_, std::cmp::Ordering::Equal) => ties_y += 1,
                (a, b) if a == b => concordant += 1,
                _ => discordant += 1,
            }
        }
    }
    let n0 = (n * (n - 1) / 2) as i64;
    let denom_x = n0 - ties_x;
    let denom_y = n0 - ties_y;
    if denom_x == 0 || denom_y == 0 {
        return Err(StatsError::Degenerate);
    }
    Ok((concordant - discordant) as f64 / ((denom_x as f64) * (denom_y as f64)).sqrt())
}

/// (max - min) of the observed values divided by the theoretical range.
pub fn coverage_proportion(
    values: &[f64],
    range_min: f64,
    range_max: f64,
) -> Result<f64, StatsError> {
    if values.is_empty() {
        return Err(StatsError::EmptyDataset);
    }
    if !(range_max > range_min) {
        return Err(StatsError::BadRange);
    }
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &v in values {
        if !v.is_finite() {
            return Err(StatsError::NonFinite);
        }
        if v < range_min || v > range_max {
            return Err(StatsError::OutOfRange(v));
        }
        lo = lo.min(v);
        hi = hi.max(v);
    }
    Ok((hi - lo) / (range_max - range_min))
}

/// Population standard deviation (divisor N).
pub fn std_dev(values: &[f64]) -> Result<f64, StatsError> {
    if values.len() < 2 {
        return Err(StatsError::EmptyDataset);
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    Ok(var.sqrt())
}

/// Rank stability of method scores across datasets: Kendall's tau between
/// the two datasets' series aligned by method label; with more than two
/// datasets, the mean over all pairwise taus.
pub fn rank_stability(series_by_dataset: &[(String, MetricSeries)]) -> Result<f64, StatsError> {
    if series_by_dataset.len() < 2 {
        return Err(StatsError::NotEnoughDatasets);
    }
    let reference = &series_by_dataset[0].1;
    for (_, series) in series_by_dataset.iter().skip(1) {
        if series.labels != reference.labels {
            return Err(StatsError::LabelMismatch);
        }
    }
    let mut taus = Vec::new();
    for i in 0..series_by_dataset.len() {
        for j in (i + 1)..series_by_dataset.len() {
            taus.push(kendall_tau(&series_by_dataset[i].1, &series_by_dataset[j].1)?);
        }
    }
    Ok(taus.iter().sum::<f64>() / taus.len() as f64)
}
