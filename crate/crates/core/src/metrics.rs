//! Recovery scores and summary statistics.

use serde::Serialize;

use crate::error::{Error, Result};

/// Fraction of classes whose presence (count > 0) is recovered correctly.
pub fn cacc(est: &[usize], truth: &[usize]) -> Result<f64> {
    if est.len() != truth.len() || est.is_empty() {
        return Err(Error::Argument(format!(
            "count vectors have lengths {} and {}",
            est.len(),
            truth.len()
        )));
    }
    let agree = est
        .iter()
        .zip(truth)
        .filter(|(e, t)| (**e > 0) == (**t > 0))
        .count();
    Ok(agree as f64 / est.len() as f64)
}

/// Size of the multiset intersection of labels over `m · |B|`.
pub fn iacc(est: &[usize], truth: &[usize], m: usize, batch_size: usize) -> Result<f64> {
    if est.len() != truth.len() {
        return Err(Error::Argument(format!(
            "count vectors have lengths {} and {}",
            est.len(),
            truth.len()
        )));
    }
    let total = m * batch_size;
    if total == 0 || truth.iter().sum::<usize>() != total {
        return Err(Error::Argument(format!(
            "true counts sum to {}, expected {total}",
            truth.iter().sum::<usize>()
        )));
    }
    let hit: usize = est.iter().zip(truth).map(|(e, t)| (*e).min(*t)).sum();
    Ok(hit as f64 / total as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RecoveryScore {
    pub cacc: f64,
    pub iacc: f64,
    pub l1_count_error: usize,
    /// Set when the estimate does not sum to `m · |B|`.
    pub sum_mismatch: bool,
}

pub fn score(est: &[usize], truth: &[usize], m: usize, batch_size: usize) -> Result<RecoveryScore> {
    let iacc = iacc(est, truth, m, batch_size)?;
    Ok(RecoveryScore {
        cacc: cacc(est, truth)?,
        iacc,
        l1_count_error: est.iter().zip(truth).map(|(e, t)| e.abs_diff(*t)).sum(),
        sum_mismatch: est.iter().sum::<usize>() != m * batch_size,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Stats {
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

impl Stats {
    /// Mean, unbiased standard deviation (0 for one value), min and max.
    pub fn of(values: &[f64]) -> Result<Stats> {
        if values.is_empty() {
            return Err(Error::Argument("no values to summarize".into()));
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Ok(Stats { mean, std, min, max })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Summary {
    pub cacc: Stats,
    pub iacc: Stats,
    pub l1_count_error: Stats,
}

pub fn summarize(scores: &[RecoveryScore]) -> Result<Summary> {
    let col = |f: fn(&RecoveryScore) -> f64| scores.iter().map(f).collect::<Vec<_>>();
    Ok(Summary {
        cacc: Stats::of(&col(|s| s.cacc))?,
        iacc: Stats::of(&col(|s| s.iacc))?,
        l1_count_error: Stats::of(&col(|s| s.l1_count_error as f64))?,
    })
}
