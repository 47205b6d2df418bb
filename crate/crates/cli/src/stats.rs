//! Aggregate statistics over repeated runs.

use nssmc_core::{Error, Result};
use serde::{Deserialize, Serialize};

/// One row of `runs.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRow {
    pub run: usize,
    pub seed: u64,
    pub log_z: f64,
    pub z: f64,
    /// `Z_hat / Z` when the model has a closed-form evidence.
    pub z_ratio: Option<f64>,
    pub evals: u64,
    pub levels: usize,
    pub archive: String,
}

/// The single row of `summary.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub algorithm: String,
    pub model: String,
    pub n: usize,
    pub runs: usize,
    pub mean_log_z: f64,
    pub mean_z: f64,
    /// Standard error of the mean of `Z_hat`, as a percentage of that mean.
    pub se_percent: Option<f64>,
    pub mean_evals: f64,
    pub wnv: Option<f64>,
    pub log_z_true: Option<f64>,
    pub mean_z_ratio: Option<f64>,
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance; needs at least two values.
pub fn sample_variance(xs: &[f64]) -> Result<f64> {
    if xs.len() < 2 {
        return Err(Error::ContractViolation(format!(
            "sample variance needs at least 2 values, got {}",
            xs.len()
        )));
    }
    let m = mean(xs);
    Ok(xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64)
}

/// Work-normalised variance: sample variance of the estimates times the mean
/// number of likelihood evaluations.
pub fn wnv(estimates: &[f64], evals: &[u64]) -> Result<f64> {
    if estimates.len() != evals.len() {
        return Err(Error::ContractViolation(format!(
            "{} estimates but {} evaluation counts",
            estimates.len(),
            evals.len()
        )));
    }
    let var = sample_variance(estimates)?;
    let work = evals.iter().map(|&e| e as f64).sum::<f64>() / evals.len() as f64;
    Ok(var * work)
}

/// WNV relative to a baseline method's WNV.
pub fn relative_wnv(wnv: f64, baseline: f64) -> Result<f64> {
    if !(baseline > 0.0) {
        return Err(Error::ContractViolation(format!(
            "baseline WNV must be positive, got {baseline}"
        )));
    }
    Ok(wnv / baseline)
}

/// Standard error of the mean as a percentage of the mean.
pub fn se_percent(xs: &[f64]) -> Result<f64> {
    let var = sample_variance(xs)?;
    Ok((var / xs.len() as f64).sqrt() / mean(xs) * 100.0)
}

impl Summary {
    /// Aggregates `rows` (in run order).
    pub fn from_rows(
        algorithm: &str,
        model: &str,
        n: usize,
        log_z_true: Option<f64>,
        rows: &[RunRow],
    ) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::ContractViolation("no runs to summarise".into()));
        }
        let z: Vec<f64> = rows.iter().map(|r| r.z).collect();
        let log_z: Vec<f64> = rows.iter().map(|r| r.log_z).collect();
        let evals: Vec<u64> = rows.iter().map(|r| r.evals).collect();
        let ratios: Option<Vec<f64>> = rows.iter().map(|r| r.z_ratio).collect();
        let repeated = rows.len() >= 2;
        Ok(Self {
            algorithm: algorithm.to_string(),
            model: model.to_string(),
            n,
            runs: rows.len(),
            mean_log_z: mean(&log_z),
            mean_z: mean(&z),
            se_percent: if repeated {
                Some(se_percent(&z)?)
            } else {
                None
            },
            mean_evals: evals.iter().map(|&e| e as f64).sum::<f64>() / rows.len() as f64,
            wnv: if repeated {
                Some(wnv(&z, &evals)?)
            } else {
                None
            },
            log_z_true,
            mean_z_ratio: ratios.map(|r| mean(&r)),
        })
    }
}
