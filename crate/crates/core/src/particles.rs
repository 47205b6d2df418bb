//! Weighted particle arithmetic: log-sum-exp normalisation, effective sample
//! size and estimators over the posterior archive.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{contract, Error, Result};

/// Tolerance used when checking that supplied weights are normalised.
pub const NORMALIZATION_TOL: f64 = 1e-9;

/// A position together with its cached log prior and log likelihood.
#[derive(Debug, Clone, PartialEq)]
pub struct Particle {
    pub x: Vec<f64>,
    pub log_prior: f64,
    pub log_like: f64,
}

/// `log(sum(exp(values)))`, exact for `-inf` entries. Returns `-inf` for an
/// empty slice or when every entry is `-inf`.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    let sum: f64 = values.iter().map(|&v| (v - max).exp()).sum();
    max + sum.ln()
}

/// `log(exp(a) + exp(b))`.
pub fn log_add_exp(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    if hi == f64::NEG_INFINITY {
        return hi;
    }
    hi + (lo - hi).exp().ln_1p()
}

/// Normalise log-weights. Returns the normalised weights and the log of their
/// unnormalised sum.
pub fn normalize(log_weights: &[f64]) -> Result<(Vec<f64>, f64)> {
    if log_weights.iter().any(|w| w.is_nan()) {
        return Err(contract("NaN log-weight"));
    }
    let log_sum = log_sum_exp(log_weights);
    if log_sum == f64::NEG_INFINITY {
        return Err(Error::DegenerateCloud(
            "all log-weights are -inf".to_string(),
        ));
    }
    if !log_sum.is_finite() {
        return Err(contract("log-weights sum to +inf"));
    }
    let max = log_weights
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    let raw: Vec<f64> = log_weights.iter().map(|&lw| (lw - max).exp()).collect();
    let total: f64 = raw.iter().sum();
    Ok((raw.into_iter().map(|v| v / total).collect(), log_sum))
}

pub(crate) fn check_normalized(weights: &[f64]) -> Result<()> {
    if weights.is_empty() {
        return Err(contract("empty weight vector"));
    }
    if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(contract("weights must be finite and non-negative"));
    }
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > NORMALIZATION_TOL {
        return Err(contract(format!("weights sum to {total}, expected 1")));
    }
    Ok(())
}

/// Effective sample size `(sum W_k^2)^-1` of normalised weights.
pub fn ess(weights: &[f64]) -> Result<f64> {
    check_normalized(weights)?;
    let sq: f64 = weights.iter().map(|w| w * w).sum();
    Ok(1.0 / sq)
}

/// ESS computed directly from unnormalised log-weights,
/// `(sum w)^2 / sum w^2`, without leaving log space.
pub fn ess_from_log_weights(log_weights: &[f64]) -> f64 {
    let lse = log_sum_exp(log_weights);
    if lse == f64::NEG_INFINITY {
        return 0.0;
    }
    let doubled: Vec<f64> = log_weights.iter().map(|w| 2.0 * w).collect();
    (2.0 * lse - log_sum_exp(&doubled)).exp()
}

/// A particle population with log-weights, targeting one level of a sampler.
#[derive(Debug, Clone)]
pub struct ParticleCloud {
    pub particles: Vec<Particle>,
    pub log_weights: Vec<f64>,
    pub iteration: usize,
}

impl ParticleCloud {
    /// Equally weighted cloud.
    pub fn uniform(particles: Vec<Particle>) -> Self {
        let n = particles.len();
        let lw = -(n as f64).ln();
        Self {
            particles,
            log_weights: vec![lw; n],
            iteration: 1,
        }
    }

    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    pub fn log_likes(&self) -> Vec<f64> {
        self.particles.iter().map(|p| p.log_like).collect()
    }

    pub fn positions(&self) -> Vec<&[f64]> {
        self.particles.iter().map(|p| p.x.as_slice()).collect()
    }

    pub fn normalized_weights(&self) -> Result<Vec<f64>> {
        normalize(&self.log_weights).map(|(w, _)| w)
    }
}

/// One weighted posterior sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchiveRecord {
    pub position: Vec<f64>,
    pub log_weight: f64,
    pub level: usize,
}

/// Weighted samples collected across all levels of a run. The unnormalised
/// weights sum to the evidence estimate; normalised they target the posterior.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct WeightedArchive {
    pub records: Vec<ArchiveRecord>,
}

impl WeightedArchive {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a record. Zero-weight (`-inf`) records carry no information and
    /// are dropped.
    pub fn push(&mut self, position: Vec<f64>, log_weight: f64, level: usize) {
        if log_weight > f64::NEG_INFINITY {
            self.records.push(ArchiveRecord {
                position,
                log_weight,
                level,
            });
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Log of the total unnormalised weight.
    pub fn log_total(&self) -> f64 {
        let lw: Vec<f64> = self.records.iter().map(|r| r.log_weight).collect();
        log_sum_exp(&lw)
    }

    pub fn normalized_weights(&self) -> Result<Vec<f64>> {
        if self.records.is_empty() {
            return Err(contract("empty archive"));
        }
        let lw: Vec<f64> = self.records.iter().map(|r| r.log_weight).collect();
        normalize(&lw).map(|(w, _)| w)
    }

    /// Posterior mass carried by each level, `Z_t / Z`.
    pub fn level_masses(&self) -> Result<Vec<(usize, f64)>> {
        let w = self.normalized_weights()?;
        let mut out: Vec<(usize, f64)> = Vec::new();
        for (r, wk) in self.records.iter().zip(w) {
            match out.iter_mut().find(|(l, _)| *l == r.level) {
                Some((_, m)) => *m += wk,
                None => out.push((r.level, wk)),
            }
        }
        out.sort_by_key(|(l, _)| *l);
        Ok(out)
    }

    /// Self-normalised estimate of the posterior expectation of `phi`.
    pub fn estimate<F: Fn(&[f64]) -> f64>(&self, phi: F) -> Result<f64> {
        let w = self.normalized_weights()?;
        Ok(self
            .records
            .iter()
            .zip(w)
            .map(|(r, wk)| wk * phi(&r.position))
            .sum())
    }

    /// Smallest `v` such that the archive weight of `{phi <= v}` is at least
    /// `q` (left-continuous inverse CDF).
    pub fn quantile<F: Fn(&[f64]) -> f64>(&self, phi: F, q: f64) -> Result<f64> {
        if !(q > 0.0 && q < 1.0) {
            return Err(contract(format!("quantile level {q} outside (0, 1)")));
        }
        let w = self.normalized_weights()?;
        let mut pairs: Vec<(f64, f64)> = self
            .records
            .iter()
            .zip(w)
            .map(|(r, wk)| (phi(&r.position), wk))
            .collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut cum = 0.0;
        let mut i = 0;
        while i < pairs.len() {
            let v = pairs[i].0;
            while i < pairs.len() && pairs[i].0 == v {
                cum += pairs[i].1;
                i += 1;
            }
            if cum >= q - 1e-12 {
                return Ok(v);
            }
        }
        Ok(pairs.last().map(|p| p.0).unwrap_or(f64::NAN))
    }

    /// One JSON object per line: `{"position":[..],"log_weight":..,"level":..}`.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for r in &self.records {
            serde_json::to_writer(&mut out, r)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(input: R) -> std::io::Result<Self> {
        let mut records = Vec::new();
        for line in input.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            records.push(serde_json::from_str(&line)?);
        }
        Ok(Self { records })
    }
}

/// `sum_k W_k phi(X_k)` over an archive.
pub fn weighted_estimate<F: Fn(&[f64]) -> f64>(archive: &WeightedArchive, phi: F) -> Result<f64> {
    archive.estimate(phi)
}

pub fn weighted_quantile<F: Fn(&[f64]) -> f64>(
    archive: &WeightedArchive,
    phi: F,
    q: f64,
) -> Result<f64> {
    archive.quantile(phi, q)
}
