//! Kernel calibration: step-scale choice by ESJD per likelihood evaluation
//! and repeat counts by accumulated Mahalanobis jump distance.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::covariance::{weighted_mean, Covariance};
use crate::error::{contract, Result};
use crate::kernels::{KernelConfig, KernelFamily, KernelOptions, MutationTarget};
use crate::mutation::{self, StepSummary, SweepStats};
use crate::particles::Particle;
use crate::rng::SimRng;

/// Default safety cap on adaptive repeats.
pub const MAX_REPEATS: usize = 100;

/// How many kernel sweeps to apply at each level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Repeats {
    Fixed(usize),
    /// Sweep until `proportion` of particles have travelled further than the
    /// population spread, at most `max` sweeps.
    Adaptive {
        max: usize,
        proportion: f64,
    },
}

impl Default for Repeats {
    fn default() -> Self {
        Repeats::Adaptive {
            max: MAX_REPEATS,
            proportion: 0.5,
        }
    }
}

/// Pilot-run tuning settings.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TuningConfig {
    /// Candidate step scales; `None` uses [`default_candidates`].
    pub candidates: Option<Vec<f64>>,
    pub repeats: Repeats,
}

/// `{2.38 / sqrt(d) * 2^j : j = -4..=2}` for random-walk and Langevin
/// kernels; slice widths and axis steps default to their unit scale.
pub fn default_candidates(family: KernelFamily, dimension: usize) -> Vec<f64> {
    match family {
        KernelFamily::Rw | KernelFamily::Mala => {
            let base = 2.38 / (dimension as f64).sqrt();
            (-4..=2).map(|j| base * 2f64.powi(j)).collect()
        }
        _ => vec![1.0],
    }
}

/// Tuning outcome for the mutation that follows one level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelTuning {
    pub step_scale: f64,
    /// Sweeps applied after step-scale selection.
    pub repeats: usize,
    /// Absent when there was no choice of step scale.
    pub median_esjd_per_eval: Option<f64>,
    pub j_desired: f64,
    pub covariance: Covariance,
}

/// Everything a fixed run needs to reproduce a pilot's kernels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningReport {
    pub family: KernelFamily,
    pub options: KernelOptions,
    pub levels: Vec<LevelTuning>,
}

impl TuningReport {
    pub fn new(family: KernelFamily, options: KernelOptions) -> Self {
        Self {
            family,
            options,
            levels: Vec::new(),
        }
    }

    pub fn config(&self, level: usize) -> Result<KernelConfig> {
        let t = self.levels.get(level).ok_or_else(|| {
            contract(format!(
                "tuning report has {} levels, level {level} requested",
                self.levels.len()
            ))
        })?;
        Ok(KernelConfig {
            family: self.family,
            step_scale: t.step_scale,
            covariance: t.covariance.clone(),
            repeats: t.repeats,
            options: self.options.clone(),
        })
    }
}

/// Kernel source for fixed runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelPlan {
    /// Per-level kernels recorded by a pilot run.
    Tuned(TuningReport),
    /// The same kernel at every level.
    Static(KernelConfig),
}

impl KernelPlan {
    pub fn config(&self, level: usize) -> Result<KernelConfig> {
        match self {
            KernelPlan::Tuned(r) => r.config(level),
            KernelPlan::Static(c) => Ok(c.clone()),
        }
    }
}

/// `sqrt(y^T cov^-1 y)`.
pub fn mahalanobis(y: &[f64], cov: &Covariance) -> Result<f64> {
    if y.len() != cov.dim() {
        return Err(contract("vector and covariance dimensions differ"));
    }
    Ok(cov.mahalanobis(y))
}

/// Weighted mean Mahalanobis distance of the particles from their weighted
/// mean. Returns `(0, true)` when every particle sits at the same point.
pub fn j_desired(points: &[&[f64]], weights: &[f64], cov: &Covariance) -> (f64, bool) {
    let mean = weighted_mean(points, weights);
    let j: f64 = points
        .iter()
        .zip(weights)
        .map(|(p, w)| {
            let d: Vec<f64> = p.iter().zip(&mean).map(|(a, b)| a - b).collect();
            w * cov.mahalanobis(&d)
        })
        .sum();
    let degenerate = points.iter().all(|p| *p == points[0]);
    if degenerate {
        (0.0, true)
    } else {
        (j, false)
    }
}

/// Median ESJD per likelihood evaluation for one candidate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CandidateScore {
    pub step_scale: f64,
    pub median_esjd_per_eval: f64,
    pub particles: usize,
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Assigns each particle a uniformly random candidate step scale, applies
/// one step, and returns the candidate with the highest median ESJD per
/// evaluation (ties go to the smaller scale). The step uses single-stage
/// acceptance so the acceptance probability enters the ESJD explicitly.
pub fn select_step_scale(
    particles: &mut [Particle],
    rngs: &mut [SimRng],
    target: &MutationTarget,
    base: &KernelConfig,
    candidates: &[f64],
) -> Result<(f64, Vec<CandidateScore>, SweepStats)> {
    if candidates.is_empty() {
        return Err(contract("empty step-scale candidate grid"));
    }
    if candidates.iter().any(|c| !(*c > 0.0 && c.is_finite())) {
        return Err(contract("step-scale candidates must be positive"));
    }
    let configs: Vec<KernelConfig> = candidates
        .iter()
        .map(|&h| {
            let mut c = base.clone();
            c.step_scale = h;
            c.options.two_stage = false;
            c
        })
        .collect();
    let k = configs.len();
    let (stats, steps) = mutation::sweep_with(particles, rngs, target, |rng| {
        let i = rng.random_range(0..k);
        (i, &configs[i])
    })?;
    let per_eval = matches!(base.family, KernelFamily::Slice | KernelFamily::Exact);
    let mut buckets: Vec<Vec<f64>> = vec![Vec::new(); k];
    for (i, StepSummary { esjd, evals, .. }) in steps {
        let divisor = if per_eval { evals.max(1) as f64 } else { 1.0 };
        buckets[i].push(esjd / divisor);
    }
    let scores: Vec<CandidateScore> = buckets
        .into_iter()
        .zip(candidates)
        .map(|(mut b, &h)| CandidateScore {
            step_scale: h,
            particles: b.len(),
            median_esjd_per_eval: if b.is_empty() {
                f64::NAN
            } else {
                median(&mut b)
            },
        })
        .collect();
    let best = scores
        .iter()
        .filter(|s| !s.median_esjd_per_eval.is_nan())
        .max_by(|a, b| {
            a.median_esjd_per_eval
                .total_cmp(&b.median_esjd_per_eval)
                .then(b.step_scale.total_cmp(&a.step_scale))
        })
        .map(|s| s.step_scale)
        .unwrap_or(candidates[0]);
    Ok((best, scores, stats))
}

/// Applies whole-population sweeps until at least `proportion` of the
/// particles have a cumulative jump distance of at least `j_desired`, or
/// `max_r` sweeps have been made. Returns the number of sweeps.
pub fn adaptive_repeats(
    particles: &mut [Particle],
    rngs: &mut [SimRng],
    target: &MutationTarget,
    config: &KernelConfig,
    j_desired: f64,
    max_r: usize,
    proportion: f64,
) -> Result<(usize, SweepStats)> {
    if !(j_desired >= 0.0) {
        return Err(contract("J_desired must be non-negative"));
    }
    let n = particles.len();
    let mut cumulative = vec![0.0; n];
    let mut total = SweepStats::default();
    let max_r = max_r.max(1);
    for r in 1..=max_r {
        let (stats, steps) = mutation::sweep(particles, rngs, target, config)?;
        total.merge(stats);
        for (c, s) in cumulative.iter_mut().zip(&steps) {
            *c += s.jump;
        }
        let done = cumulative.iter().filter(|c| **c >= j_desired).count();
        if done as f64 >= proportion * n as f64 {
            return Ok((r, total));
        }
    }
    Ok((max_r, total))
}

/// Pilot-run mutation for one level: pick a step scale (when there is a
/// choice), then apply the configured repeats. The population covariance and
/// `J_desired` come from the weighted cloud before resampling.
#[allow(clippy::too_many_arguments)]
pub fn tune_and_move(
    particles: &mut [Particle],
    rngs: &mut [SimRng],
    target: &MutationTarget,
    family: KernelFamily,
    options: &KernelOptions,
    covariance: Covariance,
    tuning: &TuningConfig,
    j_desired: f64,
) -> Result<(LevelTuning, SweepStats)> {
    let d = target.model().dimension();
    let mut config = KernelConfig {
        family,
        step_scale: 1.0,
        covariance,
        repeats: 1,
        options: options.clone(),
    };
    crate::kernels::check_kernel(target, &config)?;
    let mut total = SweepStats::default();
    if family == KernelFamily::Exact {
        total.merge(mutation::apply_kernel(particles, rngs, target, &config)?);
        return Ok((
            LevelTuning {
                step_scale: 1.0,
                repeats: 1,
                median_esjd_per_eval: None,
                j_desired,
                covariance: config.covariance,
            },
            total,
        ));
    }
    let candidates = tuning
        .candidates
        .clone()
        .unwrap_or_else(|| default_candidates(family, d));
    let mut score = None;
    if candidates.len() > 1 {
        let (best, scores, stats) =
            select_step_scale(particles, rngs, target, &config, &candidates)?;
        total.merge(stats);
        config.step_scale = best;
        score = scores
            .iter()
            .find(|s| s.step_scale == best)
            .map(|s| s.median_esjd_per_eval);
    } else if let Some(&h) = candidates.first() {
        config.step_scale = h;
    } else {
        return Err(contract("empty step-scale candidate grid"));
    }
    config.validate(d)?;
    let repeats = match tuning.repeats {
        Repeats::Fixed(r) => {
            config.repeats = r;
            total.merge(mutation::apply_kernel(particles, rngs, target, &config)?);
            r
        }
        Repeats::Adaptive { max, proportion } => {
            let (r, stats) =
                adaptive_repeats(particles, rngs, target, &config, j_desired, max, proportion)?;
            total.merge(stats);
            r
        }
    };
    Ok((
        LevelTuning {
            step_scale: config.step_scale,
            repeats,
            median_esjd_per_eval: score,
            j_desired,
            covariance: config.covariance,
        },
        total,
    ))
}
