//! Level schedules, per-level records and run results shared by all
//! samplers.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::covariance::Covariance;
use crate::error::{contract, Result};
use crate::model::TargetModel;
use crate::particles::{log_sum_exp, Particle, WeightedArchive};
use crate::rng::{Domain, Streams};

/// Where a schedule came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Pilot,
    #[default]
    User,
}

/// Likelihood thresholds `-inf = l_1 < l_2 < ... < l_T < l_{T+1} = +inf`.
/// Only the finite interior thresholds are stored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawThresholds", into = "RawThresholds")]
pub struct ThresholdSchedule {
    thresholds: Vec<f64>,
    strict: bool,
    provenance: Provenance,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawThresholds {
    thresholds: Vec<f64>,
    #[serde(default)]
    strict: bool,
    #[serde(default)]
    provenance: Provenance,
}

impl TryFrom<RawThresholds> for ThresholdSchedule {
    type Error = crate::error::Error;

    fn try_from(r: RawThresholds) -> Result<Self> {
        ThresholdSchedule::new(r.thresholds, r.strict, r.provenance)
    }
}

impl From<ThresholdSchedule> for RawThresholds {
    fn from(s: ThresholdSchedule) -> Self {
        RawThresholds {
            thresholds: s.thresholds,
            strict: s.strict,
            provenance: s.provenance,
        }
    }
}

impl ThresholdSchedule {
    /// `strict` selects `log L > l_t` for the constrained priors instead of
    /// `log L >= l_t`.
    pub fn new(thresholds: Vec<f64>, strict: bool, provenance: Provenance) -> Result<Self> {
        if thresholds.iter().any(|t| !t.is_finite()) {
            return Err(contract("interior thresholds must be finite"));
        }
        if thresholds.windows(2).any(|w| w[0] >= w[1]) {
            return Err(contract("thresholds must be strictly increasing"));
        }
        Ok(Self {
            thresholds,
            strict,
            provenance,
        })
    }

    /// Number of levels `T`.
    pub fn levels(&self) -> usize {
        self.thresholds.len() + 1
    }

    /// `l_t` for `t` in `1..=T+1`, with the infinite sentinels.
    pub fn level(&self, t: usize) -> f64 {
        if t <= 1 {
            f64::NEG_INFINITY
        } else if t - 2 < self.thresholds.len() {
            self.thresholds[t - 2]
        } else {
            f64::INFINITY
        }
    }

    pub fn thresholds(&self) -> &[f64] {
        &self.thresholds
    }

    pub fn strict(&self) -> bool {
        self.strict
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }
}

/// Temperatures `0 = l_1 < ... < l_T = 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawTemperatures", into = "RawTemperatures")]
pub struct TemperatureSchedule {
    temperatures: Vec<f64>,
    provenance: Provenance,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTemperatures {
    temperatures: Vec<f64>,
    #[serde(default)]
    provenance: Provenance,
}

impl TryFrom<RawTemperatures> for TemperatureSchedule {
    type Error = crate::error::Error;

    fn try_from(r: RawTemperatures) -> Result<Self> {
        TemperatureSchedule::new(r.temperatures, r.provenance)
    }
}

impl From<TemperatureSchedule> for RawTemperatures {
    fn from(s: TemperatureSchedule) -> Self {
        RawTemperatures {
            temperatures: s.temperatures,
            provenance: s.provenance,
        }
    }
}

impl TemperatureSchedule {
    pub fn new(temperatures: Vec<f64>, provenance: Provenance) -> Result<Self> {
        if temperatures.len() < 2 || temperatures[0] != 0.0 || *temperatures.last().unwrap() != 1.0
        {
            return Err(contract("temperatures must start at 0 and end at 1"));
        }
        if temperatures.windows(2).any(|w| w[0] >= w[1]) {
            return Err(contract("temperatures must be strictly increasing"));
        }
        Ok(Self {
            temperatures,
            provenance,
        })
    }

    pub fn temperatures(&self) -> &[f64] {
        &self.temperatures
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LevelSchedule {
    Thresholds(ThresholdSchedule),
    Temperatures(TemperatureSchedule),
}

/// One row of a run's level table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelRecord {
    pub level: usize,
    /// Threshold `l_t` (nested samplers) or temperature (annealing).
    pub value: f64,
    /// Log prior mass above the level, when the sampler tracks it.
    pub log_p: Option<f64>,
    /// Log evidence contributed by this level: the shell partial for nested
    /// samplers, the log mean incremental weight for annealing.
    pub log_z_level: f64,
    pub log_z_cumulative: f64,
    pub ess: f64,
    pub repeats: usize,
    pub step_scale: f64,
    pub acceptance: f64,
    pub evals: u64,
}

/// A point of the `log p` versus `log L` diagnostic curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub log_p: f64,
    pub log_like: f64,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub log_evidence: f64,
    /// Per-level log partial evidences. For nested samplers these combine by
    /// log-sum-exp; for annealing they are log incremental factors and add.
    pub log_partials: Vec<f64>,
    pub evaluations: u64,
    pub archive: WeightedArchive,
    pub schedule: Option<LevelSchedule>,
    pub levels: Vec<LevelRecord>,
    pub curve: Vec<CurvePoint>,
}

impl RunResult {
    /// The `(log p, log L)` diagnostic curve; empty for annealing runs.
    pub fn diagnostic_curve(&self) -> &[CurvePoint] {
        &self.curve
    }

    pub fn evidence(&self) -> f64 {
        self.log_evidence.exp()
    }
}

/// `N` independent prior draws, one random stream per particle.
pub(crate) fn init_particles(model: &TargetModel, n: usize, streams: &Streams) -> Vec<Particle> {
    (0..n)
        .into_par_iter()
        .map(|k| {
            let mut rng = streams.derive(Domain::Init, 0, k as u64);
            model.sample_prior(&mut rng)
        })
        .collect()
}

/// Weighted covariance of `particles` with normalised `weights`.
pub(crate) fn population_covariance(particles: &[Particle], weights: &[f64]) -> Result<Covariance> {
    let points: Vec<&[f64]> = particles.iter().map(|p| p.x.as_slice()).collect();
    Covariance::estimate(&points, weights)
}

pub(crate) fn positions(particles: &[Particle]) -> Vec<&[f64]> {
    particles.iter().map(|p| p.x.as_slice()).collect()
}

pub(crate) fn lse_where<F: Fn(usize) -> bool>(values: &[f64], keep: F) -> f64 {
    let v: Vec<f64> = values
        .iter()
        .enumerate()
        .filter(|(k, _)| keep(*k))
        .map(|(_, v)| *v)
        .collect();
    log_sum_exp(&v)
}

pub(crate) fn check_population(n: usize, min: usize) -> Result<()> {
    if n < min {
        return Err(contract(format!(
            "population size must be at least {min}, got {n}"
        )));
    }
    Ok(())
}
