//! Temperature-annealed SMC along the geometric path `eta * L^l`.

use serde::{Deserialize, Serialize};

use crate::error::{contract, Error, Result};
use crate::kernels::{check_kernel, KernelFamily, KernelOptions, MutationTarget};
use crate::model::TargetModel;
use crate::mutation::{apply_kernel, SweepStats};
use crate::particles::{ess_from_log_weights, log_sum_exp, normalize, Particle, WeightedArchive};
use crate::resampling::{resample, ResampleScheme};
use crate::rng::{Domain, Streams};
use crate::run::{
    check_population, init_particles, population_covariance, positions, LevelRecord, LevelSchedule,
    Provenance, RunResult, TemperatureSchedule,
};
use crate::tuning::{j_desired, tune_and_move, KernelPlan, TuningConfig, TuningReport};

/// Bisection tolerance on the temperature.
pub const TEMPERATURE_TOL: f64 = 1e-10;

/// `log W + delta * log L`, with `delta = 0` leaving the weight untouched
/// (so `-inf` likelihoods do not produce NaN).
fn incremental(log_w: &[f64], log_like: &[f64], delta: f64) -> Vec<f64> {
    log_w
        .iter()
        .zip(log_like)
        .map(|(w, l)| if delta == 0.0 { *w } else { w + delta * l })
        .collect()
}

/// Outcome of the temperature search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TemperatureStep {
    pub temperature: f64,
    /// Estimated ESS of the incremental weights at `temperature`.
    pub ess: f64,
    /// Fewer than two particles had a finite likelihood.
    pub degenerate: bool,
}

/// Next temperature: 1 if the incremental weights at 1 keep an ESS of at
/// least `alpha N`, otherwise the bisection root of `ESS(l) = alpha N` on
/// `(current, 1]`.
pub fn next_temperature(
    log_w: &[f64],
    log_like: &[f64],
    current: f64,
    alpha: f64,
) -> Result<TemperatureStep> {
    if !(0.0..1.0).contains(&current) {
        return Err(contract(format!(
            "current temperature {current} must lie in [0, 1)"
        )));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(contract(format!("alpha = {alpha} must lie in (0, 1)")));
    }
    if log_w.len() != log_like.len() || log_w.is_empty() {
        return Err(contract(
            "weights and likelihoods must have equal, non-zero length",
        ));
    }
    let n = log_w.len() as f64;
    let target = alpha * n;
    let ess_at = |l: f64| ess_from_log_weights(&incremental(log_w, log_like, l - current));
    let finite = log_w
        .iter()
        .zip(log_like)
        .filter(|(w, l)| **w > f64::NEG_INFINITY && l.is_finite())
        .count();
    if finite <= 1 {
        return Ok(TemperatureStep {
            temperature: 1.0,
            ess: ess_at(1.0),
            degenerate: true,
        });
    }
    let at_one = ess_at(1.0);
    if at_one >= target {
        return Ok(TemperatureStep {
            temperature: 1.0,
            ess: at_one,
            degenerate: false,
        });
    }
    let (mut lo, mut hi) = (current, 1.0);
    while hi - lo > TEMPERATURE_TOL {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if ess_at(mid) >= target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let (e_lo, e_hi) = (ess_at(lo), ess_at(hi));
    let (temperature, ess) = if lo > current && (e_lo - target).abs() <= (e_hi - target).abs() {
        (lo, e_lo)
    } else {
        (hi, e_hi)
    };
    Ok(TemperatureStep {
        temperature,
        ess,
        degenerate: false,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdaptiveTasmcConfig {
    pub n: usize,
    /// Target ESS fraction for each temperature step.
    pub alpha: f64,
    pub family: KernelFamily,
    pub options: KernelOptions,
    pub tuning: TuningConfig,
    pub scheme: ResampleScheme,
    pub max_levels: usize,
}

impl Default for AdaptiveTasmcConfig {
    fn default() -> Self {
        Self {
            n: 1000,
            alpha: 0.5,
            family: KernelFamily::Rw,
            options: KernelOptions::default(),
            tuning: TuningConfig::default(),
            scheme: ResampleScheme::Stratified,
            max_levels: 100_000,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AdaptiveTasmcOutcome {
    pub result: RunResult,
    pub schedule: TemperatureSchedule,
    pub tuning: TuningReport,
}

/// State shared by the fixed and adaptive annealers.
struct Annealer<'a> {
    model: &'a TargetModel,
    streams: &'a Streams,
    scheme: ResampleScheme,
    particles: Vec<Particle>,
    log_w: Vec<f64>,
    log_z: f64,
    partials: Vec<f64>,
    levels: Vec<LevelRecord>,
    temperature: f64,
    level_start: u64,
}

impl<'a> Annealer<'a> {
    fn new(model: &'a TargetModel, n: usize, scheme: ResampleScheme, streams: &'a Streams) -> Self {
        let particles = init_particles(model, n, streams);
        Self {
            model,
            streams,
            scheme,
            particles,
            log_w: vec![-(n as f64).ln(); n],
            log_z: 0.0,
            partials: Vec::new(),
            levels: Vec::new(),
            temperature: 0.0,
            level_start: model.evaluations(),
        }
    }

    fn log_likes(&self) -> Vec<f64> {
        self.particles.iter().map(|p| p.log_like).collect()
    }

    /// Reweights to `next`; returns normalised weights and their ESS.
    fn reweight(&mut self, t: usize, next: f64) -> Result<(Vec<f64>, f64)> {
        let inc = incremental(&self.log_w, &self.log_likes(), next - self.temperature);
        let lz = log_sum_exp(&inc);
        if lz == f64::NEG_INFINITY {
            return Err(Error::ZeroSurvivors {
                level: t,
                detail: format!("every incremental weight vanished at temperature {next}"),
            });
        }
        self.log_z += lz;
        self.partials.push(lz);
        self.temperature = next;
        let ess = ess_from_log_weights(&inc);
        let (w, _) = normalize(&inc)?;
        self.log_w = w.iter().map(|v| v.ln()).collect();
        Ok((w, ess))
    }

    fn resample(&mut self, t: usize, weights: &[f64]) -> Result<()> {
        let mut rng = self.streams.derive(Domain::Resample, t as u64, 0);
        let idx = resample(weights, self.scheme, &mut rng)?;
        self.particles = idx.into_iter().map(|i| self.particles[i].clone()).collect();
        let n = self.particles.len();
        self.log_w = vec![-(n as f64).ln(); n];
        Ok(())
    }

    fn record(&mut self, t: usize, ess: f64, mutation: Option<(f64, usize, SweepStats)>) {
        let now = self.model.evaluations();
        self.levels.push(LevelRecord {
            level: t,
            value: self.temperature,
            log_p: None,
            log_z_level: *self.partials.last().unwrap_or(&0.0),
            log_z_cumulative: self.log_z,
            ess,
            repeats: mutation.map_or(0, |m| m.1),
            step_scale: mutation.map_or(f64::NAN, |m| m.0),
            acceptance: mutation.map_or(f64::NAN, |m| m.2.acceptance_rate()),
            evals: now - self.level_start,
        });
        self.level_start = now;
    }

    fn finish(
        self,
        start: u64,
        temperatures: Vec<f64>,
        provenance: Provenance,
    ) -> Result<RunResult> {
        let mut archive = WeightedArchive::new();
        for (p, w) in self.particles.iter().zip(&self.log_w) {
            archive.push(p.x.clone(), self.log_z + w, self.levels.len());
        }
        let schedule = TemperatureSchedule::new(temperatures, provenance)?;
        Ok(RunResult {
            log_evidence: self.log_z,
            log_partials: self.partials,
            evaluations: self.model.evaluations() - start,
            archive,
            schedule: Some(LevelSchedule::Temperatures(schedule)),
            levels: self.levels,
            curve: Vec::new(),
        })
    }
}

/// Adaptive TA-SMC: reweight by `L^(l_t - l_{t-1})` with `l_t` from
/// [`next_temperature`], accumulate the log mean incremental weight,
/// resample, and move with a kernel invariant for `eta * L^(l_t)`. The final
/// weighted cloud at `l = 1` forms the posterior archive.
pub fn run_adaptive_tasmc(
    model: &TargetModel,
    config: &AdaptiveTasmcConfig,
    streams: &Streams,
) -> Result<AdaptiveTasmcOutcome> {
    check_population(config.n, 2)?;
    let start = model.evaluations();
    let mut a = Annealer::new(model, config.n, config.scheme, streams);
    let mut temperatures = vec![0.0];
    let mut report = TuningReport::new(config.family, config.options.clone());
    for t in 1..=config.max_levels {
        let step = next_temperature(&a.log_w, &a.log_likes(), a.temperature, config.alpha)?;
        let (weights, ess) = a.reweight(t, step.temperature)?;
        temperatures.push(step.temperature);
        if step.temperature >= 1.0 {
            a.record(t, ess, None);
            let result = a.finish(start, temperatures.clone(), Provenance::Pilot)?;
            let schedule = TemperatureSchedule::new(temperatures, Provenance::Pilot)?;
            return Ok(AdaptiveTasmcOutcome {
                result,
                schedule,
                tuning: report,
            });
        }
        let cov = population_covariance(&a.particles, &weights)?;
        let (jd, _) = j_desired(&positions(&a.particles), &weights, &cov);
        a.resample(t, &weights)?;
        let target = MutationTarget::Tempered {
            model,
            temperature: step.temperature,
        };
        let mut rngs = streams.particles(Domain::Move, t as u64, config.n);
        let (tuned, stats) = tune_and_move(
            &mut a.particles,
            &mut rngs,
            &target,
            config.family,
            &config.options,
            cov,
            &config.tuning,
            jd,
        )?;
        a.record(t, ess, Some((tuned.step_scale, tuned.repeats, stats)));
        report.levels.push(tuned);
    }
    Err(contract(format!(
        "adaptive TA-SMC did not reach temperature 1 within {} levels",
        config.max_levels
    )))
}

/// TA-SMC along a frozen temperature schedule with kernels from `plan`
/// (level `t` uses `plan.config(t - 1)`).
pub fn run_fixed_tasmc(
    model: &TargetModel,
    n: usize,
    schedule: &TemperatureSchedule,
    plan: &KernelPlan,
    scheme: ResampleScheme,
    streams: &Streams,
) -> Result<RunResult> {
    check_population(n, 1)?;
    let start = model.evaluations();
    let mut a = Annealer::new(model, n, scheme, streams);
    let temps = schedule.temperatures();
    for (t, &next) in temps.iter().enumerate().skip(1) {
        let (weights, ess) = a.reweight(t, next)?;
        if t + 1 == temps.len() {
            a.record(t, ess, None);
            break;
        }
        a.resample(t, &weights)?;
        let config = plan.config(t - 1)?;
        let target = MutationTarget::Tempered {
            model,
            temperature: next,
        };
        check_kernel(&target, &config)?;
        let mut rngs = streams.particles(Domain::Move, t as u64, n);
        let stats = apply_kernel(&mut a.particles, &mut rngs, &target, &config)?;
        a.record(t, ess, Some((config.step_scale, config.repeats, stats)));
    }
    a.finish(start, temps.to_vec(), schedule.provenance())
}
