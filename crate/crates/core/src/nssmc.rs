//! Nested sampling via SMC: fixed threshold schedules and adaptive
//! quantile thresholds.

use serde::{Deserialize, Serialize};

use crate::error::{contract, Error, Result};
use crate::kernels::{check_kernel, Constraint, KernelFamily, KernelOptions, MutationTarget};
use crate::model::TargetModel;
use crate::mutation::{apply_kernel, SweepStats};
use crate::particles::{ess, log_add_exp, log_sum_exp, normalize, Particle, WeightedArchive};
use crate::resampling::{resample, ResampleScheme};
use crate::rng::{Domain, Streams};
use crate::run::{
    check_population, init_particles, lse_where, population_covariance, positions, CurvePoint,
    LevelRecord, LevelSchedule, Provenance, RunResult, ThresholdSchedule,
};
use crate::tuning::{j_desired, tune_and_move, KernelPlan, TuningConfig, TuningReport};

/// Stopping rules shared by the nested samplers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Termination {
    /// Relative evidence tolerance; 0 disables the evidence-ratio rule.
    pub eps: f64,
    /// Stop once a threshold reaches this fraction of the maximum
    /// likelihood (requires a model that knows its maximum).
    #[serde(default)]
    pub max_fraction: Option<f64>,
}

impl Termination {
    pub fn eps(eps: f64) -> Self {
        Self {
            eps,
            max_fraction: None,
        }
    }

    /// Absolute log-likelihood stop level, if configured.
    pub fn stop_level(&self, model: &TargetModel) -> Result<Option<f64>> {
        let Some(f) = self.max_fraction else {
            return Ok(None);
        };
        if !(f > 0.0 && f <= 1.0) {
            return Err(contract("max_fraction must lie in (0, 1]"));
        }
        let max = model.problem().max_log_likelihood().ok_or_else(|| {
            Error::Capability(format!(
                "{} does not know its maximum likelihood",
                model.problem().name()
            ))
        })?;
        Ok(Some(max + f.ln()))
    }
}

/// The `ceil((1 - rho) N)`-th order statistic of `values`.
pub fn threshold_quantile(values: &[f64], rho: f64) -> Result<f64> {
    if !(rho > 0.0 && rho < 1.0) {
        return Err(contract(format!("rho = {rho} must lie in (0, 1)")));
    }
    if values.is_empty() {
        return Err(contract("no values"));
    }
    let n = values.len();
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    // Guard against (1 - rho) N landing a rounding error above an integer.
    let k = (((1.0 - rho) * n as f64) - 1e-9)
        .ceil()
        .clamp(1.0, n as f64) as usize;
    Ok(sorted[k - 1])
}

struct Mutation {
    step_scale: f64,
    repeats: usize,
    stats: SweepStats,
}

fn resample_survivors(
    particles: &[Particle],
    weights: &[f64],
    scheme: ResampleScheme,
    streams: &Streams,
    level: usize,
) -> Result<Vec<Particle>> {
    let mut rng = streams.derive(Domain::Resample, level as u64, 0);
    let idx = resample(weights, scheme, &mut rng)?;
    Ok(idx.into_iter().map(|i| particles[i].clone()).collect())
}

#[allow(clippy::too_many_arguments)]
fn level_record(
    level: usize,
    value: f64,
    log_p: f64,
    log_z_level: f64,
    log_z_cumulative: f64,
    ess: f64,
    mutation: Option<&Mutation>,
    evals: u64,
) -> LevelRecord {
    LevelRecord {
        level,
        value,
        log_p: Some(log_p),
        log_z_level,
        log_z_cumulative,
        ess,
        repeats: mutation.map_or(0, |m| m.repeats),
        step_scale: mutation.map_or(f64::NAN, |m| m.step_scale),
        acceptance: mutation.map_or(f64::NAN, |m| m.stats.acceptance_rate()),
        evals,
    }
}

/// Fixed NS-SMC. At level `t` the cloud targets the prior constrained to
/// `L >= l_t` (or `>` for strict schedules). Particles below `l_{t+1}` form
/// the shell estimate `Z_t`; survivors are resampled and moved with the
/// kernel for level `t` from `plan`.
pub fn run_fixed_nssmc(
    model: &TargetModel,
    n: usize,
    schedule: &ThresholdSchedule,
    plan: &KernelPlan,
    scheme: ResampleScheme,
    streams: &Streams,
) -> Result<RunResult> {
    check_population(n, 1)?;
    let start = model.evaluations();
    let mut particles = init_particles(model, n, streams);
    let mut log_w = vec![-(n as f64).ln(); n];
    let mut log_p = 0.0;
    let mut partials = Vec::new();
    let mut archive = WeightedArchive::new();
    let mut levels = Vec::new();
    let mut curve = Vec::new();
    let mut cumulative = f64::NEG_INFINITY;
    let strict = schedule.strict();
    let big_t = schedule.levels();

    for t in 1..=big_t {
        let level_start = model.evaluations();
        let next = schedule.level(t + 1);
        let survives = |ll: f64| next.is_finite() && Constraint::new(next, strict).admits(ll);
        let shell: Vec<f64> = particles
            .iter()
            .zip(&log_w)
            .map(|(p, w)| log_p + w + p.log_like)
            .collect();
        let alive: Vec<bool> = particles.iter().map(|p| survives(p.log_like)).collect();
        for (k, p) in particles.iter().enumerate() {
            if !alive[k] {
                archive.push(p.x.clone(), shell[k], t);
            }
        }
        let z_t = lse_where(&shell, |k| !alive[k]);
        partials.push(z_t);
        cumulative = log_add_exp(cumulative, z_t);
        let surv: Vec<f64> = (0..n)
            .map(|k| {
                if alive[k] {
                    log_w[k]
                } else {
                    f64::NEG_INFINITY
                }
            })
            .collect();
        let log_s = log_sum_exp(&surv);
        if log_s == f64::NEG_INFINITY {
            if t == 1 && next.is_finite() {
                return Err(Error::ZeroSurvivors {
                    level: 1,
                    detail: format!("no prior draw reached log-likelihood {next}"),
                });
            }
            levels.push(level_record(
                t,
                schedule.level(t),
                log_p,
                z_t,
                cumulative,
                0.0,
                None,
                0,
            ));
            break;
        }
        let level_p = log_p;
        log_p += log_s;
        curve.push(CurvePoint {
            log_p,
            log_like: next,
        });
        let (weights, _) = normalize(&surv)?;
        let ess_t = ess(&weights)?;
        particles = resample_survivors(&particles, &weights, scheme, streams, t)?;
        log_w = vec![-(n as f64).ln(); n];

        let config = plan.config(t - 1)?;
        let target = MutationTarget::Constrained {
            model,
            constraint: Constraint::new(next, strict),
        };
        check_kernel(&target, &config)?;
        let mut rngs = streams.particles(Domain::Move, t as u64, n);
        let stats = apply_kernel(&mut particles, &mut rngs, &target, &config)?;
        let m = Mutation {
            step_scale: config.step_scale,
            repeats: config.repeats,
            stats,
        };
        levels.push(level_record(
            t,
            schedule.level(t),
            level_p,
            z_t,
            cumulative,
            ess_t,
            Some(&m),
            model.evaluations() - level_start,
        ));
    }

    Ok(RunResult {
        log_evidence: log_sum_exp(&partials),
        log_partials: partials,
        evaluations: model.evaluations() - start,
        archive,
        schedule: Some(LevelSchedule::Thresholds(schedule.clone())),
        levels,
        curve,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdaptiveNssmcConfig {
    pub n: usize,
    /// Fraction of particles kept above each new threshold.
    pub rho: f64,
    pub termination: Termination,
    pub family: KernelFamily,
    pub options: KernelOptions,
    pub tuning: TuningConfig,
    pub scheme: ResampleScheme,
    pub max_levels: usize,
}

impl Default for AdaptiveNssmcConfig {
    fn default() -> Self {
        Self {
            n: 1000,
            rho: 0.5,
            termination: Termination::eps(1e-2),
            family: KernelFamily::Rw,
            options: KernelOptions::default(),
            tuning: TuningConfig::default(),
            scheme: ResampleScheme::Stratified,
            max_levels: 10_000,
        }
    }
}

/// Consecutive non-increasing thresholds tolerated before giving up.
pub const MAX_NON_PROGRESS: usize = 3;

/// Output of an adaptive run: the estimate plus everything needed to replay
/// it as a fixed run.
#[derive(Debug, Clone)]
pub struct AdaptiveNssmcOutcome {
    pub result: RunResult,
    pub schedule: ThresholdSchedule,
    pub tuning: TuningReport,
}

/// Adaptive NS-SMC. Each new threshold is the `(1 - rho)` quantile of the
/// current log-likelihoods; constrained priors use `L > l_t` and shells
/// `l_{t-1} < L <= l_t`. The run finishes (with `l_t = +inf`) once the shell
/// below the proposed threshold brings the committed evidence within a
/// factor `1 - eps` of the estimate obtained by closing out all particles.
pub fn run_adaptive_nssmc(
    model: &TargetModel,
    config: &AdaptiveNssmcConfig,
    streams: &Streams,
) -> Result<AdaptiveNssmcOutcome> {
    let n = config.n;
    check_population(n, 2)?;
    if !(config.rho > 0.0 && config.rho < 1.0) {
        return Err(contract(format!("rho = {} must lie in (0, 1)", config.rho)));
    }
    let eps = config.termination.eps;
    if !(0.0..1.0).contains(&eps) {
        return Err(contract("eps must lie in [0, 1)"));
    }
    let stop_level = config.termination.stop_level(model)?;
    let log_ratio_stop = (1.0 - eps).ln();

    let start = model.evaluations();
    let mut particles = init_particles(model, n, streams);
    let mut log_w = vec![-(n as f64).ln(); n];
    let mut log_p = 0.0;
    let mut partials = Vec::new();
    let mut archive = WeightedArchive::new();
    let mut levels = Vec::new();
    let mut curve = Vec::new();
    let mut committed = f64::NEG_INFINITY;
    let mut thresholds: Vec<f64> = Vec::new();
    let mut report = TuningReport::new(config.family, config.options.clone());
    let mut stalls = 0;
    let mut level_start = model.evaluations();

    for t in 1..=config.max_levels {
        let lls: Vec<f64> = particles.iter().map(|p| p.log_like).collect();
        let shell: Vec<f64> = lls.iter().zip(&log_w).map(|(l, w)| log_p + w + l).collect();
        let candidate = threshold_quantile(&lls, config.rho)?;
        let log_a = log_add_exp(committed, lse_where(&shell, |k| lls[k] <= candidate));
        let log_b = log_add_exp(committed, log_sum_exp(&shell));
        let survivors = lls.iter().filter(|l| **l > candidate).count();
        let level_value = if t == 1 {
            f64::NEG_INFINITY
        } else {
            thresholds[t - 2]
        };

        let ratio_met = log_b == f64::NEG_INFINITY || log_a - log_b > log_ratio_stop;
        let stop_met = stop_level.is_some_and(|s| candidate >= s);
        if ratio_met || stop_met || survivors == 0 {
            for (k, p) in particles.iter().enumerate() {
                archive.push(p.x.clone(), shell[k], t);
            }
            let z_t = log_sum_exp(&shell);
            partials.push(z_t);
            committed = log_add_exp(committed, z_t);
            let ess_t = ess(&normalize(&log_w)?.0)?;
            levels.push(level_record(
                t,
                level_value,
                log_p,
                z_t,
                committed,
                ess_t,
                None,
                model.evaluations() - level_start,
            ));
            let schedule = ThresholdSchedule::new(thresholds, true, Provenance::Pilot)?;
            return Ok(AdaptiveNssmcOutcome {
                result: RunResult {
                    log_evidence: log_sum_exp(&partials),
                    log_partials: partials,
                    evaluations: model.evaluations() - start,
                    archive,
                    schedule: Some(LevelSchedule::Thresholds(schedule.clone())),
                    levels,
                    curve,
                },
                schedule,
                tuning: report,
            });
        }

        if thresholds.last().is_some_and(|prev| candidate <= *prev) {
            stalls += 1;
            if stalls >= MAX_NON_PROGRESS {
                return Err(Error::NonProgress(stalls));
            }
            // Keep the schedule strictly increasing; the cloud already lives
            // above the previous threshold.
            continue;
        }
        stalls = 0;

        let alive: Vec<bool> = lls.iter().map(|l| *l > candidate).collect();
        for (k, p) in particles.iter().enumerate() {
            if !alive[k] {
                archive.push(p.x.clone(), shell[k], t);
            }
        }
        let z_t = lse_where(&shell, |k| !alive[k]);
        partials.push(z_t);
        committed = log_add_exp(committed, z_t);
        let surv: Vec<f64> = (0..n)
            .map(|k| {
                if alive[k] {
                    log_w[k]
                } else {
                    f64::NEG_INFINITY
                }
            })
            .collect();
        let level_p = log_p;
        log_p += log_sum_exp(&surv);
        thresholds.push(candidate);
        curve.push(CurvePoint {
            log_p,
            log_like: candidate,
        });

        let (weights, _) = normalize(&surv)?;
        let ess_t = ess(&weights)?;
        let cov = population_covariance(&particles, &weights)?;
        let (jd, _) = j_desired(&positions(&particles), &weights, &cov);
        particles = resample_survivors(&particles, &weights, config.scheme, streams, t)?;
        log_w = vec![-(n as f64).ln(); n];

        let target = MutationTarget::Constrained {
            model,
            constraint: Constraint::Above(candidate),
        };
        let mut rngs = streams.particles(Domain::Move, t as u64, n);
        let (tuned, stats) = tune_and_move(
            &mut particles,
            &mut rngs,
            &target,
            config.family,
            &config.options,
            cov,
            &config.tuning,
            jd,
        )?;
        let m = Mutation {
            step_scale: tuned.step_scale,
            repeats: tuned.repeats,
            stats,
        };
        report.levels.push(tuned);
        levels.push(level_record(
            t,
            level_value,
            level_p,
            z_t,
            committed,
            ess_t,
            Some(&m),
            model.evaluations() - level_start,
        ));
        level_start = model.evaluations();
    }
    Err(contract(format!(
        "adaptive NS-SMC did not terminate within {} levels",
        config.max_levels
    )))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::covariance::Covariance;
    use crate::kernels::KernelConfig;
    use crate::model::{ConjugateGaussian, Problem, SphereMixture};
    use crate::tuning::Repeats;
    use std::sync::Arc;

    #[test]
    fn quantile_examples() {
        let v: Vec<f64> = (1..=10).map(|i| i as f64).collect();
        assert_eq!(threshold_quantile(&v, 0.5).unwrap(), 5.0);
        assert_eq!(threshold_quantile(&v, 0.999).unwrap(), 1.0);
        assert_eq!(threshold_quantile(&[2.0; 7], 0.3).unwrap(), 2.0);
        assert!(threshold_quantile(&v, 1.0).is_err());
        let big: Vec<f64> = (1..=1000).map(|i| i as f64).collect();
        assert_eq!(threshold_quantile(&big, 0.37).unwrap(), 630.0);
    }

    #[test]
    fn quantile_survivor_fraction() {
        let v: Vec<f64> = (0..97).map(|i| ((i * 37) % 97) as f64).collect();
        for rho in [0.1, 0.37, 0.5, 0.9] {
            let t = threshold_quantile(&v, rho).unwrap();
            let above = v.iter().filter(|x| **x > t).count() as f64 / v.len() as f64;
            assert!(above <= rho + 1e-12);
            assert!(above >= rho - 1.0 / v.len() as f64);
        }
    }

    fn conj_model() -> TargetModel {
        TargetModel::new(Arc::new(
            ConjugateGaussian::new(vec![0.3, -0.4], 0.5).unwrap(),
        ))
    }

    #[test]
    fn single_shell_is_prior_monte_carlo() {
        let m = conj_model();
        let s = ThresholdSchedule::new(vec![], false, Provenance::User).unwrap();
        let plan = KernelPlan::Static(KernelConfig::new(
            KernelFamily::Rw,
            1.0,
            Covariance::identity(2),
            1,
        ));
        let streams = Streams::new(7);
        let r = run_fixed_nssmc(&m, 50, &s, &plan, ResampleScheme::Stratified, &streams).unwrap();
        let prior = init_particles(&conj_model(), 50, &streams);
        let lls: Vec<f64> = prior.iter().map(|p| p.log_like).collect();
        let mc = log_sum_exp(&lls) - 50f64.ln();
        assert!((r.log_evidence - mc).abs() < 1e-12);
        assert_eq!(r.evaluations, 50);
        assert!((r.archive.log_total() - r.log_evidence).abs() < 1e-12);
    }

    #[test]
    fn first_level_extinction_is_reported() {
        let m = conj_model();
        let s = ThresholdSchedule::new(vec![1e6], false, Provenance::User).unwrap();
        let plan = KernelPlan::Static(KernelConfig::new(
            KernelFamily::Rw,
            1.0,
            Covariance::identity(2),
            1,
        ));
        let err = run_fixed_nssmc(
            &m,
            20,
            &s,
            &plan,
            ResampleScheme::Stratified,
            &Streams::new(1),
        )
        .unwrap_err();
        assert!(matches!(err, Error::ZeroSurvivors { level: 1, .. }));
    }

    #[derive(Debug)]
    struct Flat;
    impl Problem for Flat {
        fn name(&self) -> &str {
            "flat"
        }
        fn dimension(&self) -> usize {
            1
        }
        fn log_prior(&self, x: &[f64]) -> f64 {
            if (0.0..1.0).contains(&x[0]) {
                0.0
            } else {
                f64::NEG_INFINITY
            }
        }
        fn sample_prior(&self, rng: &mut dyn rand::RngCore) -> Vec<f64> {
            use rand::Rng;
            vec![rng.random::<f64>()]
        }
        fn log_likelihood(&self, _x: &[f64]) -> f64 {
            2.5
        }
    }

    #[test]
    fn constant_likelihood_terminates_immediately() {
        let m = TargetModel::new(Arc::new(Flat));
        let cfg = AdaptiveNssmcConfig {
            n: 30,
            ..Default::default()
        };
        let out = run_adaptive_nssmc(&m, &cfg, &Streams::new(3)).unwrap();
        assert!((out.result.log_evidence - 2.5).abs() < 1e-12);
        assert!(out.schedule.thresholds().is_empty());
        assert_eq!(out.result.evaluations, 30);
    }

    fn adaptive_cfg(n: usize) -> AdaptiveNssmcConfig {
        AdaptiveNssmcConfig {
            n,
            rho: 0.5,
            tuning: TuningConfig {
                candidates: Some(vec![0.8]),
                repeats: Repeats::Fixed(3),
            },
            ..Default::default()
        }
    }

    #[test]
    fn adaptive_invariants() {
        let m = conj_model();
        let out = run_adaptive_nssmc(&m, &adaptive_cfg(200), &Streams::new(11)).unwrap();
        let r = &out.result;
        assert!((log_sum_exp(&r.log_partials) - r.log_evidence).abs() < 1e-12);
        assert!((r.archive.log_total() - r.log_evidence).abs() < 1e-12);
        assert!((r.archive.estimate(|_| 1.0).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(out.tuning.levels.len(), out.schedule.thresholds().len());
        for w in r.curve.windows(2) {
            assert!(w[1].log_p < w[0].log_p && w[1].log_like > w[0].log_like);
        }
        assert_eq!(r.evaluations, m.evaluations());
        let z = m.problem().log_evidence().unwrap();
        assert!(
            (r.log_evidence - z).abs() < 0.5,
            "{} vs {z}",
            r.log_evidence
        );
    }

    #[test]
    fn replay_reproduces_adaptive_run() {
        let m = conj_model();
        let streams = Streams::new(21);
        let out = run_adaptive_nssmc(&m, &adaptive_cfg(100), &streams).unwrap();
        let json = serde_json::to_string(&out.tuning).unwrap();
        let plan = KernelPlan::Tuned(serde_json::from_str(&json).unwrap());
        let sched: ThresholdSchedule =
            serde_json::from_str(&serde_json::to_string(&out.schedule).unwrap()).unwrap();
        let fixed = run_fixed_nssmc(
            &conj_model(),
            100,
            &sched,
            &plan,
            ResampleScheme::Stratified,
            &streams,
        )
        .unwrap();
        assert_eq!(fixed.log_partials, out.result.log_partials);
        assert_eq!(fixed.log_evidence, out.result.log_evidence);
    }

    #[test]
    fn sphere_exact_small_run() {
        let m = TargetModel::new(Arc::new(SphereMixture::phase_transition()));
        let cfg = AdaptiveNssmcConfig {
            n: 200,
            rho: 0.37,
            family: KernelFamily::Exact,
            termination: Termination {
                eps: 0.0,
                max_fraction: Some(0.75),
            },
            ..Default::default()
        };
        let out = run_adaptive_nssmc(&m, &cfg, &Streams::new(5)).unwrap();
        let ratio = (out.result.log_evidence - m.problem().log_evidence().unwrap()).exp();
        assert!(ratio > 0.5 && ratio < 2.0, "ratio {ratio}");
        // About 50 levels of N evaluations each.
        let levels = out.schedule.thresholds().len();
        assert!((40..=60).contains(&levels), "{levels} levels");
    }
}
