//! Classic nested sampling and its improved (INS) and random-compression
//! variants. All three estimators are computed from the same run; they
//! differ only in the prior-mass sequence `p_t` assigned to the dead points.

use std::cmp::Ordering;
use std::collections::BTreeSet;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::covariance::Covariance;
use crate::error::{contract, Error, Result};
use crate::kernels::{
    self, check_kernel, Constraint, KernelConfig, KernelFamily, KernelOptions, MutationTarget,
};
use crate::model::TargetModel;
use crate::nssmc::Termination;
use crate::particles::{log_add_exp, log_sum_exp, Particle, WeightedArchive};
use crate::rng::{Domain, SimRng, Streams};
use crate::run::{
    check_population, init_particles, population_covariance, CurvePoint, LevelRecord, RunResult,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CompressionMode {
    /// `p_t = exp(-t / N)`.
    Ns,
    /// `p_t = ((N - 1) / N)^t`.
    Ins,
    /// `p_t = p_{t-1} B_t` with `B_t ~ Beta(N, 1)`.
    Beta,
}

/// Prior-mass sequence `p_0 = 1 > p_1 > ... > p_T` in log space.
#[derive(Debug, Clone, PartialEq)]
pub struct CompressionSchedule {
    mode: CompressionMode,
    n: usize,
    log_p: Vec<f64>,
}

impl CompressionSchedule {
    /// Deterministic schedules (`Ns` or `Ins`) for `t_max` iterations.
    pub fn deterministic(mode: CompressionMode, n: usize, t_max: usize) -> Result<Self> {
        if n == 0 {
            return Err(contract("population size must be positive"));
        }
        let nf = n as f64;
        let step = match mode {
            CompressionMode::Ns => -1.0 / nf,
            CompressionMode::Ins => ((nf - 1.0) / nf).ln(),
            CompressionMode::Beta => {
                return Err(contract("Beta compression needs a random stream"));
            }
        };
        let log_p = (0..=t_max)
            .map(|t| if t == 0 { 0.0 } else { t as f64 * step })
            .collect();
        Ok(Self { mode, n, log_p })
    }

    /// Random compression: `log B_t = log(U_t) / N`.
    pub fn random_beta<R: Rng + ?Sized>(n: usize, t_max: usize, rng: &mut R) -> Self {
        let mut log_p = Vec::with_capacity(t_max + 1);
        let mut acc = 0.0;
        log_p.push(acc);
        for _ in 0..t_max {
            let u: f64 = 1.0 - rng.random::<f64>();
            acc += u.ln() / n as f64;
            log_p.push(acc);
        }
        Self {
            mode: CompressionMode::Beta,
            n,
            log_p,
        }
    }

    pub fn mode(&self) -> CompressionMode {
        self.mode
    }

    pub fn len(&self) -> usize {
        self.log_p.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn log_p(&self, t: usize) -> f64 {
        self.log_p[t]
    }

    /// `log(p_{t-1} - p_t)` for `t >= 1`.
    pub fn log_width(&self, t: usize) -> f64 {
        let nf = self.n as f64;
        match self.mode {
            CompressionMode::Ns => -((t - 1) as f64) / nf + (-(-1.0 / nf).exp_m1()).ln(),
            CompressionMode::Ins => {
                let head = if t == 1 {
                    0.0
                } else {
                    (t - 1) as f64 * ((nf - 1.0) / nf).ln()
                };
                head - nf.ln()
            }
            CompressionMode::Beta => {
                let (a, b) = (self.log_p[t - 1], self.log_p[t]);
                a + (-(b - a).exp_m1()).ln()
            }
        }
    }
}

/// Quadrature widths `p_{t-1} - p_t`, `t = 1..=t_max`, for a deterministic
/// mode.
pub fn ns_quadrature_weights(t_max: usize, n: usize, mode: CompressionMode) -> Result<Vec<f64>> {
    let s = CompressionSchedule::deterministic(mode, n, t_max)?;
    Ok((1..=t_max).map(|t| s.log_width(t).exp()).collect())
}

/// Log filling-in contribution `p_T / N * sum_k L(X_k)` of the live points.
pub fn filling_in(live_log_likes: &[f64], log_p_t: f64) -> f64 {
    log_p_t + log_sum_exp(live_log_likes) - (live_log_likes.len() as f64).ln()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NsConfig {
    pub n: usize,
    pub family: KernelFamily,
    pub step_scale: f64,
    /// Kernel steps applied to each reborn particle.
    pub repeats: usize,
    pub options: KernelOptions,
    pub termination: Termination,
    /// Iteration cap; `None` means `10^5 N`.
    pub max_iter: Option<usize>,
    /// Consecutive iterations without a successful move before giving up.
    pub max_stuck: usize,
    /// Refresh the live-point covariance every this many iterations
    /// (`None` means every `N`).
    pub covariance_every: Option<usize>,
}

impl Default for NsConfig {
    fn default() -> Self {
        Self {
            n: 1000,
            family: KernelFamily::Rw,
            step_scale: 1.0,
            repeats: 10,
            options: KernelOptions::default(),
            termination: Termination::eps(1e-8),
            max_iter: None,
            max_stuck: 1000,
            covariance_every: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeadPoint {
    pub position: Vec<f64>,
    pub log_like: f64,
}

/// The sampling record of one NS run, independent of the compression mode.
#[derive(Debug, Clone)]
pub struct NsRun {
    pub n: usize,
    pub dead: Vec<DeadPoint>,
    pub live: Vec<Particle>,
    pub evaluations: u64,
    pub reached_max_iter: bool,
}

impl NsRun {
    /// Number of completed iterations `T`.
    pub fn iterations(&self) -> usize {
        self.dead.len()
    }

    /// Evidence, archive and level table under a given compression schedule.
    pub fn estimate(&self, schedule: &CompressionSchedule) -> Result<RunResult> {
        let big_t = self.iterations();
        if schedule.len() < big_t {
            return Err(contract("compression schedule shorter than the run"));
        }
        let mut archive = WeightedArchive::new();
        let mut partials = Vec::with_capacity(big_t + 1);
        let mut levels = Vec::with_capacity(big_t + 1);
        let mut curve = Vec::with_capacity(big_t);
        let mut cumulative = f64::NEG_INFINITY;
        for (i, d) in self.dead.iter().enumerate() {
            let t = i + 1;
            let lz = schedule.log_width(t) + d.log_like;
            cumulative = log_add_exp(cumulative, lz);
            partials.push(lz);
            archive.push(d.position.clone(), lz, t);
            curve.push(CurvePoint {
                log_p: schedule.log_p(t),
                log_like: d.log_like,
            });
            levels.push(LevelRecord {
                level: t,
                value: d.log_like,
                log_p: Some(schedule.log_p(t)),
                log_z_level: lz,
                log_z_cumulative: cumulative,
                ess: self.n as f64,
                repeats: 0,
                step_scale: f64::NAN,
                acceptance: f64::NAN,
                evals: 0,
            });
        }
        let log_p_t = schedule.log_p(big_t);
        let lls: Vec<f64> = self.live.iter().map(|p| p.log_like).collect();
        let fill = filling_in(&lls, log_p_t);
        let ln_n = (self.live.len() as f64).ln();
        for p in &self.live {
            archive.push(p.x.clone(), log_p_t + p.log_like - ln_n, big_t + 1);
        }
        partials.push(fill);
        cumulative = log_add_exp(cumulative, fill);
        levels.push(LevelRecord {
            level: big_t + 1,
            value: f64::INFINITY,
            log_p: Some(log_p_t),
            log_z_level: fill,
            log_z_cumulative: cumulative,
            ess: self.n as f64,
            repeats: 0,
            step_scale: f64::NAN,
            acceptance: f64::NAN,
            evals: 0,
        });
        Ok(RunResult {
            log_evidence: log_sum_exp(&partials),
            log_partials: partials,
            evaluations: self.evaluations,
            archive,
            schedule: None,
            levels,
            curve,
        })
    }
}

/// The three estimates from one run.
#[derive(Debug, Clone)]
pub struct NsOutcome {
    pub run: NsRun,
    pub ns: RunResult,
    pub ins: RunResult,
    pub beta: RunResult,
}

/// Live-point ordering key: likelihood, then the auxiliary uniform that
/// breaks ties, then the slot index.
#[derive(Debug, Clone, Copy)]
struct Key {
    log_like: f64,
    u: f64,
    slot: usize,
}

impl Ord for Key {
    fn cmp(&self, other: &Self) -> Ordering {
        self.log_like
            .total_cmp(&other.log_like)
            .then(self.u.total_cmp(&other.u))
            .then(self.slot.cmp(&other.slot))
    }
}

impl PartialOrd for Key {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl PartialEq for Key {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Key {}

fn uniform_covariance(live: &[Particle]) -> Result<Covariance> {
    let w = vec![1.0 / live.len() as f64; live.len()];
    population_covariance(live, &w)
}

/// Nested sampling. Each iteration removes the worst live point, replaces
/// it by a copy of a uniformly chosen survivor moved `repeats` times by a
/// kernel constrained above the removed likelihood, and stops when the
/// largest possible remaining contribution `p_t max L` falls below
/// `eps * Z_t` (or at the configured likelihood level).
pub fn run_ns(model: &TargetModel, config: &NsConfig, streams: &Streams) -> Result<NsOutcome> {
    let n = config.n;
    check_population(n, 2)?;
    let eps = config.termination.eps;
    if !(0.0..1.0).contains(&eps) {
        return Err(contract("eps must lie in [0, 1)"));
    }
    let stop_level = config.termination.stop_level(model)?;
    let max_iter = config.max_iter.unwrap_or(100_000 * n);
    let every = config.covariance_every.unwrap_or(n).max(1);
    let nf = n as f64;
    let log_eps = eps.ln();
    let first_width = (-(-1.0 / nf).exp_m1()).ln();

    let start = model.evaluations();
    let mut live = init_particles(model, n, streams);
    let mut rng: SimRng = streams.derive(Domain::Sequential, 0, 0);
    let mut aux: Vec<f64> = (0..n).map(|_| rng.random()).collect();
    let mut order: BTreeSet<Key> = live
        .iter()
        .enumerate()
        .map(|(k, p)| Key {
            log_like: p.log_like,
            u: aux[k],
            slot: k,
        })
        .collect();
    let mut kernel = KernelConfig {
        family: config.family,
        step_scale: config.step_scale,
        covariance: uniform_covariance(&live)?,
        repeats: config.repeats.max(1),
        options: config.options.clone(),
    };
    check_kernel(
        &MutationTarget::Constrained {
            model,
            constraint: Constraint::AtLeast(f64::NEG_INFINITY),
        },
        &kernel,
    )?;

    let mut dead = Vec::new();
    let mut log_z = f64::NEG_INFINITY;
    let mut stuck = 0usize;
    let mut reached_max_iter = false;
    for t in 1..=max_iter {
        let (lo, hi) = match (order.first(), order.last()) {
            (Some(a), Some(b)) => (*a, *b),
            _ => unreachable!("live set is never empty"),
        };
        if lo.log_like == hi.log_like {
            break;
        }
        order.pop_first();
        let (m, l_t, v_t) = (lo.slot, lo.log_like, lo.u);
        dead.push(DeadPoint {
            position: live[m].x.clone(),
            log_like: l_t,
        });
        log_z = log_add_exp(log_z, -((t - 1) as f64) / nf + first_width + l_t);

        let r = rng.random_range(0..n - 1);
        let j = if r >= m { r + 1 } else { r };
        let seed = live[j].clone();
        let constraint = if aux[j] > v_t {
            Constraint::AtLeast(l_t)
        } else {
            Constraint::Above(l_t)
        };
        let target = MutationTarget::Constrained { model, constraint };
        let mut p = seed.clone();
        for _ in 0..kernel.repeats {
            p = kernels::step(&p, &target, &kernel, &mut rng)?.particle;
        }
        if p.x == seed.x {
            stuck += 1;
            if stuck >= config.max_stuck {
                return Err(Error::StuckRun {
                    iterations: stuck,
                    log_likelihood: l_t,
                });
            }
        } else {
            stuck = 0;
        }
        let u = if p.log_like > l_t {
            rng.random()
        } else {
            v_t + (1.0 - v_t) * rng.random::<f64>()
        };
        order.insert(Key {
            log_like: p.log_like,
            u,
            slot: m,
        });
        live[m] = p;
        aux[m] = u;

        if t % every == 0 {
            kernel.covariance = uniform_covariance(&live)?;
        }
        let max_ll = order
            .last()
            .map(|k| k.log_like)
            .unwrap_or(f64::NEG_INFINITY);
        if -(t as f64) / nf + max_ll < log_eps + log_z {
            break;
        }
        if stop_level.is_some_and(|s| l_t >= s) {
            break;
        }
        if t == max_iter {
            reached_max_iter = true;
        }
    }

    let run = NsRun {
        n,
        dead,
        live,
        evaluations: model.evaluations() - start,
        reached_max_iter,
    };
    let big_t = run.iterations();
    let ns = run.estimate(&CompressionSchedule::deterministic(
        CompressionMode::Ns,
        n,
        big_t,
    )?)?;
    let ins = run.estimate(&CompressionSchedule::deterministic(
        CompressionMode::Ins,
        n,
        big_t,
    )?)?;
    let mut beta_rng = streams.derive(Domain::Sequential, 1, 0);
    let beta = run.estimate(&CompressionSchedule::random_beta(n, big_t, &mut beta_rng))?;
    Ok(NsOutcome { run, ns, ins, beta })
}
