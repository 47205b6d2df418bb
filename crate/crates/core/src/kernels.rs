//! MCMC mutation kernels.
//!
//! Every kernel leaves its [`MutationTarget`] invariant. Targets are either a
//! prior restricted to a likelihood level set (nested samplers) or a tempered
//! posterior `eta * L^l` (annealed samplers).
//!
//! Each step also reports the quantities the tuning module needs: an ESJD
//! sample `||Y - x||^2 * alpha` and a jump sample `||Y - x|| * alpha`, both in
//! the Mahalanobis norm of the population covariance.

use rand::Rng;
use rand_distr::{Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::covariance::Covariance;
use crate::error::{contract, Error, Result};
use crate::model::TargetModel;
use crate::particles::Particle;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelFamily {
    /// Gaussian random walk with covariance `h^2 Sigma`.
    Rw,
    /// Random walk along one uniformly chosen coordinate axis.
    CoordRw,
    /// Metropolis-adjusted Langevin.
    Mala,
    /// Coordinate-wise slice sampling with stepping out and shrinkage.
    Slice,
    /// Independent exact draws from a constrained prior (only for models
    /// that provide an exact sampler).
    Exact,
}

impl KernelFamily {
    pub fn is_mcmc(self) -> bool {
        self != KernelFamily::Exact
    }
}

/// How the MALA drift is formed from the gradient `g` of the log target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MalaDrift {
    /// `x + g`.
    #[default]
    Unscaled,
    /// Textbook preconditioned Langevin drift `x + (h^2 / 2) Sigma g`.
    Langevin,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KernelOptions {
    /// Evaluate the likelihood constraint only after the prior ratio has
    /// conditionally accepted.
    pub two_stage: bool,
    /// Axis step sizes for `coord_rw`, chosen with equal probability.
    pub coord_scales: Vec<f64>,
    /// Slice step-out width in units of the marginal standard deviation.
    pub slice_width: f64,
    /// Cap on stepping-out steps per coordinate.
    pub slice_max_steps: usize,
    pub mala_drift: MalaDrift,
}

impl Default for KernelOptions {
    fn default() -> Self {
        Self {
            two_stage: true,
            coord_scales: vec![0.1, 0.025],
            slice_width: 2.0,
            slice_max_steps: 50,
            mala_drift: MalaDrift::Unscaled,
        }
    }
}

/// A fully specified kernel for one level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelConfig {
    pub family: KernelFamily,
    pub step_scale: f64,
    pub covariance: Covariance,
    pub repeats: usize,
    #[serde(default)]
    pub options: KernelOptions,
}

impl KernelConfig {
    pub fn new(
        family: KernelFamily,
        step_scale: f64,
        covariance: Covariance,
        repeats: usize,
    ) -> Self {
        Self {
            family,
            step_scale,
            covariance,
            repeats,
            options: KernelOptions::default(),
        }
    }

    pub fn validate(&self, dimension: usize) -> Result<()> {
        if !(self.step_scale > 0.0 && self.step_scale.is_finite()) {
            return Err(contract(format!(
                "step scale {} must be positive",
                self.step_scale
            )));
        }
        if self.covariance.dim() != dimension {
            return Err(contract(format!(
                "covariance has dimension {}, model has {dimension}",
                self.covariance.dim()
            )));
        }
        if self.family == KernelFamily::CoordRw && self.options.coord_scales.is_empty() {
            return Err(contract("coord_rw needs at least one axis scale"));
        }
        Ok(())
    }
}

/// Likelihood constraint on a log-likelihood value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Constraint {
    /// `log L >= t`.
    AtLeast(f64),
    /// `log L > t`.
    Above(f64),
}

impl Constraint {
    pub fn new(threshold: f64, strict: bool) -> Self {
        if strict {
            Constraint::Above(threshold)
        } else {
            Constraint::AtLeast(threshold)
        }
    }

    pub fn admits(&self, log_like: f64) -> bool {
        match *self {
            Constraint::AtLeast(t) => log_like >= t,
            Constraint::Above(t) => log_like > t,
        }
    }

    pub fn threshold(&self) -> f64 {
        match *self {
            Constraint::AtLeast(t) | Constraint::Above(t) => t,
        }
    }

    pub fn is_strict(&self) -> bool {
        matches!(self, Constraint::Above(_))
    }
}

/// The density a kernel must leave invariant.
#[derive(Debug, Clone, Copy)]
pub enum MutationTarget<'a> {
    /// `eta(x) I{x in E_t}`.
    Constrained {
        model: &'a TargetModel,
        constraint: Constraint,
    },
    /// `eta(x) L(x)^temperature`.
    Tempered {
        model: &'a TargetModel,
        temperature: f64,
    },
}

fn tempered(log_prior: f64, log_like: f64, temperature: f64) -> f64 {
    if temperature == 0.0 || log_prior == f64::NEG_INFINITY {
        log_prior
    } else {
        log_prior + temperature * log_like
    }
}

impl<'a> MutationTarget<'a> {
    pub fn model(&self) -> &'a TargetModel {
        match *self {
            MutationTarget::Constrained { model, .. } | MutationTarget::Tempered { model, .. } => {
                model
            }
        }
    }

    /// Log target density of an already evaluated particle.
    pub fn log_density(&self, p: &Particle) -> f64 {
        match *self {
            MutationTarget::Constrained { constraint, .. } => {
                if constraint.admits(p.log_like) {
                    p.log_prior
                } else {
                    f64::NEG_INFINITY
                }
            }
            MutationTarget::Tempered { temperature, .. } => {
                tempered(p.log_prior, p.log_like, temperature)
            }
        }
    }

    /// Gradient of the log target. For constrained targets only the prior
    /// gradient enters: the likelihood only defines the constraint.
    pub fn gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        let model = self.model();
        let prior = model.problem().grad_log_prior(x).ok_or_else(|| {
            Error::Capability(format!("{} has no prior gradient", model.problem().name()))
        })?;
        match *self {
            MutationTarget::Constrained { .. } => Ok(prior),
            MutationTarget::Tempered { temperature, .. } => {
                if temperature == 0.0 {
                    return Ok(prior);
                }
                let like = model.problem().grad_log_likelihood(x).ok_or_else(|| {
                    Error::Capability(format!(
                        "{} has no likelihood gradient",
                        model.problem().name()
                    ))
                })?;
                Ok(prior
                    .iter()
                    .zip(&like)
                    .map(|(a, b)| a + temperature * b)
                    .collect())
            }
        }
    }

    fn check_capability(&self, family: KernelFamily) -> Result<()> {
        match family {
            KernelFamily::Mala => {
                let x = vec![0.0; self.model().dimension()];
                self.gradient(&x).map(|_| ())
            }
            KernelFamily::Exact => match self {
                MutationTarget::Tempered { .. } => Err(Error::Capability(
                    "exact sampling is only available for constrained-prior targets".into(),
                )),
                MutationTarget::Constrained { .. } => Ok(()),
            },
            _ => Ok(()),
        }
    }
}

/// Result of one kernel application.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub particle: Particle,
    pub accepted: bool,
    /// `||Y - x||^2_Sigma * alpha` (or times the acceptance indicator when
    /// the acceptance probability was not computed explicitly).
    pub esjd: f64,
    /// `||Y - x||_Sigma * alpha`.
    pub jump: f64,
    /// Likelihood evaluations consumed.
    pub evals: u64,
    /// Slice interval collapsed; the particle was returned unchanged.
    pub stuck: bool,
}

fn diff(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// Metropolis-Hastings accept/reject of proposal `y`; `log_q_ratio` is
/// `log q(x | y) - log q(y | x)`.
fn metropolis<R: Rng>(
    current: &Particle,
    y: Vec<f64>,
    log_q_ratio: f64,
    target: &MutationTarget,
    config: &KernelConfig,
    rng: &mut R,
) -> StepOutcome {
    let dist = config.covariance.mahalanobis(&diff(&y, &current.x));
    let u: f64 = rng.random();
    let (next, alpha, accepted, evals) = match *target {
        MutationTarget::Constrained { model, constraint } => {
            let lp_y = model.log_prior(&y);
            let log_r = lp_y - current.log_prior + log_q_ratio;
            if config.options.two_stage {
                if lp_y > f64::NEG_INFINITY && u.ln() < log_r {
                    let ll = model.log_likelihood(&y);
                    let ok = constraint.admits(ll);
                    let next = ok.then(|| Particle {
                        x: y,
                        log_prior: lp_y,
                        log_like: ll,
                    });
                    (next, if ok { 1.0 } else { 0.0 }, ok, 1)
                } else {
                    (None, 0.0, false, 0)
                }
            } else {
                let ll = model.log_likelihood(&y);
                let alpha = if constraint.admits(ll) && lp_y > f64::NEG_INFINITY {
                    log_r.exp().min(1.0)
                } else {
                    0.0
                };
                let ok = u < alpha;
                let next = ok.then(|| Particle {
                    x: y,
                    log_prior: lp_y,
                    log_like: ll,
                });
                (next, alpha, ok, 1)
            }
        }
        MutationTarget::Tempered { model, temperature } => {
            let lp_y = model.log_prior(&y);
            if lp_y == f64::NEG_INFINITY {
                (None, 0.0, false, 0)
            } else {
                let ll = model.log_likelihood(&y);
                let log_r = tempered(lp_y, ll, temperature)
                    - tempered(current.log_prior, current.log_like, temperature)
                    + log_q_ratio;
                let alpha = if log_r.is_nan() {
                    0.0
                } else {
                    log_r.exp().min(1.0)
                };
                let ok = u < alpha;
                let next = ok.then(|| Particle {
                    x: y,
                    log_prior: lp_y,
                    log_like: ll,
                });
                (next, alpha, ok, 1)
            }
        }
    };
    StepOutcome {
        particle: next.unwrap_or_else(|| current.clone()),
        accepted,
        esjd: dist * dist * alpha,
        jump: dist * alpha,
        evals,
        stuck: false,
    }
}

fn check_start(current: &Particle, target: &MutationTarget) -> Result<()> {
    if !target.log_density(current).is_finite() {
        return Err(contract(
            "kernel started from a point with non-finite target density",
        ));
    }
    Ok(())
}

/// Gaussian random walk `Y ~ N(x, h^2 Sigma)`.
pub fn rw_step<R: Rng>(
    current: &Particle,
    target: &MutationTarget,
    config: &KernelConfig,
    rng: &mut R,
) -> Result<StepOutcome> {
    check_start(current, target)?;
    let z = config.covariance.sample(config.step_scale, rng);
    let y: Vec<f64> = current.x.iter().zip(&z).map(|(a, b)| a + b).collect();
    Ok(metropolis(current, y, 0.0, target, config, rng))
}

/// Random walk along one uniformly chosen axis with a step drawn from
/// `options.coord_scales` (times `step_scale`).
pub fn coord_rw_step<R: Rng>(
    current: &Particle,
    target: &MutationTarget,
    config: &KernelConfig,
    rng: &mut R,
) -> Result<StepOutcome> {
    check_start(current, target)?;
    let d = current.x.len();
    let axis = rng.random_range(0..d);
    let scales = &config.options.coord_scales;
    let h = scales[rng.random_range(0..scales.len())] * config.step_scale;
    let z: f64 = rng.sample(StandardNormal);
    let mut y = current.x.clone();
    y[axis] += h * z;
    Ok(metropolis(current, y, 0.0, target, config, rng))
}

fn mala_mean(x: &[f64], grad: &[f64], config: &KernelConfig) -> Vec<f64> {
    match config.options.mala_drift {
        MalaDrift::Unscaled => x.iter().zip(grad).map(|(a, g)| a + g).collect(),
        MalaDrift::Langevin => {
            let h2 = config.step_scale * config.step_scale;
            let sg = config.covariance.apply(grad);
            x.iter().zip(&sg).map(|(a, g)| a + 0.5 * h2 * g).collect()
        }
    }
}

/// MALA proposal `Y ~ N(x + drift(x), h^2 Sigma)` with the asymmetric
/// proposal densities in the acceptance ratio.
pub fn mala_step<R: Rng>(
    current: &Particle,
    target: &MutationTarget,
    config: &KernelConfig,
    rng: &mut R,
) -> Result<StepOutcome> {
    check_start(current, target)?;
    let h2 = config.step_scale * config.step_scale;
    let g_x = target.gradient(&current.x)?;
    let mean_x = mala_mean(&current.x, &g_x, config);
    let z = config.covariance.sample(config.step_scale, rng);
    let y: Vec<f64> = mean_x.iter().zip(&z).map(|(a, b)| a + b).collect();
    let model = target.model();
    let log_q_ratio = if model.log_prior(&y) > f64::NEG_INFINITY {
        let g_y = target.gradient(&y)?;
        let mean_y = mala_mean(&y, &g_y, config);
        let fwd = config.covariance.quad_form(&diff(&y, &mean_x)) / h2;
        let back = config.covariance.quad_form(&diff(&current.x, &mean_y)) / h2;
        -0.5 * back + 0.5 * fwd
    } else {
        0.0
    };
    Ok(metropolis(current, y, log_q_ratio, target, config, rng))
}

/// Width of a collapsed slice interval below which the sweep gives up.
pub const SLICE_COLLAPSE: f64 = 1e-12;

/// One sweep of univariate slice updates over all coordinates, stepping out
/// with width `slice_width * step_scale * sigma_i` and shrinking.
pub fn slice_step<R: Rng>(
    current: &Particle,
    target: &MutationTarget,
    config: &KernelConfig,
    rng: &mut R,
) -> Result<StepOutcome> {
    check_start(current, target)?;
    let model = target.model();
    let sds = config.covariance.std_devs();
    let m = config.options.slice_max_steps.max(1);
    let mut evals = 0u64;
    let mut state = current.clone();

    // Lazily evaluates the target at `x`, skipping the likelihood when the
    // prior alone already puts the point below the slice.
    let above = |x: Vec<f64>, level: f64, evals: &mut u64| -> Option<Particle> {
        let lp = model.log_prior(&x);
        if lp == f64::NEG_INFINITY {
            return None;
        }
        match *target {
            MutationTarget::Constrained { constraint, .. } => {
                if lp <= level {
                    return None;
                }
                *evals += 1;
                let ll = model.log_likelihood(&x);
                constraint.admits(ll).then_some(Particle {
                    x,
                    log_prior: lp,
                    log_like: ll,
                })
            }
            MutationTarget::Tempered { temperature, .. } => {
                if temperature == 0.0 && lp <= level {
                    return None;
                }
                *evals += 1;
                let ll = model.log_likelihood(&x);
                (tempered(lp, ll, temperature) > level).then_some(Particle {
                    x,
                    log_prior: lp,
                    log_like: ll,
                })
            }
        }
    };

    for i in 0..state.x.len() {
        let e: f64 = rng.sample(Exp1);
        let level = target.log_density(&state) - e;
        let w = config.options.slice_width * config.step_scale * sds[i];
        let xi = state.x[i];
        let at = |v: f64, base: &Particle| {
            let mut x = base.x.clone();
            x[i] = v;
            x
        };
        let mut left = xi - w * rng.random::<f64>();
        let mut right = left + w;
        let mut j = rng.random_range(0..m);
        let mut k = m - 1 - j;
        while j > 0 && above(at(left, &state), level, &mut evals).is_some() {
            left -= w;
            j -= 1;
        }
        while k > 0 && above(at(right, &state), level, &mut evals).is_some() {
            right += w;
            k -= 1;
        }
        loop {
            if right - left < SLICE_COLLAPSE {
                return Ok(StepOutcome {
                    particle: current.clone(),
                    accepted: false,
                    esjd: 0.0,
                    jump: 0.0,
                    evals,
                    stuck: true,
                });
            }
            let v = left + (right - left) * rng.random::<f64>();
            if let Some(p) = above(at(v, &state), level, &mut evals) {
                state = p;
                break;
            }
            if v < xi {
                left = v;
            } else {
                right = v;
            }
        }
    }
    let dist = config.covariance.mahalanobis(&diff(&state.x, &current.x));
    Ok(StepOutcome {
        particle: state,
        accepted: true,
        esjd: dist * dist,
        jump: dist,
        evals,
        stuck: false,
    })
}

/// Independent draw from the constrained prior.
pub fn exact_step<R: Rng>(
    current: &Particle,
    target: &MutationTarget,
    config: &KernelConfig,
    rng: &mut R,
) -> Result<StepOutcome> {
    let MutationTarget::Constrained { model, constraint } = *target else {
        return Err(Error::Capability(
            "exact sampling is only available for constrained-prior targets".into(),
        ));
    };
    let before = model.evaluations();
    let p = model.sample_constrained(rng, constraint.threshold(), constraint.is_strict())?;
    let evals = model.evaluations().saturating_sub(before).max(1);
    let dist = config.covariance.mahalanobis(&diff(&p.x, &current.x));
    Ok(StepOutcome {
        particle: p,
        accepted: true,
        esjd: dist * dist,
        jump: dist,
        evals,
        stuck: false,
    })
}

/// Applies one step of the configured kernel family.
pub fn step<R: Rng>(
    current: &Particle,
    target: &MutationTarget,
    config: &KernelConfig,
    rng: &mut R,
) -> Result<StepOutcome> {
    match config.family {
        KernelFamily::Rw => rw_step(current, target, config, rng),
        KernelFamily::CoordRw => coord_rw_step(current, target, config, rng),
        KernelFamily::Mala => mala_step(current, target, config, rng),
        KernelFamily::Slice => slice_step(current, target, config, rng),
        KernelFamily::Exact => exact_step(current, target, config, rng),
    }
}

/// Fails early when the kernel needs something the target cannot provide.
pub fn check_kernel(target: &MutationTarget, config: &KernelConfig) -> Result<()> {
    config.validate(target.model().dimension())?;
    target.check_capability(config.family)
}

/// Two-stage acceptance: conditional acceptance on the prior ratio, then the
/// likelihood constraint. `likelihood` is only invoked when the first stage
/// accepts. Returns `(accepted, log_likelihood_if_evaluated)`.
pub fn two_stage_accept<F: FnOnce() -> f64>(
    prior_ratio_accept: bool,
    constraint: Constraint,
    likelihood: F,
) -> (bool, Option<f64>) {
    if !prior_ratio_accept {
        return (false, None);
    }
    let ll = likelihood();
    (constraint.admits(ll), Some(ll))
}
