//! Target problems: a prior, a likelihood and the built-in benchmarks.
//!
//! Densities live in log space throughout. Points outside the prior support
//! get `-inf` rather than an error so that kernels may propose anywhere.

use std::f64::consts::PI;
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use rand::{Rng, RngCore};
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};
use statrs::function::gamma::ln_gamma;

use crate::error::{contract, Error, Result};
use crate::particles::Particle;

/// The mathematical content of a target: prior `eta`, likelihood `L`, and
/// whatever extra structure (gradients, exact constrained sampling) is known.
pub trait Problem: Send + Sync + fmt::Debug {
    fn name(&self) -> &str;

    fn dimension(&self) -> usize;

    /// Log prior density; `-inf` outside the support.
    fn log_prior(&self, x: &[f64]) -> f64;

    /// One draw from the prior.
    fn sample_prior(&self, rng: &mut dyn RngCore) -> Vec<f64>;

    fn log_likelihood(&self, x: &[f64]) -> f64;

    fn grad_log_prior(&self, _x: &[f64]) -> Option<Vec<f64>> {
        None
    }

    fn grad_log_likelihood(&self, _x: &[f64]) -> Option<Vec<f64>> {
        None
    }

    /// `sup_x log L(x)` when known in closed form.
    fn max_log_likelihood(&self) -> Option<f64> {
        None
    }

    /// Closed-form log evidence, when available.
    fn log_evidence(&self) -> Option<f64> {
        None
    }

    /// Exact draw from the prior restricted to `{log L > t}` (or `>=` when
    /// `strict` is false).
    fn sample_constrained_prior(
        &self,
        _rng: &mut dyn RngCore,
        _log_threshold: f64,
        _strict: bool,
    ) -> Result<Vec<f64>> {
        Err(Error::Capability(format!(
            "{} has no exact constrained sampler",
            self.name()
        )))
    }
}

/// A problem paired with a likelihood-evaluation counter.
///
/// Each run owns its own `TargetModel`; the counter is atomic so particle
/// workers may evaluate concurrently.
#[derive(Debug)]
pub struct TargetModel {
    problem: Arc<dyn Problem>,
    evaluations: AtomicU64,
}

impl TargetModel {
    pub fn new(problem: Arc<dyn Problem>) -> Self {
        Self {
            problem,
            evaluations: AtomicU64::new(0),
        }
    }

    pub fn problem(&self) -> &dyn Problem {
        self.problem.as_ref()
    }

    pub fn shared_problem(&self) -> Arc<dyn Problem> {
        Arc::clone(&self.problem)
    }

    pub fn dimension(&self) -> usize {
        self.problem.dimension()
    }

    pub fn log_prior(&self, x: &[f64]) -> f64 {
        self.problem.log_prior(x)
    }

    /// Counted likelihood evaluation.
    pub fn log_likelihood(&self, x: &[f64]) -> f64 {
        self.evaluations.fetch_add(1, Ordering::Relaxed);
        self.problem.log_likelihood(x)
    }

    pub fn evaluations(&self) -> u64 {
        self.evaluations.load(Ordering::Relaxed)
    }

    /// Evaluates prior and (counted) likelihood at `x`.
    pub fn evaluate(&self, x: Vec<f64>) -> Particle {
        let log_prior = self.log_prior(&x);
        let log_like = self.log_likelihood(&x);
        Particle {
            x,
            log_prior,
            log_like,
        }
    }

    pub fn sample_prior(&self, rng: &mut dyn RngCore) -> Particle {
        let x = self.problem.sample_prior(rng);
        self.evaluate(x)
    }

    /// Exact draw from the constrained prior, with the likelihood of the
    /// returned point evaluated (and counted).
    pub fn sample_constrained(
        &self,
        rng: &mut dyn RngCore,
        log_threshold: f64,
        strict: bool,
    ) -> Result<Particle> {
        for _ in 0..1000 {
            let x = self
                .problem
                .sample_constrained_prior(rng, log_threshold, strict)?;
            let p = self.evaluate(x);
            let ok = if strict {
                p.log_like > log_threshold
            } else {
                p.log_like >= log_threshold
            };
            if ok {
                return Ok(p);
            }
        }
        Err(Error::DegenerateCloud(format!(
            "exact sampler could not produce a point above log-likelihood {log_threshold}"
        )))
    }
}

/// Uniform draw from the open unit ball in `n` dimensions: a Gaussian
/// direction scaled by `U^(1/n)`.
pub fn sample_unit_ball(rng: &mut dyn RngCore, n: usize) -> Vec<f64> {
    assert!(n >= 1, "dimension must be positive");
    loop {
        let z: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let norm = z.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            continue;
        }
        let u: f64 = rng.random();
        let r = u.powf(1.0 / n as f64);
        let x: Vec<f64> = z.iter().map(|v| v * r / norm).collect();
        if x.iter().map(|v| v * v).sum::<f64>() < 1.0 {
            return x;
        }
    }
}

/// `log V(B_n)`, the log volume of the unit `n`-ball.
pub fn log_unit_ball_volume(n: usize) -> f64 {
    let h = n as f64 / 2.0;
    h * PI.ln() - ln_gamma(h + 1.0)
}

/// Uniform prior on the unit ball with a likelihood that is a mixture of
/// isotropic normals centred at the origin. With a narrow heavy component
/// the `log p` vs `log L` curve has a phase transition.
#[derive(Debug, Clone)]
pub struct SphereMixture {
    dimension: usize,
    sds: Vec<f64>,
    weights: Vec<f64>,
    log_volume: f64,
    // (log a_k - n/2 log(2 pi sigma_k^2), 1 / (2 sigma_k^2))
    components: Vec<(f64, f64)>,
}

impl SphereMixture {
    pub fn new(dimension: usize, sds: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if dimension == 0 {
            return Err(contract("dimension must be positive"));
        }
        if sds.is_empty() || sds.len() != weights.len() {
            return Err(contract("need one weight per component standard deviation"));
        }
        if sds.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(contract("component standard deviations must be positive"));
        }
        if weights.iter().any(|a| !(*a > 0.0)) {
            return Err(contract("component weights must be positive"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(contract(format!(
                "component weights sum to {total}, expected 1"
            )));
        }
        let half_n = dimension as f64 / 2.0;
        let components = sds
            .iter()
            .zip(&weights)
            .map(|(s, a)| {
                (
                    a.ln() - half_n * (2.0 * PI * s * s).ln(),
                    1.0 / (2.0 * s * s),
                )
            })
            .collect();
        Ok(Self {
            dimension,
            sds,
            weights,
            log_volume: log_unit_ball_volume(dimension),
            components,
        })
    }

    /// The ten-dimensional phase-transition benchmark:
    /// `sigma = (0.1, 0.01)`, `a = (0.25, 0.75)`.
    pub fn phase_transition() -> Self {
        Self::new(10, vec![0.1, 0.01], vec![0.25, 0.75]).expect("valid parameters")
    }

    pub fn sds(&self) -> &[f64] {
        &self.sds
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Log likelihood as a function of the squared radius.
    pub fn log_like_r2(&self, r2: f64) -> f64 {
        let mut max = f64::NEG_INFINITY;
        for (c, inv) in &self.components {
            max = max.max(c - r2 * inv);
        }
        if max == f64::NEG_INFINITY {
            return max;
        }
        let s: f64 = self
            .components
            .iter()
            .map(|(c, inv)| (c - r2 * inv - max).exp())
            .sum();
        max + s.ln()
    }

    /// Radius `R` such that `{r < R}` is (up to rounding) the region admitted
    /// by the constraint. `None` when the region is empty.
    fn constrained_radius(&self, log_threshold: f64, strict: bool) -> Option<f64> {
        let admits = |ll: f64| {
            if strict {
                ll > log_threshold
            } else {
                ll >= log_threshold
            }
        };
        if !admits(self.log_like_r2(0.0)) {
            return None;
        }
        if admits(self.log_like_r2(1.0)) {
            return Some(1.0);
        }
        let (mut lo, mut hi) = (0.0f64, 1.0f64);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if admits(self.log_like_r2(mid * mid)) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Some(hi)
    }
}

fn norm2(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

impl Problem for SphereMixture {
    fn name(&self) -> &str {
        "sphere_mixture"
    }

    fn dimension(&self) -> usize {
        self.dimension
    }

    fn log_prior(&self, x: &[f64]) -> f64 {
        if norm2(x) < 1.0 {
            -self.log_volume
        } else {
            f64::NEG_INFINITY
        }
    }

    fn sample_prior(&self, rng: &mut dyn RngCore) -> Vec<f64> {
        sample_unit_ball(rng, self.dimension)
    }

    fn log_likelihood(&self, x: &[f64]) -> f64 {
        self.log_like_r2(norm2(x))
    }

    fn grad_log_prior(&self, x: &[f64]) -> Option<Vec<f64>> {
        Some(vec![0.0; x.len()])
    }

    fn grad_log_likelihood(&self, x: &[f64]) -> Option<Vec<f64>> {
        // d/dx log sum_k a_k phi_k = -x sum_k r_k / sigma_k^2, r_k the
        // component responsibilities.
        let r2 = norm2(x);
        let ll = self.log_like_r2(r2);
        let scale: f64 = self
            .components
            .iter()
            .map(|(c, inv)| (c - r2 * inv - ll).exp() * 2.0 * inv)
            .sum();
        Some(x.iter().map(|v| -v * scale).collect())
    }

    fn max_log_likelihood(&self) -> Option<f64> {
        Some(self.log_like_r2(0.0))
    }

    fn log_evidence(&self) -> Option<f64> {
        // Z = (1 / V(B_n)) sum_k a_k P(chi^2_n < 1 / sigma_k^2)
        let chi = ChiSquared::new(self.dimension as f64).ok()?;
        let mass: f64 = self
            .sds
            .iter()
            .zip(&self.weights)
            .map(|(s, a)| a * chi.cdf(1.0 / (s * s)))
            .sum();
        Some(mass.ln() - self.log_volume)
    }

    fn sample_constrained_prior(
        &self,
        rng: &mut dyn RngCore,
        log_threshold: f64,
        strict: bool,
    ) -> Result<Vec<f64>> {
        let radius = self
            .constrained_radius(log_threshold, strict)
            .ok_or_else(|| {
                Error::DegenerateCloud(format!(
                    "constraint set above log-likelihood {log_threshold} is empty"
                ))
            })?;
        let x = sample_unit_ball(rng, self.dimension);
        Ok(x.into_iter().map(|v| v * radius).collect())
    }
}

/// Standard normal prior with a Gaussian likelihood `y ~ N(x, s^2 I)`.
/// The evidence is the density of `y` under `N(0, (1 + s^2) I)`.
#[derive(Debug, Clone)]
pub struct ConjugateGaussian {
    obs: Vec<f64>,
    noise_sd: f64,
}

impl ConjugateGaussian {
    pub fn new(obs: Vec<f64>, noise_sd: f64) -> Result<Self> {
        if obs.is_empty() {
            return Err(contract("observation vector must be non-empty"));
        }
        if !(noise_sd > 0.0 && noise_sd.is_finite()) {
            return Err(contract("noise standard deviation must be positive"));
        }
        Ok(Self { obs, noise_sd })
    }

    pub fn obs(&self) -> &[f64] {
        &self.obs
    }

    pub fn noise_sd(&self) -> f64 {
        self.noise_sd
    }

    /// Posterior mean and (isotropic) variance.
    pub fn posterior(&self) -> (Vec<f64>, f64) {
        let s2 = self.noise_sd * self.noise_sd;
        let mean = self.obs.iter().map(|y| y / (1.0 + s2)).collect();
        (mean, s2 / (1.0 + s2))
    }
}

/// Log density of `y` under `N(0, (1 + s^2) I)`.
pub fn analytic_evidence_conjugate(model: &ConjugateGaussian) -> f64 {
    let d = model.obs.len() as f64;
    let v = 1.0 + model.noise_sd * model.noise_sd;
    -0.5 * d * (2.0 * PI * v).ln() - norm2(&model.obs) / (2.0 * v)
}

impl Problem for ConjugateGaussian {
    fn name(&self) -> &str {
        "conjugate_gaussian"
    }

    fn dimension(&self) -> usize {
        self.obs.len()
    }

    fn log_prior(&self, x: &[f64]) -> f64 {
        -0.5 * x.len() as f64 * (2.0 * PI).ln() - 0.5 * norm2(x)
    }

    fn sample_prior(&self, rng: &mut dyn RngCore) -> Vec<f64> {
        (0..self.obs.len())
            .map(|_| rng.sample(StandardNormal))
            .collect()
    }

    fn log_likelihood(&self, x: &[f64]) -> f64 {
        let s2 = self.noise_sd * self.noise_sd;
        let d2: f64 = x
            .iter()
            .zip(&self.obs)
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        -0.5 * x.len() as f64 * (2.0 * PI * s2).ln() - d2 / (2.0 * s2)
    }

    fn grad_log_prior(&self, x: &[f64]) -> Option<Vec<f64>> {
        Some(x.iter().map(|v| -v).collect())
    }

    fn grad_log_likelihood(&self, x: &[f64]) -> Option<Vec<f64>> {
        let s2 = self.noise_sd * self.noise_sd;
        Some(x.iter().zip(&self.obs).map(|(a, y)| (y - a) / s2).collect())
    }

    fn max_log_likelihood(&self) -> Option<f64> {
        Some(-0.5 * self.obs.len() as f64 * (2.0 * PI * self.noise_sd * self.noise_sd).ln())
    }

    fn log_evidence(&self) -> Option<f64> {
        Some(analytic_evidence_conjugate(self))
    }

    /// Truncated-normal inversion; only the one-dimensional case is supported.
    fn sample_constrained_prior(
        &self,
        rng: &mut dyn RngCore,
        log_threshold: f64,
        _strict: bool,
    ) -> Result<Vec<f64>> {
        if self.obs.len() != 1 {
            return Err(Error::Capability(
                "exact constrained sampling of conjugate_gaussian needs dimension 1".into(),
            ));
        }
        let s2 = self.noise_sd * self.noise_sd;
        let r2 = 2.0 * s2 * (self.max_log_likelihood().unwrap() - log_threshold);
        if !(r2 > 0.0) {
            return Err(Error::DegenerateCloud(format!(
                "constraint set above log-likelihood {log_threshold} is empty"
            )));
        }
        let r = if r2.is_finite() {
            r2.sqrt()
        } else {
            f64::INFINITY
        };
        let y = self.obs[0];
        let std = Normal::new(0.0, 1.0).expect("standard normal");
        let lo = std.cdf(y - r);
        let hi = std.cdf(y + r);
        let u: f64 = rng.random();
        let p = (lo + u * (hi - lo)).clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON);
        let x = std.inverse_cdf(p).clamp(y - r, y + r);
        Ok(vec![x])
    }
}

/// Named model with its parameter block, as it appears in experiment configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSpec {
    SphereMixture {
        dimension: usize,
        #[serde(default = "default_sphere_sds")]
        sds: Vec<f64>,
        #[serde(default = "default_sphere_weights")]
        weights: Vec<f64>,
    },
    ConjugateGaussian {
        obs: Vec<f64>,
        noise_sd: f64,
    },
}

fn default_sphere_sds() -> Vec<f64> {
    vec![0.1, 0.01]
}

fn default_sphere_weights() -> Vec<f64> {
    vec![0.25, 0.75]
}

impl ModelSpec {
    pub fn build(&self) -> Result<Arc<dyn Problem>> {
        Ok(match self {
            ModelSpec::SphereMixture {
                dimension,
                sds,
                weights,
            } => Arc::new(SphereMixture::new(
                *dimension,
                sds.clone(),
                weights.clone(),
            )?),
            ModelSpec::ConjugateGaussian { obs, noise_sd } => {
                Arc::new(ConjugateGaussian::new(obs.clone(), *noise_sd)?)
            }
        })
    }
}
