//! Population moves: one kernel step per particle, in parallel, with one
//! random stream per particle so results do not depend on the thread count.

use rayon::prelude::*;

use crate::error::Result;
use crate::kernels::{self, KernelConfig, MutationTarget};
use crate::particles::Particle;
use crate::rng::SimRng;

/// Aggregate counters over one or more sweeps.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SweepStats {
    pub evals: u64,
    pub proposals: usize,
    pub accepted: usize,
    pub stuck: usize,
}

impl SweepStats {
    pub fn merge(&mut self, other: SweepStats) {
        self.evals += other.evals;
        self.proposals += other.proposals;
        self.accepted += other.accepted;
        self.stuck += other.stuck;
    }

    pub fn acceptance_rate(&self) -> f64 {
        if self.proposals == 0 {
            0.0
        } else {
            self.accepted as f64 / self.proposals as f64
        }
    }
}

/// Per-particle output of a single sweep.
#[derive(Debug, Clone, Copy)]
pub struct StepSummary {
    pub esjd: f64,
    pub jump: f64,
    pub evals: u64,
}

fn summarize(steps: &[(bool, bool, StepSummary)]) -> SweepStats {
    let mut s = SweepStats::default();
    for (accepted, stuck, st) in steps {
        s.evals += st.evals;
        s.proposals += 1;
        s.accepted += *accepted as usize;
        s.stuck += *stuck as usize;
    }
    s
}

/// One sweep with a per-particle kernel chosen by `pick`, which receives the
/// particle's own rng before the step.
pub(crate) fn sweep_with<'c, F>(
    particles: &mut [Particle],
    rngs: &mut [SimRng],
    target: &MutationTarget,
    pick: F,
) -> Result<(SweepStats, Vec<(usize, StepSummary)>)>
where
    F: Fn(&mut SimRng) -> (usize, &'c KernelConfig) + Sync,
{
    let steps: Vec<(usize, bool, bool, StepSummary)> = particles
        .par_iter_mut()
        .zip(rngs.par_iter_mut())
        .map(|(p, rng)| {
            let (tag, config) = pick(rng);
            let out = kernels::step(p, target, config, rng)?;
            *p = out.particle;
            Ok((
                tag,
                out.accepted,
                out.stuck,
                StepSummary {
                    esjd: out.esjd,
                    jump: out.jump,
                    evals: out.evals,
                },
            ))
        })
        .collect::<Result<_>>()?;
    let stats = summarize(
        &steps
            .iter()
            .map(|(_, a, s, st)| (*a, *s, *st))
            .collect::<Vec<_>>(),
    );
    Ok((
        stats,
        steps.into_iter().map(|(t, _, _, st)| (t, st)).collect(),
    ))
}

/// One sweep of `config` over the population; returns per-particle step
/// summaries in particle order.
pub fn sweep(
    particles: &mut [Particle],
    rngs: &mut [SimRng],
    target: &MutationTarget,
    config: &KernelConfig,
) -> Result<(SweepStats, Vec<StepSummary>)> {
    let (stats, steps) = sweep_with(particles, rngs, target, |_| (0, config))?;
    Ok((stats, steps.into_iter().map(|(_, s)| s).collect()))
}

/// `config.repeats` sweeps.
pub fn apply_kernel(
    particles: &mut [Particle],
    rngs: &mut [SimRng],
    target: &MutationTarget,
    config: &KernelConfig,
) -> Result<SweepStats> {
    let mut total = SweepStats::default();
    for _ in 0..config.repeats {
        total.merge(sweep(particles, rngs, target, config)?.0);
    }
    Ok(total)
}
