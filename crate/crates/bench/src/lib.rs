//! Shared fixtures for the benchmarks.

use nssmc_core::particles::normalize;
use nssmc_core::{Domain, Streams};
use rand::Rng;
use rand_distr::StandardNormal;

/// `n` log-weights with the given spread, reproducible from `seed`.
pub fn log_weights(n: usize, spread: f64, seed: u64) -> Vec<f64> {
    let mut rng = Streams::new(seed).derive(Domain::Sequential, 0, 0);
    (0..n)
        .map(|_| spread * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

/// Normalised weights built from [`log_weights`].
pub fn weights(n: usize, spread: f64, seed: u64) -> Vec<f64> {
    normalize(&log_weights(n, spread, seed))
        .expect("finite weights")
        .0
}
