//! Multinomial, stratified and residual resampling of particle indices.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::particles::check_normalized;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResampleScheme {
    Multinomial,
    #[default]
    Stratified,
    Residual,
}

/// Draws `weights.len()` ancestor indices (0-based, ascending).
pub fn resample<R: Rng + ?Sized>(
    weights: &[f64],
    scheme: ResampleScheme,
    rng: &mut R,
) -> Result<Vec<usize>> {
    check_normalized(weights)?;
    let n = weights.len();
    Ok(match scheme {
        ResampleScheme::Multinomial => multinomial(weights, n, rng),
        ResampleScheme::Stratified => {
            let u: Vec<f64> = (0..n)
                .map(|k| (k as f64 + rng.random::<f64>()) / n as f64)
                .collect();
            invert_sorted(weights, &u)
        }
        ResampleScheme::Residual => residual(weights, rng),
    })
}

/// Maps sorted uniforms through the weight CDF in one sweep.
fn invert_sorted(weights: &[f64], sorted_u: &[f64]) -> Vec<usize> {
    let last_positive = weights.iter().rposition(|w| *w > 0.0).unwrap_or(0);
    let total: f64 = weights.iter().sum();
    let mut out = Vec::with_capacity(sorted_u.len());
    let mut k = 0;
    let mut cum = weights[0];
    for &u in sorted_u {
        let u = u * total;
        while u >= cum && k < last_positive {
            k += 1;
            cum += weights[k];
        }
        out.push(k);
    }
    out
}

fn multinomial<R: Rng + ?Sized>(weights: &[f64], m: usize, rng: &mut R) -> Vec<usize> {
    if m == 0 {
        return Vec::new();
    }
    // Sorted uniforms from normalised exponential spacings.
    let mut acc = 0.0;
    let mut e: Vec<f64> = (0..=m)
        .map(|_| {
            acc += -(1.0 - rng.random::<f64>()).ln();
            acc
        })
        .collect();
    let total = e.pop().unwrap();
    for v in e.iter_mut() {
        *v /= total;
    }
    invert_sorted(weights, &e)
}

fn residual<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> Vec<usize> {
    let n = weights.len();
    let nf = n as f64;
    let mut out = Vec::with_capacity(n);
    let mut residuals = Vec::with_capacity(n);
    for (k, w) in weights.iter().enumerate() {
        let expected = nf * w;
        let copies = expected.floor() as usize;
        out.extend(std::iter::repeat_n(k, copies));
        residuals.push((expected - copies as f64).max(0.0));
    }
    let remaining = n.saturating_sub(out.len());
    if remaining > 0 {
        let total: f64 = residuals.iter().sum();
        if total > 0.0 {
            for r in residuals.iter_mut() {
                *r /= total;
            }
            out.extend(multinomial(&residuals, remaining, rng));
        } else {
            // Floating-point shortfall with no residual mass: pad with the
            // heaviest particle.
            let best = weights
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .map(|(k, _)| k)
                .unwrap_or(0);
            out.extend(std::iter::repeat_n(best, remaining));
        }
    }
    out.truncate(n);
    out.sort_unstable();
    out
}

/// Copy counts per index.
pub fn counts(indices: &[usize], n: usize) -> Vec<usize> {
    let mut c = vec![0; n];
    for &i in indices {
        c[i] += 1;
    }
    c
}
