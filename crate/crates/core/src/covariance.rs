//! Population covariance estimates, Cholesky factors and Mahalanobis norms.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};

/// Relative ridge added to a sample covariance before factorisation.
pub const RIDGE: f64 = 1e-8;

/// A symmetric positive-definite matrix with its Cholesky factor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct Covariance {
    matrix: DMatrix<f64>,
    lower: DMatrix<f64>,
}

impl Covariance {
    pub fn identity(d: usize) -> Self {
        Self {
            matrix: DMatrix::identity(d, d),
            lower: DMatrix::identity(d, d),
        }
    }

    /// Factorises `matrix` as given; fails unless it is symmetric positive
    /// definite.
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        if !matrix.is_square() || matrix.nrows() == 0 {
            return Err(contract("covariance must be a non-empty square matrix"));
        }
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(contract("covariance has non-finite entries"));
        }
        let asym = (&matrix - matrix.transpose()).abs().max();
        if asym > 1e-10 * matrix.abs().max().max(1.0) {
            return Err(contract("covariance is not symmetric"));
        }
        let chol = matrix
            .clone()
            .cholesky()
            .ok_or_else(|| contract("covariance is not positive definite"))?;
        Ok(Self {
            lower: chol.l(),
            matrix,
        })
    }

    /// Adds `RIDGE * trace / d` to the diagonal, then factorises. A zero
    /// matrix (all particles identical) falls back to the identity.
    pub fn regularized(mut matrix: DMatrix<f64>) -> Result<Self> {
        let d = matrix.nrows();
        let trace = matrix.trace();
        if !(trace > 0.0) || !trace.is_finite() {
            return Ok(Self::identity(d));
        }
        let ridge = RIDGE * trace / d as f64;
        for i in 0..d {
            matrix[(i, i)] += ridge;
        }
        Self::new(matrix)
    }

    /// Weighted sample covariance of `points` (weights normalised),
    /// regularised.
    pub fn estimate(points: &[&[f64]], weights: &[f64]) -> Result<Self> {
        let d = points.first().map(|p| p.len()).unwrap_or(0);
        if d == 0 {
            return Err(contract("cannot estimate covariance of an empty cloud"));
        }
        let mean = weighted_mean(points, weights);
        let mut m = DMatrix::<f64>::zeros(d, d);
        for (p, w) in points.iter().zip(weights) {
            if *w == 0.0 {
                continue;
            }
            for i in 0..d {
                let di = p[i] - mean[i];
                for j in 0..=i {
                    m[(i, j)] += w * di * (p[j] - mean[j]);
                }
            }
        }
        for i in 0..d {
            for j in 0..i {
                m[(j, i)] = m[(i, j)];
            }
        }
        Self::regularized(m)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let d = rows.len();
        if rows.iter().any(|r| r.len() != d) {
            return Err(contract("covariance rows must form a square matrix"));
        }
        Self::new(DMatrix::from_fn(d, d, |i, j| rows[i][j]))
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        let d = self.dim();
        (0..d)
            .map(|i| (0..d).map(|j| self.matrix[(i, j)]).collect())
            .collect()
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    /// Marginal standard deviations.
    pub fn std_devs(&self) -> Vec<f64> {
        (0..self.dim())
            .map(|i| self.matrix[(i, i)].sqrt())
            .collect()
    }

    /// `y^T Sigma^-1 y`.
    pub fn quad_form(&self, y: &[f64]) -> f64 {
        let z = self.solve_lower(y);
        z.iter().map(|v| v * v).sum()
    }

    /// `sqrt(y^T Sigma^-1 y)`.
    pub fn mahalanobis(&self, y: &[f64]) -> f64 {
        self.quad_form(y).sqrt()
    }

    /// `Sigma v`.
    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        (&self.matrix * DVector::from_column_slice(v))
            .as_slice()
            .to_vec()
    }

    /// Draw from `N(0, scale^2 Sigma)`.
    pub fn sample<R: Rng + ?Sized>(&self, scale: f64, rng: &mut R) -> Vec<f64> {
        let d = self.dim();
        let z: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let mut out = vec![0.0; d];
        for i in 0..d {
            let mut s = 0.0;
            for j in 0..=i {
                s += self.lower[(i, j)] * z[j];
            }
            out[i] = scale * s;
        }
        out
    }

    fn solve_lower(&self, y: &[f64]) -> Vec<f64> {
        let d = self.dim();
        let mut z = vec![0.0; d];
        for i in 0..d {
            let mut s = y[i];
            for j in 0..i {
                s -= self.lower[(i, j)] * z[j];
            }
            z[i] = s / self.lower[(i, i)];
        }
        z
    }
}

impl TryFrom<Vec<Vec<f64>>> for Covariance {
    type Error = crate::error::Error;

    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        Self::from_rows(&rows)
    }
}

impl From<Covariance> for Vec<Vec<f64>> {
    fn from(c: Covariance) -> Self {
        c.to_rows()
    }
}

pub fn weighted_mean(points: &[&[f64]], weights: &[f64]) -> Vec<f64> {
    let d = points.first().map(|p| p.len()).unwrap_or(0);
    let mut mean = vec![0.0; d];
    for (p, w) in points.iter().zip(weights) {
        for i in 0..d {
            mean[i] += w * p[i];
        }
    }
    mean
}
