//! Second-order random walk on (possibly irregular) knots.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::{GmrfError, SparseSymMatrix};

/// Relative eigenvalue cut-off used to separate the null space.
const NULL_EIGEN_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rw2Spec {
    pub knots: Vec<f64>,
    pub scaled: bool,
    pub tau_alpha: f64,
}

impl Rw2Spec {
    pub fn new(knots: Vec<f64>, scaled: bool, tau_alpha: f64) -> Result<Self, GmrfError> {
        let spec = Self {
            knots,
            scaled,
            tau_alpha,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// `n` equally spaced knots on `[lo, hi]`.
    pub fn equally_spaced(lo: f64, hi: f64, n: usize) -> Result<Vec<f64>, GmrfError> {
        if n < 3 {
            return Err(GmrfError::TooFewKnots(n));
        }
        let knots: Vec<f64> = (0..n)
            .map(|i| {
                if i == n - 1 {
                    hi
                } else {
                    lo + (hi - lo) * i as f64 / (n - 1) as f64
                }
            })
            .collect();
        check_knots(&knots)?;
        Ok(knots)
    }

    pub fn validate(&self) -> Result<(), GmrfError> {
        check_knots(&self.knots)?;
        if !(self.tau_alpha > 0.0 && self.tau_alpha.is_finite()) {
            return Err(GmrfError::NonPositivePrecision(self.tau_alpha));
        }
        Ok(())
    }
}

pub fn check_knots(knots: &[f64]) -> Result<(), GmrfError> {
    if knots.len() < 3 {
        return Err(GmrfError::TooFewKnots(knots.len()));
    }
    if knots.iter().any(|k| !k.is_finite()) || knots.windows(2).any(|w| w[1] <= w[0]) {
        return Err(GmrfError::NonIncreasingKnots);
    }
    Ok(())
}

/// Precision of the RW2 model on `spec.knots`, times `spec.tau_alpha`, and
/// scaled to unit generalized variance when `spec.scaled` is set.
///
/// Each interior knot contributes the weak second derivative of the
/// piecewise-linear interpolant with lumped mass `(δ₋ + δ₊)/2`; on unit
/// spacing this is exactly `DᵀD` with `D` the second-difference operator.
pub fn rw2_precision(spec: &Rw2Spec) -> Result<SparseSymMatrix, GmrfError> {
    spec.validate()?;
    let base = rw2_structure(&spec.knots)?;
    let base = if spec.scaled {
        scale_rw2(&base)?.matrix
    } else {
        base
    };
    Ok(base.scaled(spec.tau_alpha))
}

/// Unscaled structure matrix with unit precision.
pub fn rw2_structure(knots: &[f64]) -> Result<SparseSymMatrix, GmrfError> {
    check_knots(knots)?;
    let n = knots.len();
    let mut q = SparseSymMatrix::with_capacity(n, 6 * (n - 2))?;
    for j in 1..n - 1 {
        let dl = knots[j] - knots[j - 1];
        let dr = knots[j + 1] - knots[j];
        let g = [1.0 / dl, -(1.0 / dl + 1.0 / dr), 1.0 / dr];
        let w = 2.0 / (dl + dr);
        for a in 0..3 {
            for b in 0..=a {
                q.push(j - 1 + a, j - 1 + b, w * g[a] * g[b]);
            }
        }
    }
    Ok(q)
}

#[derive(Debug, Clone)]
pub struct ScaledRw2 {
    pub matrix: SparseSymMatrix,
    /// Multiplier applied to the input.
    pub factor: f64,
}

/// Rescales an RW2 precision so that the geometric mean of the marginal
/// variances of its generalized inverse (null space projected out) is 1.
pub fn scale_rw2(q: &SparseSymMatrix) -> Result<ScaledRw2, GmrfError> {
    let n = q.dim();
    let eig = SymmetricEigen::new(q.to_dense());
    let max_ev = eig.eigenvalues.iter().fold(0.0_f64, |a, &b| a.max(b.abs()));
    let cut = NULL_EIGEN_TOL * max_ev;
    let rank = eig.eigenvalues.iter().filter(|&&l| l > cut).count();
    if n < 3 || rank != n - 2 {
        return Err(GmrfError::RankMismatch {
            expected: n.saturating_sub(2),
            found: rank,
        });
    }
    let mut log_sum = 0.0;
    for i in 0..n {
        let mut v = 0.0;
        for (k, &lambda) in eig.eigenvalues.iter().enumerate() {
            if lambda > cut {
                v += eig.eigenvectors[(i, k)].powi(2) / lambda;
            }
        }
        log_sum += v.ln();
    }
    let factor = (log_sum / n as f64).exp();
    Ok(ScaledRw2 {
        matrix: q.scaled(factor),
        factor,
    })
}

/// Numerical rank from a dense eigen-decomposition.
pub fn numerical_rank(q: &SparseSymMatrix) -> usize {
    let eig = SymmetricEigen::new(q.to_dense());
    let max_ev = eig.eigenvalues.iter().fold(0.0_f64, |a, &b| a.max(b.abs()));
    eig.eigenvalues
        .iter()
        .filter(|&&l| l > NULL_EIGEN_TOL * max_ev)
        .count()
}

/// Orthonormal basis (columns) of span{1, t} over the knots: the RW2 null space.
pub fn null_space_basis(knots: &[f64]) -> DMatrix<f64> {
    let n = knots.len();
    let mut basis = DMatrix::zeros(n, 2);
    let c = 1.0 / (n as f64).sqrt();
    let mean = knots.iter().sum::<f64>() / n as f64;
    let norm = knots.iter().map(|t| (t - mean).powi(2)).sum::<f64>().sqrt();
    for i in 0..n {
        basis[(i, 0)] = c;
        basis[(i, 1)] = (knots[i] - mean) / norm;
    }
    basis
}

/// Log of the product of the non-zero eigenvalues (rank `n − 2`).
pub fn generalized_log_det(q: &SparseSymMatrix, knots: &[f64]) -> Result<f64, GmrfError> {
    let u = null_space_basis(knots);
    let completed = q.to_dense() + &u * u.transpose();
    let chol = completed
        .cholesky()
        .ok_or(GmrfError::NotPositiveDefinite { index: 0, pivot: 0.0 })?;
    Ok(2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>())
}
