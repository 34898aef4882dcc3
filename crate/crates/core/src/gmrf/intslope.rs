//! Correlated random intercept and slope.

use nalgebra::Matrix2;
use serde::{Deserialize, Serialize};

use super::{GmrfError, SparseSymMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntSlopeSpec {
    pub sigma_w: f64,
    pub sigma_v: f64,
    pub rho: f64,
}

impl IntSlopeSpec {
    pub fn validate(&self) -> Result<(), GmrfError> {
        for s in [self.sigma_w, self.sigma_v] {
            if !(s > 0.0 && s.is_finite()) {
                return Err(GmrfError::NonPositivePrecision(s));
            }
        }
        if !(self.rho.abs() < 1.0) {
            return Err(GmrfError::InvalidRho(self.rho));
        }
        Ok(())
    }

    pub fn covariance(&self) -> Matrix2<f64> {
        let off = self.rho * self.sigma_w * self.sigma_v;
        Matrix2::new(self.sigma_w.powi(2), off, off, self.sigma_v.powi(2))
    }

    /// Closed-form inverse of [`Self::covariance`].
    pub fn precision(&self) -> Result<Matrix2<f64>, GmrfError> {
        self.validate()?;
        let (sw, sv, r) = (self.sigma_w, self.sigma_v, self.rho);
        let k = 1.0 / (1.0 - r * r);
        Ok(Matrix2::new(
            k / (sw * sw),
            -k * r / (sw * sv),
            -k * r / (sw * sv),
            k / (sv * sv),
        ))
    }

    /// `log det Q_u`.
    pub fn log_det_precision(&self) -> f64 {
        -(self.sigma_w.powi(2) * self.sigma_v.powi(2) * (1.0 - self.rho * self.rho)).ln()
    }

    /// Recovers `(σ_w, σ_v, ρ)` from a 2×2 precision.
    pub fn from_precision(q: &Matrix2<f64>) -> Option<Self> {
        let cov = q.try_inverse()?;
        let sigma_w = cov[(0, 0)].sqrt();
        let sigma_v = cov[(1, 1)].sqrt();
        Some(Self {
            sigma_w,
            sigma_v,
            rho: cov[(0, 1)] / (sigma_w * sigma_v),
        })
    }
}

/// `Q_u` replicated block-diagonally over `subjects` pairs `(w_i, v_i)`,
/// interleaved as `w₀, v₀, w₁, v₁, …`.
pub fn intslope_precision(spec: &IntSlopeSpec, subjects: usize) -> Result<SparseSymMatrix, GmrfError> {
    let q = spec.precision()?;
    let mut block = SparseSymMatrix::new(2)?;
    block.push(0, 0, q[(0, 0)]);
    block.push(1, 0, q[(1, 0)]);
    block.push(1, 1, q[(1, 1)]);
    block.replicate(subjects.max(1))
}
