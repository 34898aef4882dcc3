//! Sparse symmetric matrices, their Cholesky factorization, and the
//! structured precision matrices used in the latent field.

mod cholesky;
mod intslope;
mod rw2;
mod sparse;

use thiserror::Error;

pub use cholesky::{cholesky, Factorization, SelectedInverse, SymbolicCholesky, PIVOT_TOLERANCE};
pub use intslope::{intslope_precision, IntSlopeSpec};
pub use rw2::{
    check_knots, generalized_log_det, null_space_basis, numerical_rank, rw2_precision, rw2_structure,
    scale_rw2, Rw2Spec, ScaledRw2,
};
pub use sparse::{SparseMatrix, SparseSymMatrix};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GmrfError {
    #[error("matrix dimension must be at least 1")]
    EmptyMatrix,
    #[error("matrix is not square")]
    NotSquare,
    #[error("matrix is not positive definite (pivot {pivot:e} at index {index})")]
    NotPositiveDefinite { index: usize, pivot: f64 },
    #[error("matrix pattern differs from the analysed pattern")]
    PatternMismatch,
    #[error("second-order random walk needs at least 3 knots, got {0}")]
    TooFewKnots(usize),
    #[error("knots must be finite and strictly increasing")]
    NonIncreasingKnots,
    #[error("expected rank {expected}, found {found}")]
    RankMismatch { expected: usize, found: usize },
    #[error("precision or scale must be positive and finite, got {0}")]
    NonPositivePrecision(f64),
    #[error("correlation must lie in (-1, 1), got {0}")]
    InvalidRho(f64),
}
