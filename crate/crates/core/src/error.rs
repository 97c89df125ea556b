//! Error type shared by every module in this crate.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// Everything that can go wrong while building kernels, evaluating
/// divergences, or fitting variance components.
#[derive(Debug, Error)]
pub enum Error {
    /// A precondition on caller-supplied data failed (dimension mismatch,
    /// out-of-range parameter, malformed identifier, ...).
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A Cholesky factorization hit a non-positive pivot. `index` is the
    /// zero-based row at which the factorization failed.
    #[error("matrix is not positive definite (non-positive pivot at index {index})")]
    NotPositiveDefinite { index: usize },

    /// Every marker column was dropped as monomorphic, so no kernel can be
    /// formed.
    #[error("no informative markers: all columns are monomorphic")]
    NoInformativeMarkers,

    /// The requested model cannot be estimated from the given design.
    #[error("model is not identifiable: {0}")]
    NonIdentifiable(String),

    /// The supplied observations cannot support a fit (all zero, wrong
    /// length, non-finite entries, ...).
    #[error("degenerate data: {0}")]
    DegenerateData(String),

    /// Every grid point was skipped (no positive-definite candidate), so the
    /// scan has no minimizer to report.
    #[error("model degenerate on grid: no positive definite candidate point")]
    DegenerateGrid,

    /// An optimization routine exhausted its iteration budget without
    /// satisfying its convergence tolerance.
    #[error("optimization failed to converge: {0}")]
    NoConvergence(String),

    /// Reading or writing a file failed at the OS level.
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    /// A file was read but its contents do not match the expected format.
    #[error("parse error: {0}")]
    Parse(String),
}
