//! Internal bridge to the `faer` linear-algebra backend.
//!
//! The public API of this crate speaks `nalgebra` types (`DMatrix`,
//! `DVector`); the heavy factorizations — symmetric eigendecomposition,
//! Cholesky, large matrix products — are delegated to `faer`, which is
//! substantially faster on the matrix sizes this crate targets (up to a few
//! thousand rows). `nalgebra` stores matrices in contiguous column-major
//! order, so the hand-off to `faer` is a zero-copy view.

use faer::linalg::solvers::LltError;
use faer::prelude::Solve;
use faer::{Mat, MatRef, Side};
use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Zero-copy `faer` view of a `nalgebra` matrix.
fn view(a: &DMatrix<f64>) -> MatRef<'_, f64> {
    MatRef::from_column_major_slice(a.as_slice(), a.nrows(), a.ncols())
}

/// Copy a `faer` matrix back into a `nalgebra` one.
fn to_dmatrix(a: MatRef<'_, f64>) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)])
}

/// Symmetric eigendecomposition `A = U diag(w) Uᵀ`.
///
/// Only the lower triangle of `a` is read. Eigenvalues are returned in
/// ascending order with the columns of `U` aligned to them.
pub(crate) fn sym_eigen(a: &DMatrix<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
    debug_assert_eq!(a.nrows(), a.ncols());
    let evd = view(a)
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| Error::InvalidInput(format!("eigendecomposition failed: {e:?}")))?;
    let n = a.nrows();
    let values = DVector::from_fn(n, |i, _| evd.S()[i]);
    let vectors = to_dmatrix(evd.U());
    Ok((values, vectors))
}

/// Cholesky factorization of a symmetric positive-definite matrix.
///
/// Wraps the factor so callers can reuse it for log-determinants and
/// multiple solves without refactorizing.
pub(crate) struct CholeskyFactor {
    llt: faer::linalg::solvers::Llt<f64>,
    dim: usize,
}

/// Factor `a` (lower triangle read) as `L Lᵀ`.
///
/// Fails with [`Error::NotPositiveDefinite`] carrying the zero-based index
/// of the first non-positive pivot.
pub(crate) fn cholesky(a: &DMatrix<f64>) -> Result<CholeskyFactor> {
    debug_assert_eq!(a.nrows(), a.ncols());
    match view(a).llt(Side::Lower) {
        Ok(llt) => Ok(CholeskyFactor { llt, dim: a.nrows() }),
        Err(LltError::NonPositivePivot { index }) => Err(Error::NotPositiveDefinite { index }),
    }
}

impl CholeskyFactor {
    /// Lower-triangular factor `L` with the strict upper triangle zeroed.
    pub(crate) fn lower(&self) -> DMatrix<f64> {
        let l = self.llt.L();
        DMatrix::from_fn(self.dim, self.dim, |i, j| if j <= i { l[(i, j)] } else { 0.0 })
    }

    /// `ln det A = 2 Σᵢ ln Lᵢᵢ`.
    pub(crate) fn logdet(&self) -> f64 {
        let l = self.llt.L();
        (0..self.dim).map(|i| l[(i, i)].ln()).sum::<f64>() * 2.0
    }

    /// Solve `A X = B` for a matrix right-hand side.
    pub(crate) fn solve_mat(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let x: Mat<f64> = self.llt.solve(view(b));
        to_dmatrix(x.as_ref())
    }

    /// Solve `A x = b` for a vector right-hand side.
    pub(crate) fn solve_vec(&self, b: &DVector<f64>) -> DVector<f64> {
        let rhs = MatRef::from_column_major_slice(b.as_slice(), b.nrows(), 1);
        let x: Mat<f64> = self.llt.solve(rhs);
        DVector::from_fn(b.nrows(), |i, _| x[(i, 0)])
    }

}

/// `A Bᵀ` through the `faer` matmul kernels; `a` is `n×k`, `b` is `m×k`.
pub(crate) fn mul_abt(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    debug_assert_eq!(a.ncols(), b.ncols());
    let prod: Mat<f64> = view(a) * view(b).transpose();
    to_dmatrix(prod.as_ref())
}

/// `A B` through the `faer` matmul kernels.
pub(crate) fn mul(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    debug_assert_eq!(a.ncols(), b.nrows());
    let prod: Mat<f64> = view(a) * view(b);
    to_dmatrix(prod.as_ref())
}
