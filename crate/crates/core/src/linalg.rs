//! Thin wrappers over LAPACK for the symmetric systems used throughout.

use ndarray::{Array1, Array2, ArrayView2};
use ndarray_linalg::{EigValsh, Eigh, FactorizeC, SolveC, UPLO};

use crate::error::{Error, Result};

/// Solves `a x = b` for symmetric positive-definite `a` by Cholesky.
///
/// On failure the smallest eigenvalue of `a` is reported.
pub fn solve_spd(a: &Array2<f64>, b: &Array1<f64>) -> Result<Array1<f64>> {
    match a.factorizec(UPLO::Lower) {
        Ok(factor) => Ok(factor.solvec(b)?),
        Err(_) => Err(Error::Factorization {
            smallest_eigenvalue: min_eigenvalue(a.view()).unwrap_or(f64::NAN),
        }),
    }
}

/// Eigenvalues (ascending) and eigenvectors (columns) of a symmetric matrix.
pub fn symmetric_eigen(a: ArrayView2<f64>) -> Result<(Array1<f64>, Array2<f64>)> {
    Ok(a.eigh(UPLO::Lower)?)
}

pub fn eigenvalues(a: ArrayView2<f64>) -> Result<Array1<f64>> {
    Ok(a.eigvalsh(UPLO::Lower)?)
}

pub fn min_eigenvalue(a: ArrayView2<f64>) -> Result<f64> {
    Ok(eigenvalues(a)?.iter().copied().fold(f64::INFINITY, f64::min))
}

pub fn max_eigenvalue(a: ArrayView2<f64>) -> Result<f64> {
    Ok(eigenvalues(a)?.iter().copied().fold(f64::NEG_INFINITY, f64::max))
}

/// Spectral norm of a symmetric matrix.
pub fn spectral_norm_sym(a: ArrayView2<f64>) -> Result<f64> {
    Ok(eigenvalues(a)?.iter().fold(0.0_f64, |m, v| m.max(v.abs())))
}

/// `u vᵀ`.
pub fn outer(u: &Array1<f64>, v: &Array1<f64>) -> Array2<f64> {
    Array2::from_shape_fn((u.len(), v.len()), |(i, j)| u[i] * v[j])
}

/// Adds `shift` to the diagonal in place.
pub(crate) fn add_diagonal(a: &mut Array2<f64>, shift: f64) {
    a.diag_mut().mapv_inplace(|v| v + shift);
}
