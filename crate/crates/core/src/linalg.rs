//! Thin wrappers over the LAPACK-backed decompositions used throughout the
//! diagnostics: spectral norms, symmetric eigenvalues, singular values, and
//! tolerance-based numerical rank.

use ndarray::{Array1, Array2};
use ndarray_linalg::{Eigh, UPLO};

use crate::error::{Error, Result};

/// Singular values of `m`, descending.
pub fn singular_values(m: &Array2<f64>) -> Result<Array1<f64>> {
    use ndarray_linalg::SVD;
    let (_, s, _) = m.svd(false, false)?;
    Ok(s)
}

/// Spectral norm ‖m‖₂ (largest singular value).
pub fn spectral_norm(m: &Array2<f64>) -> Result<f64> {
    Ok(singular_values(m)?.iter().copied().fold(0.0, f64::max))
}

/// Frobenius norm.
pub fn frobenius_norm(m: &Array2<f64>) -> f64 {
    m.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Eigenvalues of a symmetric matrix, ascending. Symmetrizes the input first
/// so harmless rounding asymmetry does not leak into LAPACK.
pub fn sym_eigenvalues(m: &Array2<f64>) -> Result<Array1<f64>> {
    let sym = 0.5 * (m + &m.t());
    let (vals, _) = sym.eigh(UPLO::Lower)?;
    Ok(vals)
}

pub fn min_eigenvalue(m: &Array2<f64>) -> Result<f64> {
    let vals = sym_eigenvalues(m)?;
    vals.first()
        .copied()
        .ok_or_else(|| Error::Degenerate("empty matrix".into()))
}

pub fn max_abs_eigenvalue(m: &Array2<f64>) -> Result<f64> {
    Ok(sym_eigenvalues(m)?.iter().fold(0.0, |a, &v| a.max(v.abs())))
}

/// Condition number σ_max/σ_min; +∞ when σ_min vanishes.
pub fn condition_number(m: &Array2<f64>) -> Result<f64> {
    let s = singular_values(m)?;
    let smax = s.iter().copied().fold(0.0, f64::max);
    let smin = s.iter().copied().fold(f64::INFINITY, f64::min);
    if smin <= 0.0 {
        Ok(f64::INFINITY)
    } else {
        Ok(smax / smin)
    }
}

/// Number of singular values above `rel_tol · σ_max`.
pub fn numerical_rank(m: &Array2<f64>, rel_tol: f64) -> Result<usize> {
    let s = singular_values(m)?;
    let smax = s.iter().copied().fold(0.0, f64::max);
    if smax == 0.0 {
        return Ok(0);
    }
    Ok(s.iter().filter(|&&v| v > rel_tol * smax).count())
}
