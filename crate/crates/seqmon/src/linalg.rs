//! Symmetric-matrix numerics shared by all estimators.
//!
//! Design moments and variance blocks are symmetric positive semidefinite by
//! construction but may be exactly singular (an arm not yet observed, a basis
//! function with no support in the data). Coefficients therefore use an
//! eigendecomposition-based pseudoinverse with a fixed relative cutoff, and
//! bootstrap perturbations use a PSD square root with explicit symmetry and
//! definiteness checks.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Relative eigenvalue cutoff for the pseudoinverse.
pub const PINV_RELATIVE_CUTOFF: f64 = 1e-10;
/// Floor applied to the largest eigenvalue before the relative cutoff, so an
/// all-zero matrix inverts to zero instead of dividing by noise.
pub const PINV_EIGENVALUE_FLOOR: f64 = 1e-300;
/// Relative asymmetry accepted by [`psd_sqrt`] before erroring.
pub const SYMMETRY_TOLERANCE: f64 = 1e-8;
/// Eigenvalues in `[-PSD_TOLERANCE * spectral_norm, 0)` are clipped to zero;
/// anything lower is reported as indefinite.
pub const PSD_TOLERANCE: f64 = 1e-10;

/// Eigendecomposition of the symmetrized matrix `(M + Mᵀ)/2`.
fn sym_eigen(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let sym = (m + m.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    (eig.eigenvalues, eig.eigenvectors)
}

/// Moore-Penrose pseudoinverse of a symmetric PSD matrix.
///
/// Eigenvalues at or below `PINV_RELATIVE_CUTOFF * max(lambda_max, floor)` are
/// treated as exact zeros, so rank-deficient moments yield the minimum-norm
/// least-squares coefficients rather than an error.
pub fn pinv_sym(m: &DMatrix<f64>) -> DMatrix<f64> {
    let (vals, vecs) = sym_eigen(m);
    let lambda_max = vals.iter().fold(0.0_f64, |acc, &v| acc.max(v));
    let cutoff = PINV_RELATIVE_CUTOFF * lambda_max.max(PINV_EIGENVALUE_FLOOR);
    let q = m.nrows();
    let mut out = DMatrix::zeros(q, q);
    for i in 0..q {
        let lam = vals[i];
        if lam > cutoff {
            let col = vecs.column(i);
            out.ger(1.0 / lam, &col, &col, 1.0);
        }
    }
    out
}

/// Symmetric PSD square root `R` with `R R = M`.
///
/// Errors if `M` is not square, not symmetric within [`SYMMETRY_TOLERANCE`]
/// (relative to its largest entry), or has an eigenvalue below
/// `-PSD_TOLERANCE * spectral_norm`. Slightly negative eigenvalues inside the
/// tolerance band are clipped to zero, so covariance blocks assembled from
/// many rank-one updates remain usable.
pub fn psd_sqrt(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if m.nrows() != m.ncols() {
        return Err(Error::DimensionMismatch {
            expected: m.nrows(),
            got: m.ncols(),
        });
    }
    let scale = m.iter().fold(0.0_f64, |acc, &v| acc.max(v.abs()));
    let mut asym = 0.0_f64;
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            asym = asym.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    if scale > 0.0 && asym > SYMMETRY_TOLERANCE * scale {
        return Err(Error::NotSymmetric(asym / scale));
    }
    let (vals, vecs) = sym_eigen(m);
    let spectral = vals.iter().fold(0.0_f64, |acc, &v| acc.max(v.abs()));
    let floor = -PSD_TOLERANCE * spectral;
    let q = m.nrows();
    let mut out = DMatrix::zeros(q, q);
    for i in 0..q {
        let lam = vals[i];
        if lam < floor {
            return Err(Error::NotPositiveSemidefinite(lam));
        }
        if lam > 0.0 {
            let col = vecs.column(i);
            out.ger(lam.sqrt(), &col, &col, 1.0);
        }
    }
    Ok(out)
}

/// Quadratic form `vᵀ M v`.
pub fn quad_form(m: &DMatrix<f64>, v: &DVector<f64>) -> f64 {
    v.dot(&(m * v))
}
