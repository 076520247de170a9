//! Dense numeric kernels: spectral radii, definiteness tests, SPD solves.
//!
//! Every tolerance used by the crate lives here so the numeric policy can be
//! audited in one place. Matrices are dense `f64`; the design envelope is a
//! few hundred rows, so direct factorizations are always affordable and no
//! sparse or iterative fallbacks are provided.

use nalgebra::linalg::Schur;
use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use thiserror::Error;

/// Dense column-major matrix of `f64`. Row-major orderings mentioned in the
/// file format refer to serialization only.
pub type Matrix = DMatrix<f64>;
/// Dense vector of `f64`.
pub type Vector = DVector<f64>;

/// Relative asymmetry above which a matrix is rejected as non-symmetric.
pub const SYMMETRY_TOL: f64 = 1e-12;
/// Positive semidefiniteness floor: `m` passes when its smallest eigenvalue
/// is at least `-PSD_FLOOR * ||m||` with `||m||` the spectral norm.
pub const PSD_FLOOR: f64 = 1e-10;
/// Cholesky pivots below `sqrt(PIVOT_FLOOR * scale)` count as factorization
/// failure, where `scale` is the largest diagonal entry.
pub const PIVOT_FLOOR: f64 = 1e-12;
/// Relative residual guaranteed by [`solve_spd`] and [`invert_spd`] on
/// well-conditioned inputs; tests enforce it.
pub const SPD_RESIDUAL_TOL: f64 = 1e-10;
/// Default successive-change threshold for message fixed-point iteration.
pub const FIXED_POINT_TOL: f64 = 1e-12;
/// Default iteration cap for message fixed-point iteration.
pub const FIXED_POINT_MAX_ITER: usize = 10_000;
/// Default accuracy requested from spectral-radius computations.
pub const SPECTRAL_TOL: f64 = 1e-12;

/// Errors from the dense kernels. Callers wrap these with model context
/// (edge ids, iteration numbers) before surfacing them.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum NumericsError {
    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },
    #[error("matrix is asymmetric beyond tolerance (relative asymmetry {asymmetry:.3e})")]
    Asymmetric { asymmetry: f64 },
    #[error("matrix is not positive definite")]
    NotPositiveDefinite,
    #[error("dimension mismatch: matrix is {rows}x{cols}, right-hand side has {rhs_rows} rows")]
    DimensionMismatch {
        rows: usize,
        cols: usize,
        rhs_rows: usize,
    },
    #[error("tolerance must be positive and finite, got {0}")]
    InvalidTolerance(f64),
    #[error("eigenvalue iteration did not converge within its budget")]
    EigenIterationStalled,
}

/// Largest absolute entry, 0.0 for empty matrices.
pub fn max_abs(m: &Matrix) -> f64 {
    m.iter().fold(0.0_f64, |acc, &x| acc.max(x.abs()))
}

/// `max |m - m^T|` over entries, relative to `max(1, max |m|)`.
pub fn relative_asymmetry(m: &Matrix) -> f64 {
    let mut asym = 0.0_f64;
    for r in 0..m.nrows() {
        for c in (r + 1)..m.ncols() {
            asym = asym.max((m[(r, c)] - m[(c, r)]).abs());
        }
    }
    asym / max_abs(m).max(1.0)
}

/// `(m + m^T) / 2`.
pub fn symmetrize(m: &Matrix) -> Matrix {
    (m + m.transpose()) * 0.5
}

fn require_square(m: &Matrix) -> Result<(), NumericsError> {
    if m.nrows() != m.ncols() {
        return Err(NumericsError::NotSquare {
            rows: m.nrows(),
            cols: m.ncols(),
        });
    }
    Ok(())
}

fn require_symmetric(m: &Matrix) -> Result<Matrix, NumericsError> {
    require_square(m)?;
    let asymmetry = relative_asymmetry(m);
    if asymmetry > SYMMETRY_TOL {
        return Err(NumericsError::Asymmetric { asymmetry });
    }
    Ok(symmetrize(m))
}

/// Cholesky factorization that also rejects pivots below the relative floor,
/// so near-singular matrices are not silently accepted.
pub(crate) fn guarded_cholesky(sym: &Matrix) -> Result<Cholesky<f64, Dyn>, NumericsError> {
    let scale = sym.diagonal().iter().fold(0.0_f64, |a, &d| a.max(d));
    if scale <= 0.0 || !scale.is_finite() {
        return Err(NumericsError::NotPositiveDefinite);
    }
    let chol = Cholesky::new(sym.clone()).ok_or(NumericsError::NotPositiveDefinite)?;
    let floor = (PIVOT_FLOOR * scale).sqrt();
    let l = chol.l_dirty();
    for k in 0..sym.nrows() {
        let pivot = l[(k, k)];
        if !pivot.is_finite() || pivot <= floor {
            return Err(NumericsError::NotPositiveDefinite);
        }
    }
    Ok(chol)
}

/// True when some power of `m` is exactly the zero matrix.
///
/// Squares the matrix `ceil(log2 n)` times with renormalization, so the
/// check costs a handful of products and cannot overflow. Products of
/// structural zeros stay exactly zero in floating point, which makes this
/// decision exact for matrices whose nilpotency comes from their sparsity
/// pattern, e.g. message recursions on trees.
fn vanishing_power(m: &Matrix) -> bool {
    let n = m.nrows();
    let mut p = m.clone();
    let mut covered = 1usize;
    while covered < n {
        let scale = max_abs(&p);
        if scale == 0.0 {
            return true;
        }
        if !scale.is_finite() {
            return false;
        }
        p /= scale;
        p = &p * &p;
        covered *= 2;
    }
    max_abs(&p) == 0.0
}

/// Spectral radius `max |lambda(m)|`.
///
/// Symmetric inputs use the symmetric eigensolver. General square inputs
/// first get the exact nilpotency check (the QR iteration is at its worst
/// on defective matrices with a single zero eigenvalue, and those appear
/// here whenever the model is a tree), then the real Schur form with a
/// bounded iteration budget. `tol` is the accuracy the caller requires;
/// the dense solvers deliver close to machine precision, so any
/// `tol >= 1e-12` is honored.
pub fn spectral_radius(m: &Matrix, tol: f64) -> Result<f64, NumericsError> {
    require_square(m)?;
    if tol <= 0.0 || !tol.is_finite() {
        return Err(NumericsError::InvalidTolerance(tol));
    }
    if m.nrows() == 0 {
        return Ok(0.0);
    }
    if relative_asymmetry(m) <= SYMMETRY_TOL {
        let eig = symmetrize(m).symmetric_eigen();
        Ok(eig.eigenvalues.iter().fold(0.0_f64, |a, &l| a.max(l.abs())))
    } else if vanishing_power(m) {
        Ok(0.0)
    } else {
        let budget = 100 * m.nrows() + 1_000;
        let schur = Schur::try_new(m.clone(), f64::EPSILON, budget)
            .ok_or(NumericsError::EigenIterationStalled)?;
        let eig = schur.complex_eigenvalues();
        Ok(eig.iter().fold(0.0_f64, |a, l| a.max(l.norm())))
    }
}

/// True when `m` is symmetric positive semidefinite up to the documented
/// eigenvalue floor. Asymmetric input is an error, not `false`.
pub fn is_psd(m: &Matrix) -> Result<bool, NumericsError> {
    let sym = require_symmetric(m)?;
    if sym.nrows() == 0 {
        return Ok(true);
    }
    let eig = sym.symmetric_eigen();
    let min = eig.eigenvalues.iter().fold(f64::INFINITY, |a, &l| a.min(l));
    let scale = eig.eigenvalues.iter().fold(0.0_f64, |a, &l| a.max(l.abs()));
    Ok(min >= -PSD_FLOOR * scale.max(1.0))
}

/// True when `m` is symmetric positive definite, decided by guarded Cholesky
/// factorization. Asymmetric input is an error, not `false`.
pub fn is_pd(m: &Matrix) -> Result<bool, NumericsError> {
    let sym = require_symmetric(m)?;
    if sym.nrows() == 0 {
        return Ok(true);
    }
    Ok(guarded_cholesky(&sym).is_ok())
}

/// Solves `m x = rhs` for symmetric positive definite `m`.
pub fn solve_spd(m: &Matrix, rhs: &Vector) -> Result<Vector, NumericsError> {
    let sym = require_symmetric(m)?;
    if sym.nrows() != rhs.nrows() {
        return Err(NumericsError::DimensionMismatch {
            rows: m.nrows(),
            cols: m.ncols(),
            rhs_rows: rhs.nrows(),
        });
    }
    let chol = guarded_cholesky(&sym)?;
    Ok(chol.solve(rhs))
}

/// Solves `m X = rhs` column by column for symmetric positive definite `m`.
pub fn solve_spd_matrix(m: &Matrix, rhs: &Matrix) -> Result<Matrix, NumericsError> {
    let sym = require_symmetric(m)?;
    if sym.nrows() != rhs.nrows() {
        return Err(NumericsError::DimensionMismatch {
            rows: m.nrows(),
            cols: m.ncols(),
            rhs_rows: rhs.nrows(),
        });
    }
    let chol = guarded_cholesky(&sym)?;
    Ok(chol.solve(rhs))
}

/// Inverse of a symmetric positive definite matrix. The result is
/// symmetrized so downstream symmetry checks see an exactly symmetric
/// matrix.
pub fn invert_spd(m: &Matrix) -> Result<Matrix, NumericsError> {
    let sym = require_symmetric(m)?;
    let chol = guarded_cholesky(&sym)?;
    Ok(symmetrize(&chol.inverse()))
}
