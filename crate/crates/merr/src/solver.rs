//! Symmetric positive-definite solves with jitter escalation.
//!
//! Set-kernel Gram matrices are routinely near-singular (similar or
//! identical bags), so the factorization retries with a geometrically
//! growing diagonal jitter before giving up.

use nalgebra::{DMatrix, linalg::Cholesky, Dyn};

use crate::error::{Error, Result};

/// Relative residual accepted for a solve, measured against the jittered
/// system.
pub const RESIDUAL_TOL: f64 = 1e-8;

/// Jitter ladder in units of the supplied scale: a plain attempt first,
/// then 1e-12 up to 1e-6 in decade steps.
const JITTER_FACTORS: [f64; 8] = [0.0, 1e-12, 1e-11, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6];

/// Outcome of a successful jittered solve.
#[derive(Debug, Clone)]
pub struct SpdSolve {
    /// Lower-triangular Cholesky factor of the jittered matrix.
    pub factor: DMatrix<f64>,
    /// Solution of `(matrix + jitter I) X = rhs`.
    pub solution: DMatrix<f64>,
    /// Jitter actually applied to the diagonal.
    pub jitter: f64,
}

/// Solve `matrix * X = rhs` for symmetric positive semidefinite `matrix`.
///
/// `jitter_scale` sets the unit of the escalation ladder (callers pass
/// `trace(K)/l` of the unregularized Gram). Each attempt factors the
/// jittered matrix, applies one step of iterative refinement, and accepts
/// only if the relative residual is within [`RESIDUAL_TOL`].
pub fn solve_spd(matrix: &DMatrix<f64>, rhs: &DMatrix<f64>, jitter_scale: f64) -> Result<SpdSolve> {
    let n = matrix.nrows();
    if matrix.ncols() != n {
        return Err(Error::DimensionMismatch { left: n, right: matrix.ncols() });
    }
    if rhs.nrows() != n {
        return Err(Error::DimensionMismatch { left: n, right: rhs.nrows() });
    }
    let scale = if jitter_scale > 0.0 { jitter_scale } else { 1.0 };
    let rhs_norm = rhs.norm();

    let mut max_jitter = 0.0;
    for factor in JITTER_FACTORS {
        let jitter = factor * scale;
        max_jitter = jitter;
        let mut jittered = matrix.clone();
        for i in 0..n {
            jittered[(i, i)] += jitter;
        }
        let Some(chol): Option<Cholesky<f64, Dyn>> = Cholesky::new(jittered.clone()) else {
            continue;
        };
        let mut solution = chol.solve(rhs);
        // One refinement step keeps the residual near machine precision even
        // when the system is poorly conditioned.
        let residual = rhs - &jittered * &solution;
        solution += chol.solve(&residual);
        let residual = rhs - &jittered * &solution;
        if residual.norm() <= RESIDUAL_TOL * rhs_norm.max(f64::MIN_POSITIVE) || rhs_norm == 0.0 {
            return Ok(SpdSolve { factor: chol.l(), solution, jitter });
        }
    }
    Err(Error::SingularSystem { max_jitter })
}
