//! Cholesky factorization with jitter escalation.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{GmsError, Result};

/// Diagonal jitter tried, in order, when a covariance matrix fails to
/// factorize.
pub const JITTER_LADDER: [f64; 4] = [0.0, 1e-8, 1e-6, 1e-4];

/// Lower-triangular factor of a symmetric positive definite matrix, plus the
/// jitter that had to be added to its diagonal.
#[derive(Clone, Debug)]
pub struct Factor {
    chol: Cholesky<f64, Dyn>,
    jitter: f64,
}

impl Factor {
    /// Factorizes `k`, escalating the diagonal jitter through
    /// [`JITTER_LADDER`] until the decomposition succeeds.
    pub fn new(k: &DMatrix<f64>) -> Result<Self> {
        if k.iter().any(|v| !v.is_finite()) {
            return Err(GmsError::NotPositiveDefinite { jitter: 0.0 });
        }
        for &jitter in &JITTER_LADDER {
            let mut m = k.clone();
            if jitter > 0.0 {
                for i in 0..m.nrows() {
                    m[(i, i)] += jitter;
                }
            }
            if let Some(chol) = Cholesky::new(m) {
                let ok = chol.l_dirty().diagonal().iter().all(|d| d.is_finite() && *d > 0.0);
                if ok {
                    return Ok(Self { chol, jitter });
                }
            }
        }
        Err(GmsError::NotPositiveDefinite {
            jitter: JITTER_LADDER[JITTER_LADDER.len() - 1],
        })
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn dim(&self) -> usize {
        self.chol.l_dirty().nrows()
    }

    pub fn lower(&self) -> DMatrix<f64> {
        self.chol.l()
    }

    /// `log |K|` from the diagonal of the factor.
    pub fn log_det(&self) -> f64 {
        2.0 * self.chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>()
    }

    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(b)
    }

    pub fn solve_matrix(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        self.chol.solve(b)
    }

    /// Solves `L v = b` for the lower factor `L`.
    pub fn solve_lower(&self, b: &DVector<f64>) -> DVector<f64> {
        let mut v = b.clone();
        self.chol.l_dirty().solve_lower_triangular_mut(&mut v);
        v
    }

    pub fn inverse(&self) -> DMatrix<f64> {
        self.chol.inverse()
    }
}
