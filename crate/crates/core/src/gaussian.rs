//! Multivariate normal helpers on top of a cached Cholesky factor.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Cholesky factorisation of a symmetric positive definite matrix with its
/// inverse and log-determinant precomputed.
#[derive(Debug, Clone)]
pub struct SpdFactor {
    chol: Cholesky<f64, Dyn>,
    inverse: DMatrix<f64>,
    log_det: f64,
}

impl SpdFactor {
    pub fn new(matrix: &DMatrix<f64>) -> Result<Self> {
        if !matrix.is_square() || matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::SingularCovariance);
        }
        let chol = Cholesky::new(matrix.clone()).ok_or(Error::SingularCovariance)?;
        let l = chol.l_dirty();
        let mut log_det = 0.0;
        for i in 0..matrix.nrows() {
            let d = l[(i, i)];
            if !(d > 0.0) {
                return Err(Error::SingularCovariance);
            }
            log_det += 2.0 * d.ln();
        }
        let inverse = chol.inverse();
        Ok(Self { chol, inverse, log_det })
    }

    pub fn dim(&self) -> usize {
        self.inverse.nrows()
    }

    pub fn lower(&self) -> DMatrix<f64> {
        self.chol.l()
    }

    pub fn inverse(&self) -> &DMatrix<f64> {
        &self.inverse
    }

    pub fn log_det(&self) -> f64 {
        self.log_det
    }

    /// Mahalanobis form `dᵀ Σ⁻¹ d`.
    pub fn quad_form(&self, d: &DVector<f64>) -> f64 {
        let mut v = d.clone();
        self.chol.l_dirty().solve_lower_triangular_mut(&mut v);
        v.norm_squared()
    }

    /// Log density of `N(mean, scale·Σ)` at `x`.
    pub fn log_density_scaled(&self, x: &DVector<f64>, mean: &DVector<f64>, scale: f64) -> f64 {
        let d = self.dim() as f64;
        let q = self.quad_form(&(x - mean)) / scale;
        -0.5 * (q + d * (LN_2PI + scale.ln()) + self.log_det)
    }
}
