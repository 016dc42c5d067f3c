use nalgebra::linalg::Cholesky;
use nalgebra::{DMatrix, Dyn};

use crate::error::{GvdError, Result};

pub const JITTER: f64 = 1e-9;

/// Cholesky factorization, retrying once with `JITTER` on the diagonal.
pub fn cholesky_with_jitter(m: &DMatrix<f64>, context: &str) -> Result<Cholesky<f64, Dyn>> {
    if let Some(ch) = Cholesky::new(m.clone()) {
        return Ok(ch);
    }
    let n = m.nrows();
    log::warn!("{context}: matrix not positive definite, adding jitter {JITTER}");
    Cholesky::new(m + DMatrix::<f64>::identity(n, n) * JITTER).ok_or_else(|| {
        GvdError::numerical(
            context,
            format!("covariance not positive definite even with jitter {JITTER}"),
        )
    })
}

pub fn log_det(ch: &Cholesky<f64, Dyn>) -> f64 {
    2.0 * ch.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>()
}
