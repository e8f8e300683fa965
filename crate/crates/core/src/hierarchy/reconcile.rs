use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Weight given to the diagonal when shrinking an error covariance.
pub const DEFAULT_MINT_SHRINKAGE: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "lowercase")]
pub enum ReconcileMethod {
    Ols,
    Mint {
        #[serde(default = "default_shrinkage")]
        shrinkage: f64,
    },
}

fn default_shrinkage() -> f64 {
    DEFAULT_MINT_SHRINKAGE
}

/// `S(SᵀS)⁻¹Sᵀ`.
pub fn ols_projection(s: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let sts = s.transpose() * s;
    let inv = sts
        .cholesky()
        .ok_or(Error::RankDeficient { condition: f64::INFINITY })?
        .inverse();
    Ok(s * inv * s.transpose())
}

/// `S(SᵀW⁻¹S)⁻¹SᵀW⁻¹`.
pub fn mint_projection(s: &DMatrix<f64>, w: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if w.nrows() != s.nrows() || w.ncols() != s.nrows() {
        return Err(Error::shape(
            format!("{0}×{0} covariance", s.nrows()),
            format!("{}×{}", w.nrows(), w.ncols()),
        ));
    }
    let w_inv = w
        .clone()
        .cholesky()
        .ok_or_else(|| Error::NonFinite("error covariance is not positive definite".into()))?
        .inverse();
    let inner = (s.transpose() * &w_inv * s)
        .cholesky()
        .ok_or(Error::RankDeficient { condition: f64::INFINITY })?
        .inverse();
    Ok(s * inner * s.transpose() * w_inv)
}

/// `(1 − a)W + a·diag(W)`.
pub fn shrink_toward_diagonal(w: &DMatrix<f64>, intensity: f64) -> DMatrix<f64> {
    let d = DMatrix::from_diagonal(&w.diagonal());
    w * (1.0 - intensity) + d * intensity
}

/// Sample covariance (divisor `n − 1`) of residual columns.
pub fn residual_covariance(residuals: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = residuals.nrows();
    if n < 2 {
        return Err(Error::Data("covariance needs at least two residual rows".into()));
    }
    let mean = residuals.row_mean();
    let mut centered = residuals.clone();
    for mut row in centered.row_iter_mut() {
        row -= &mean;
    }
    Ok(centered.transpose() * centered / (n as f64 - 1.0))
}

/// Projects each row of `base` (`n × ℓ1`) onto the coherent subspace.
/// MinT estimates its covariance from `residuals` (`m × ℓ1` training
/// errors of the base forecasts).
pub fn reconcile(
    base: &DMatrix<f64>,
    s: &DMatrix<f64>,
    method: ReconcileMethod,
    residuals: Option<&DMatrix<f64>>,
) -> Result<DMatrix<f64>> {
    if base.ncols() != s.nrows() {
        return Err(Error::shape(format!("{} node columns", s.nrows()), base.ncols()));
    }
    let p = match method {
        ReconcileMethod::Ols => ols_projection(s)?,
        ReconcileMethod::Mint { shrinkage } => {
            if !(0.0..=1.0).contains(&shrinkage) {
                return Err(Error::Config(format!("shrinkage {shrinkage} outside [0, 1]")));
            }
            let r = residuals.ok_or_else(|| Error::Config("mint needs training residuals".into()))?;
            if r.ncols() != s.nrows() {
                return Err(Error::shape(format!("{} residual columns", s.nrows()), r.ncols()));
            }
            let w = shrink_toward_diagonal(&residual_covariance(r)?, shrinkage);
            mint_projection(s, &w)?
        }
    };
    Ok(base * p.transpose())
}
