use nalgebra::{DMatrix, DVector};

use super::ShrinkageResult;
use crate::error::{Error, Result};
use crate::geometry::{dist_le, SpdMatrix};

/// True site means and covariances of a simulated dataset.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    pub means: Vec<SpdMatrix>,
    pub covs: Vec<SpdMatrix>,
}

/// `(L₁, L₂)`: mean squared Log-Euclidean error of the means and mean squared
/// Frobenius error of the covariances.
pub fn loss_le(result: &ShrinkageResult, truth: &GroundTruth) -> Result<(f64, f64)> {
    let p = truth.means.len();
    for len in [result.means.len(), result.covs.len(), truth.covs.len()] {
        if len != p {
            return Err(Error::DimMismatch { expected: p, found: len });
        }
    }
    if p == 0 {
        return Err(Error::EmptyInput);
    }
    let mut l1 = 0.0;
    for (m, t) in result.means.iter().zip(&truth.means) {
        l1 += dist_le(m, t)?.powi(2);
    }
    let mut l2 = 0.0;
    for (c, t) in result.covs.iter().zip(&truth.covs) {
        if c.dim() != t.dim() {
            return Err(Error::DimMismatch { expected: t.dim(), found: c.dim() });
        }
        l2 += (c.as_matrix() - t.as_matrix()).norm_squared();
    }
    Ok((l1 / p as f64, l2 / p as f64))
}

/// [`loss_le`] on log coordinates and raw covariance matrices.
pub fn loss_log(
    means_log: &[DVector<f64>],
    covs: &[DMatrix<f64>],
    truth_log: &[DVector<f64>],
    truth_covs: &[DMatrix<f64>],
) -> (f64, f64) {
    let p = truth_log.len() as f64;
    let l1 = means_log.iter().zip(truth_log).map(|(a, b)| (a - b).norm_squared()).sum::<f64>();
    let l2 = covs.iter().zip(truth_covs).map(|(a, b)| (a - b).norm_squared()).sum::<f64>();
    (l1 / p, l2 / p)
}
