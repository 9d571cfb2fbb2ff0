use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use super::cholesky_lower;
use crate::error::{Error, Result};
use crate::geometry::{exp_vec, log_vec, sym_dim, SpdMatrix};

/// Parameters of the Log-Normal distribution on P_N: `ve(log X) ~ N(ve(log M), Σ)`.
#[derive(Debug, Clone)]
pub struct LogNormalParams {
    mean: SpdMatrix,
    cov: SpdMatrix,
    mean_log: DVector<f64>,
    factor: DMatrix<f64>,
}

impl LogNormalParams {
    pub fn new(mean: SpdMatrix, cov: SpdMatrix) -> Result<Self> {
        let q = sym_dim(mean.dim());
        if cov.dim() != q {
            return Err(Error::DimMismatch {
                expected: q,
                found: cov.dim(),
            });
        }
        let factor = cholesky_lower(cov.as_matrix())?;
        let mean_log = log_vec(&mean);
        Ok(LogNormalParams {
            mean,
            cov,
            mean_log,
            factor,
        })
    }

    pub fn mean(&self) -> &SpdMatrix {
        &self.mean
    }

    pub fn cov(&self) -> &SpdMatrix {
        &self.cov
    }

    /// `ve(log M)`.
    pub fn mean_log(&self) -> &DVector<f64> {
        &self.mean_log
    }

    /// Lower Cholesky factor of the covariance.
    pub fn factor(&self) -> &DMatrix<f64> {
        &self.factor
    }

    /// One draw in log coordinates, `ve(log X)`.
    pub fn sample_log<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        gaussian_vec(&self.mean_log, &self.factor, rng)
    }
}

/// `mean + L z` with `z` standard normal.
pub fn gaussian_vec<R: Rng + ?Sized>(
    mean: &DVector<f64>,
    factor: &DMatrix<f64>,
    rng: &mut R,
) -> DVector<f64> {
    let z = DVector::from_fn(mean.len(), |_, _| rng.sample::<f64, _>(StandardNormal));
    let mut out = mean.clone();
    out.gemv(1.0, factor, &z, 1.0);
    out
}

pub fn sample_log_normal<R: Rng + ?Sized>(
    p: &LogNormalParams,
    rng: &mut R,
    count: usize,
) -> Result<Vec<SpdMatrix>> {
    (0..count).map(|_| exp_vec(&p.sample_log(rng))).collect()
}
