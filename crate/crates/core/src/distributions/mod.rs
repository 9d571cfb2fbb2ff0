//! Random matrices on P_N and non-central distribution functions.

mod lognormal;
pub mod noncentral;
mod wishart;

pub use lognormal::{gaussian_vec, sample_log_normal, LogNormalParams};
pub use noncentral::{
    f_to_chi2_quantile, nc_chi2_cdf, nc_chi2_pdf, nc_chi2_quantile, nc_chi2_quantile_upper,
    nc_chi2_sf, nc_f_cdf, nc_f_pdf, nc_f_sf,
};
pub use wishart::{sample_inv_wishart, sample_wishart, WishartParams};

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Lower Cholesky factor of a symmetric matrix, `NotSpd` on failure.
pub(crate) fn cholesky_lower(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    m.clone()
        .cholesky()
        .map(|c| c.l())
        .ok_or_else(|| Error::NotSpd {
            min_eig: m.clone().symmetric_eigenvalues().min(),
            tol: 0.0,
        })
}
