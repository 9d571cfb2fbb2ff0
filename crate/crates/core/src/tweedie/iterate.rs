use rayon::prelude::*;

use super::lindsey::{default_bins, lindsey_fit, LogDensityPoly};
use super::{mom_noncentrality, FStatistics};
use crate::distributions::f_to_chi2_quantile;
use crate::error::{Error, Result};

/// Smallest accepted value of `1 + 2l′(y)`.
pub const DENOM_EPS: f64 = 1e-3;

/// Posterior mean of the non-centrality of a `χ²_{dof}(λ)` observation `y`
/// under the marginal log-density `ldp`, truncated at 0:
///
/// ```text
/// E(λ | y) = [(y − ν + 4) + 2y(2l″/(1 + 2l′) + l′)] (1 + 2l′)
/// ```
pub fn tweedie_chi2(y: f64, dof: f64, ldp: &LogDensityPoly) -> Result<f64> {
    let d1 = ldp.dl(y);
    let d2 = ldp.d2l(y);
    let denom = 1.0 + 2.0 * d1;
    if !(denom > DENOM_EPS) {
        return Err(Error::DenominatorNearZero(denom));
    }
    let v = ((y - dof + 4.0) + 2.0 * y * (2.0 * d2 / denom + d1)) * denom;
    Ok(v.max(0.0))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TweedieConfig {
    /// Polynomial degree `K` of the log-density.
    pub degree: usize,
    /// Histogram bins; `None` uses [`default_bins`].
    pub bins: Option<usize>,
    pub max_iters: usize,
    /// Stop once `max |λ⁽ᵗ⁺¹⁾ − λ⁽ᵗ⁾| < tol`.
    pub tol: f64,
    pub top_fraction: f64,
}

impl Default for TweedieConfig {
    fn default() -> Self {
        TweedieConfig {
            degree: 5,
            bins: None,
            max_iters: 50,
            tol: 1e-3,
            top_fraction: 0.01,
        }
    }
}

/// MOM and Tweedie non-centrality estimates per site.
#[derive(Debug, Clone, PartialEq)]
pub struct NoncentralityMap {
    pub lambda_mom: Vec<f64>,
    pub lambda_tweedie: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Last `max |λ⁽ᵗ⁺¹⁾ − λ⁽ᵗ⁾|`.
    pub max_change: f64,
    /// Top `top_fraction` of sites by Tweedie estimate.
    pub selection: Vec<bool>,
    /// Sites whose last update fell back to MOM (`1 + 2l′ ≤ DENOM_EPS`).
    pub fallback: Vec<bool>,
}

/// Marks the `⌈fraction·p⌉` largest values; ties go to the lower index.
pub fn top_fraction_mask(values: &[f64], fraction: f64) -> Vec<bool> {
    let p = values.len();
    let k = ((fraction * p as f64).ceil().max(0.0) as usize).min(p);
    let mut idx: Vec<usize> = (0..p).collect();
    idx.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    let mut mask = vec![false; p];
    for &i in &idx[..k] {
        mask[i] = true;
    }
    mask
}

/// Iterates quantile transform → Lindsey fit → Tweedie update, starting from
/// the MOM estimates.
pub fn tweedie_iterate(f: &FStatistics, cfg: &TweedieConfig) -> Result<NoncentralityMap> {
    let p = f.z.len();
    if p < 50 {
        return Err(Error::TooFewSamples { need: 50, got: p });
    }
    let mom = mom_noncentrality(f)?;
    let bins = cfg.bins.unwrap_or_else(|| default_bins(p));

    let mut lambda = mom.clone();
    let mut fallback = vec![false; p];
    let mut iterations = 0;
    let mut converged = false;
    let mut max_change = f64::INFINITY;
    while iterations < cfg.max_iters {
        iterations += 1;
        let y = f
            .z
            .par_iter()
            .zip(lambda.par_iter())
            .map(|(&z, &l)| f_to_chi2_quantile(z, f.dof1, f.dof2, l))
            .collect::<Result<Vec<f64>>>()?;
        let fit = lindsey_fit(&y, cfg.degree, bins)?;
        let updates: Vec<(f64, bool)> = y
            .par_iter()
            .zip(mom.par_iter())
            .map(|(&yi, &m)| match tweedie_chi2(yi, f.dof1, &fit) {
                Ok(v) => Ok((v, false)),
                Err(Error::DenominatorNearZero(_)) => Ok((m, true)),
                Err(e) => Err(e),
            })
            .collect::<Result<_>>()?;
        max_change = updates
            .iter()
            .zip(&lambda)
            .map(|((new, _), old)| (new - old).abs())
            .fold(0.0, f64::max);
        for (i, (v, fb)) in updates.into_iter().enumerate() {
            lambda[i] = v;
            fallback[i] = fb;
        }
        if max_change < cfg.tol {
            converged = true;
            break;
        }
    }

    Ok(NoncentralityMap {
        selection: top_fraction_mask(&lambda, cfg.top_fraction),
        lambda_mom: mom,
        lambda_tweedie: lambda,
        iterations,
        converged,
        max_change,
        fallback,
    })
}
