use nalgebra::{DMatrix, DVector};

use super::{Fitted, ShrinkageResult, SiteStats};
use crate::error::{Error, Result};
use crate::geometry::{exp_vec, log_vec, SpdMatrix, SymMatrix};
use crate::optimize::{minimize, Bounds, OptimConfig};
use crate::sure::{LAMBDA_MAX, LAMBDA_MIN};

/// Unbiased per-site variance estimates `Âᵢ = tr Sᵢ / ((n−1) q)`.
pub fn default_variances(stats: &SiteStats) -> Vec<f64> {
    let denom = ((stats.n() - 1) * stats.q()) as f64;
    stats.scatter().iter().map(|s| s.trace() / denom).collect()
}

fn check_a(stats: &SiteStats, a: &[f64]) -> Result<()> {
    if a.len() != stats.p() {
        return Err(Error::DimMismatch {
            expected: stats.p(),
            found: a.len(),
        });
    }
    if let Some(bad) = a.iter().find(|v| !(**v > 0.0) || !v.is_finite()) {
        return Err(Error::BadHyper(format!("variances must be positive, got {bad}")));
    }
    Ok(())
}

fn sure_log(xbar_log: &[DVector<f64>], n: f64, q: f64, a: &[f64], lambda: f64, mu_log: &DVector<f64>) -> f64 {
    let nl = n * lambda;
    let total: f64 = xbar_log
        .iter()
        .zip(a)
        .map(|(x, &ai)| {
            let d2 = (x - mu_log).norm_squared();
            ai / (nl + ai).powi(2) * (ai * d2 + q * (nl * nl - ai * ai) / n)
        })
        .sum();
    total / xbar_log.len() as f64
}

/// SURE for the known-variance shrinkage estimator with per-site variances `a`.
pub fn sure_fm_known_var(stats: &SiteStats, a: &[f64], lambda: f64, mu: &SpdMatrix) -> Result<f64> {
    check_a(stats, a)?;
    if mu.dim() != stats.dim() {
        return Err(Error::DimMismatch {
            expected: stats.dim(),
            found: mu.dim(),
        });
    }
    Ok(sure_log(
        stats.xbar_log(),
        stats.n() as f64,
        stats.q() as f64,
        a,
        lambda,
        &log_vec(mu),
    ))
}

/// For fixed `λ`, SURE is quadratic in `ve(log μ)` and minimized by this
/// weighted mean.
fn best_mu(xbar_log: &[DVector<f64>], n: f64, a: &[f64], lambda: f64) -> DVector<f64> {
    let mut acc = DVector::zeros(xbar_log[0].len());
    let mut wsum = 0.0;
    for (x, &ai) in xbar_log.iter().zip(a) {
        let w = (ai / (n * lambda + ai)).powi(2);
        acc += x * w;
        wsum += w;
    }
    acc / wsum
}

/// Known-variance SURE shrinkage of the site means. `a = None` uses
/// [`default_variances`]. Covariances are reported as the MLEs `Sᵢ/n`.
pub fn estimate_fm_known_var(stats: &SiteStats, a: Option<&[f64]>) -> Result<ShrinkageResult> {
    if stats.p() < 2 {
        return Err(Error::TooFewSamples { need: 2, got: stats.p() });
    }
    let owned;
    let a = match a {
        Some(a) => a,
        None => {
            owned = default_variances(stats);
            &owned
        }
    };
    check_a(stats, a)?;
    let n = stats.n() as f64;
    let q = stats.q() as f64;
    let xs = stats.xbar_log();

    let objective = |u: &DVector<f64>| {
        let lambda = u[0].exp();
        sure_log(xs, n, q, a, lambda, &best_mu(xs, n, a, lambda))
    };
    // λ is the prior variance per coordinate: start from the spread of the
    // X̄ᵢ in excess of the sampling variance
    let mean_a = a.iter().sum::<f64>() / a.len() as f64;
    let grand = best_mu(xs, n, a, 1.0);
    let spread = xs.iter().map(|x| (x - &grand).norm_squared()).sum::<f64>() / (xs.len() as f64 * q);
    let excess = spread - mean_a / n;
    let lambda0 = if excess > 0.0 { excess } else { LAMBDA_MIN };
    let u0 = DVector::from_element(1, lambda0.clamp(LAMBDA_MIN, LAMBDA_MAX).ln());

    let bounds = Bounds {
        lo: DVector::from_element(1, LAMBDA_MIN.ln()),
        hi: DVector::from_element(1, LAMBDA_MAX.ln()),
    };
    let m = minimize(objective, u0, &bounds, &OptimConfig::default());
    let lambda = m.x[0].exp();
    let mu_log = best_mu(xs, n, a, lambda);

    let means = xs
        .iter()
        .zip(a)
        .map(|(x, &ai)| {
            let w = n * lambda / (n * lambda + ai);
            exp_vec(&(x * w + &mu_log * (1.0 - w)))
        })
        .collect::<Result<Vec<_>>>()?;
    let covs = stats
        .scatter()
        .iter()
        .map(|s: &DMatrix<f64>| SymMatrix::new(s / n))
        .collect::<Result<Vec<_>>>()?;
    Ok(ShrinkageResult {
        means,
        covs,
        fitted: Fitted::KnownVar {
            lambda,
            mu: exp_vec(&mu_log)?,
        },
        sure_value: m.value,
        iterations: m.iterations,
        converged: m.converged,
    })
}
