use nalgebra::{DMatrix, DVector};

use super::{shrunk_log_means, Aggregates, Fitted, Hyperparams, ShrinkageResult, SiteStats};
use crate::error::{Error, Result};
use crate::geometry::{exp_vec, log_vec, SpdMatrix, SymMatrix};
use crate::optimize::{minimize, Bounds, OptimConfig};

/// Floor applied to the initial `λ` (and bound during optimization).
pub const LAMBDA_MIN: f64 = 1e-8;
pub const LAMBDA_MAX: f64 = 1e8;
/// `ν` is kept above `q + 1 + NU_GAP`.
pub const NU_GAP: f64 = 1e-6;
const NU_EXCESS_MIN: f64 = 1e-8;
const NU_EXCESS_MAX: f64 = 1e6;

fn check_n(n: usize) -> Result<()> {
    if n <= 2 {
        return Err(Error::BadN {
            n,
            why: "SURE needs n >= 3",
        });
    }
    Ok(())
}

/// SURE for the LNIW posterior-mean estimator, from aggregates.
pub(crate) fn sure_from_agg(agg: &Aggregates, n: f64, q: f64, lambda: f64, mu_log: &DVector<f64>, psi: &DMatrix<f64>, nu: f64) -> f64 {
    let p = agg.p;
    let mean_part = ((n - lambda * lambda / n) / (n - 1.0) * agg.sum_tr + lambda * lambda * agg.sum_d2(mu_log))
        / (lambda + n).powi(2);

    let a = nu - q - 1.0;
    let c_s2 = (n - 3.0 + a * a) / ((n + 1.0) * (n - 2.0));
    let c_trsq = ((n - 1.0).powi(2) - a * a) / ((n - 1.0) * (n + 1.0) * (n - 2.0));
    let tr_psi_s = psi.component_mul(&agg.sum_s).sum();
    let cov_part = (c_s2 * agg.sum_tr_s2 + c_trsq * agg.sum_tr_sq - 2.0 * a / (n - 1.0) * tr_psi_s
        + p * psi.norm_squared())
        / (nu + n - q - 2.0).powi(2);

    (mean_part + cov_part) / p
}

/// `SURE(λ, Ψ, ν, μ)`: unbiased estimate of the combined loss of the posterior
/// means at the given hyperparameters.
pub fn sure_full(stats: &SiteStats, h: &Hyperparams) -> Result<f64> {
    check_n(stats.n())?;
    h.check_stats(stats)?;
    Ok(sure_from_agg(
        stats.agg(),
        stats.n() as f64,
        stats.q() as f64,
        h.lambda,
        &log_vec(&h.mu),
        h.psi.as_matrix(),
        h.nu,
    ))
}

/// Moment-matching starting point for [`minimize_sure`].
pub fn init_hyperparams(stats: &SiteStats) -> Result<Hyperparams> {
    let n = stats.n();
    let q = stats.q();
    if n <= q + 2 {
        return Err(Error::BadN {
            n,
            why: "initialization needs n > q + 2",
        });
    }
    let p = stats.p();
    if p < 2 {
        return Err(Error::TooFewSamples { need: 2, got: p });
    }
    let (nf, qf, pf) = (n as f64, q as f64, p as f64);
    let agg = stats.agg();

    let mu_log = agg.grand_mean.clone();
    let mu = exp_vec(&mu_log)?;

    let d = agg.ssd / pf;
    let t = agg.sum_tr / (pf * (nf - 1.0));
    let raw = nf * t / (nf * d - t);
    let lambda = if nf * d <= t || !raw.is_finite() {
        LAMBDA_MAX
    } else {
        raw.clamp(LAMBDA_MIN, LAMBDA_MAX)
    };

    let mut sum_inv = DMatrix::zeros(q, q);
    for (i, s) in stats.scatter().iter().enumerate() {
        let ch = s.clone().cholesky().ok_or(Error::SingularScatter(i))?;
        sum_inv += ch.inverse();
    }
    let ratio = (nf - qf - 2.0) / (pf * pf * qf * (nf - 1.0)) * (&agg.sum_s * &sum_inv).trace();
    let excess = if ratio > 1.0 {
        ((qf + 1.0) / (ratio - 1.0) - NU_GAP).clamp(NU_EXCESS_MIN, NU_EXCESS_MAX)
    } else {
        NU_EXCESS_MAX
    };
    let nu = qf + 1.0 + NU_GAP + excess;

    let psi = SpdMatrix::new(&agg.sum_s * ((nu - qf - 1.0) / (pf * (nf - 1.0))))
        .map_err(|_| Error::SingularScatter(0))?;
    Hyperparams::new(lambda, mu, psi, nu)
}

/// Unconstrained coordinates: `[ln λ, ve(log μ), chol(Ψ) with log diagonal, ln(ν − q − 1 − gap)]`.
struct Param {
    q: usize,
}

impl Param {
    fn len(&self) -> usize {
        1 + self.q + self.q * (self.q + 1) / 2 + 1
    }

    fn encode(&self, h: &Hyperparams) -> Result<DVector<f64>> {
        let q = self.q;
        let mut theta = DVector::zeros(self.len());
        theta[0] = h.lambda.ln();
        theta.rows_mut(1, q).copy_from(&log_vec(&h.mu));
        let l = h
            .psi
            .as_matrix()
            .clone()
            .cholesky()
            .ok_or(Error::BadHyper("psi has no Cholesky factor".into()))?
            .l();
        let mut k = 1 + q;
        for i in 0..q {
            for j in 0..=i {
                theta[k] = if i == j { l[(i, i)].ln() } else { l[(i, j)] };
                k += 1;
            }
        }
        theta[k] = (h.nu - q as f64 - 1.0 - NU_GAP).max(NU_EXCESS_MIN).ln();
        Ok(theta)
    }

    fn psi(&self, theta: &DVector<f64>) -> DMatrix<f64> {
        let q = self.q;
        let mut l = DMatrix::zeros(q, q);
        let mut k = 1 + q;
        for i in 0..q {
            for j in 0..=i {
                l[(i, j)] = if i == j { theta[k].exp() } else { theta[k] };
                k += 1;
            }
        }
        &l * l.transpose()
    }

    fn nu(&self, theta: &DVector<f64>) -> f64 {
        self.q as f64 + 1.0 + NU_GAP + theta[self.len() - 1].exp()
    }

    fn objective(&self, agg: &Aggregates, n: f64, theta: &DVector<f64>) -> f64 {
        let mu = theta.rows(1, self.q).into_owned();
        sure_from_agg(agg, n, self.q as f64, theta[0].exp(), &mu, &self.psi(theta), self.nu(theta))
    }

    fn bounds(&self) -> Bounds {
        let mut b = Bounds::unbounded(self.len());
        b.lo[0] = LAMBDA_MIN.ln();
        b.hi[0] = LAMBDA_MAX.ln();
        let last = self.len() - 1;
        b.lo[last] = NU_EXCESS_MIN.ln();
        b.hi[last] = NU_EXCESS_MAX.ln();
        b
    }

    fn decode(&self, theta: &DVector<f64>) -> Result<Hyperparams> {
        let mu = exp_vec(&theta.rows(1, self.q).into_owned())?;
        let psi = SpdMatrix::new(self.psi(theta))?;
        Hyperparams::new(theta[0].exp(), mu, psi, self.nu(theta))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MinimizeConfig {
    pub optim: OptimConfig,
    /// Also start from `λ₀/10` and `10λ₀` and keep the best run.
    pub multi_start: bool,
}

/// Outcome of [`minimize_sure`].
#[derive(Debug, Clone)]
pub struct SureFit {
    pub hyper: Hyperparams,
    pub init: Hyperparams,
    pub sure_value: f64,
    pub init_value: f64,
    pub iterations: usize,
    pub converged: bool,
}

pub fn minimize_sure(stats: &SiteStats) -> Result<SureFit> {
    minimize_sure_with(stats, &MinimizeConfig::default())
}

/// Minimizes SURE over `(λ, μ, Ψ, ν)` starting at [`init_hyperparams`].
///
/// A fit that misses the gradient tolerance is still returned with
/// `converged = false`.
pub fn minimize_sure_with(stats: &SiteStats, cfg: &MinimizeConfig) -> Result<SureFit> {
    check_n(stats.n())?;
    let init = init_hyperparams(stats)?;
    let param = Param { q: stats.q() };
    let agg = stats.agg();
    let n = stats.n() as f64;
    let bounds = param.bounds();
    let theta0 = param.encode(&init)?;
    let init_value = param.objective(agg, n, &theta0);

    let mut starts = vec![theta0.clone()];
    if cfg.multi_start {
        for shift in [-(10f64.ln()), 10f64.ln()] {
            let mut t = theta0.clone();
            t[0] = (t[0] + shift).clamp(bounds.lo[0], bounds.hi[0]);
            starts.push(t);
        }
    }

    let mut best: Option<crate::optimize::Minimum> = None;
    for start in starts {
        let m = minimize(|t| param.objective(agg, n, t), start, &bounds, &cfg.optim);
        if best.as_ref().is_none_or(|b| m.value < b.value) {
            best = Some(m);
        }
    }
    let best = best.expect("at least one start");
    Ok(SureFit {
        hyper: param.decode(&best.x)?,
        init,
        sure_value: best.value,
        init_value,
        iterations: best.iterations,
        converged: best.converged,
    })
}

/// Posterior means `M̂ᵢ = exp((n log X̄ᵢ + λ log μ)/(λ+n))` and
/// `Σ̂ᵢ = (Ψ + Sᵢ)/(ν + n − q − 2)`.
pub fn posterior_estimates(stats: &SiteStats, h: &Hyperparams) -> Result<ShrinkageResult> {
    h.check_stats(stats)?;
    let n = stats.n() as f64;
    let q = stats.q() as f64;
    let means = shrunk_log_means(stats.xbar_log(), n, h.lambda, &log_vec(&h.mu))
        .iter()
        .map(exp_vec)
        .collect::<Result<Vec<_>>>()?;
    let denom = h.nu + n - q - 2.0;
    let covs = stats
        .scatter()
        .iter()
        .map(|s| SymMatrix::new((h.psi.as_matrix() + s) / denom))
        .collect::<Result<Vec<_>>>()?;
    let sure_value = if stats.n() > 2 { sure_full(stats, h)? } else { f64::NAN };
    Ok(ShrinkageResult {
        means,
        covs,
        fitted: Fitted::Full(h.clone()),
        sure_value,
        iterations: 0,
        converged: true,
    })
}

/// SURE-minimizing shrinkage estimates of every `Mᵢ` and `Σᵢ`.
pub fn estimate_full(stats: &SiteStats, cfg: &MinimizeConfig) -> Result<ShrinkageResult> {
    let fit = minimize_sure_with(stats, cfg)?;
    let mut res = posterior_estimates(stats, &fit.hyper)?;
    res.iterations = fit.iterations;
    res.converged = fit.converged;
    Ok(res)
}
