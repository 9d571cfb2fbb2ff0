//! SURE-tuned shrinkage of per-site Fréchet means and covariances.
//!
//! Every statistic is computed on log coordinates `X̃ = ve(log X)`. The full
//! SURE objective only touches the data through a handful of sums (see
//! [`Aggregates`]), so one evaluation costs `O(q²)` regardless of `p`.

mod full;
mod known_var;
mod loss;

pub use full::{
    estimate_full, init_hyperparams, minimize_sure, minimize_sure_with, posterior_estimates,
    sure_full, MinimizeConfig, SureFit, LAMBDA_MAX, LAMBDA_MIN, NU_GAP,
};
pub use known_var::{default_variances, estimate_fm_known_var, sure_fm_known_var};
pub use loss::{loss_le, loss_log, GroundTruth};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{exp_vec, log_vec, matrix_dim, sym_dim, SpdMatrix, SymMatrix};

/// Per-site sufficient statistics: Log-Euclidean sample means `X̄ᵢ` and
/// scatter matrices `Sᵢ = Σⱼ (X̃ᵢⱼ − X̄̃ᵢ)(X̃ᵢⱼ − X̄̃ᵢ)ᵀ`.
#[derive(Debug, Clone)]
pub struct SiteStats {
    n: usize,
    dim: usize,
    xbar_log: Vec<DVector<f64>>,
    scatter: Vec<DMatrix<f64>>,
    agg: Aggregates,
}

/// Sums over sites that the full SURE depends on.
#[derive(Debug, Clone)]
pub(crate) struct Aggregates {
    pub p: f64,
    pub sum_tr: f64,
    pub grand_mean: DVector<f64>,
    /// `Σ ‖X̄̃ᵢ − grand_mean‖²`
    pub ssd: f64,
    pub sum_tr_s2: f64,
    pub sum_tr_sq: f64,
    pub sum_s: DMatrix<f64>,
}

impl Aggregates {
    fn new(xbar_log: &[DVector<f64>], scatter: &[DMatrix<f64>]) -> Self {
        let p = xbar_log.len();
        let q = xbar_log[0].len();
        let mut grand_mean = DVector::zeros(q);
        for x in xbar_log {
            grand_mean += x;
        }
        grand_mean /= p as f64;
        let ssd = xbar_log.iter().map(|x| (x - &grand_mean).norm_squared()).sum();
        let mut sum_s = DMatrix::zeros(q, q);
        let (mut sum_tr, mut sum_tr_s2, mut sum_tr_sq) = (0.0, 0.0, 0.0);
        for s in scatter {
            let tr = s.trace();
            sum_tr += tr;
            sum_tr_sq += tr * tr;
            sum_tr_s2 += s.norm_squared();
            sum_s += s;
        }
        Aggregates {
            p: p as f64,
            sum_tr,
            grand_mean,
            ssd,
            sum_tr_s2,
            sum_tr_sq,
            sum_s,
        }
    }

    /// `Σᵢ d²(X̄ᵢ, μ)` given `ve(log μ)`.
    pub fn sum_d2(&self, mu_log: &DVector<f64>) -> f64 {
        self.ssd + self.p * (&self.grand_mean - mu_log).norm_squared()
    }
}

fn site_moments(obs: &[DVector<f64>]) -> (DVector<f64>, DMatrix<f64>) {
    let q = obs[0].len();
    let mut mean = DVector::zeros(q);
    for x in obs {
        mean += x;
    }
    mean /= obs.len() as f64;
    let mut s = DMatrix::zeros(q, q);
    for x in obs {
        let c = x - &mean;
        s.syger(1.0, &c, &c, 1.0);
    }
    s.fill_upper_triangle_with_lower_triangle();
    (mean, s)
}

impl SiteStats {
    /// Builds statistics from log coordinates: `obs[i][j] = ve(log Xᵢⱼ)`.
    pub fn from_log_obs(obs: &[Vec<DVector<f64>>]) -> Result<Self> {
        let first = obs.first().ok_or(Error::EmptyInput)?;
        let n = first.len();
        if n < 2 {
            return Err(Error::TooFewSamples { need: 2, got: n });
        }
        let q = first[0].len();
        let dim = matrix_dim(q).ok_or(Error::BadLength(q))?;
        for row in obs {
            if row.len() != n {
                return Err(Error::DimMismatch {
                    expected: n,
                    found: row.len(),
                });
            }
            if let Some(bad) = row.iter().find(|x| x.len() != q) {
                return Err(Error::DimMismatch {
                    expected: q,
                    found: bad.len(),
                });
            }
        }
        let (xbar_log, scatter): (Vec<_>, Vec<_>) =
            obs.par_iter().map(|row| site_moments(row)).unzip();
        let agg = Aggregates::new(&xbar_log, &scatter);
        Ok(SiteStats {
            n,
            dim,
            xbar_log,
            scatter,
            agg,
        })
    }

    /// Assembles statistics from precomputed means (log coordinates) and
    /// scatter matrices. Accepts any `n ≥ 1`.
    pub fn from_parts(n: usize, xbar_log: Vec<DVector<f64>>, scatter: Vec<DMatrix<f64>>) -> Result<Self> {
        if n == 0 {
            return Err(Error::TooFewSamples { need: 1, got: 0 });
        }
        let first = xbar_log.first().ok_or(Error::EmptyInput)?;
        let q = first.len();
        let dim = matrix_dim(q).ok_or(Error::BadLength(q))?;
        if scatter.len() != xbar_log.len() {
            return Err(Error::DimMismatch {
                expected: xbar_log.len(),
                found: scatter.len(),
            });
        }
        for (x, s) in xbar_log.iter().zip(&scatter) {
            if x.len() != q {
                return Err(Error::DimMismatch { expected: q, found: x.len() });
            }
            if s.nrows() != q || s.ncols() != q {
                return Err(Error::DimMismatch { expected: q, found: s.nrows() });
            }
        }
        let agg = Aggregates::new(&xbar_log, &scatter);
        Ok(SiteStats {
            n,
            dim,
            xbar_log,
            scatter,
            agg,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.xbar_log.len()
    }

    /// Matrix dimension `N`.
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn q(&self) -> usize {
        sym_dim(self.dim)
    }

    /// `ve(log X̄ᵢ)` for each site.
    pub fn xbar_log(&self) -> &[DVector<f64>] {
        &self.xbar_log
    }

    /// The sample Fréchet means `X̄ᵢ`.
    pub fn xbar(&self) -> Result<Vec<SpdMatrix>> {
        self.xbar_log.iter().map(exp_vec).collect()
    }

    pub fn scatter(&self) -> &[DMatrix<f64>] {
        &self.scatter
    }

    pub(crate) fn agg(&self) -> &Aggregates {
        &self.agg
    }
}

/// Computes [`SiteStats`] from `data[i][j] = Xᵢⱼ`.
pub fn site_stats(data: &[Vec<SpdMatrix>]) -> Result<SiteStats> {
    let first = data.first().ok_or(Error::EmptyInput)?;
    let n = first.len();
    if n < 2 {
        return Err(Error::TooFewSamples { need: 2, got: n });
    }
    let dim = first[0].dim();
    let logs = data
        .par_iter()
        .map(|row| {
            row.iter()
                .map(|x| {
                    if x.dim() != dim {
                        return Err(Error::DimMismatch {
                            expected: dim,
                            found: x.dim(),
                        });
                    }
                    Ok(log_vec(x))
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    SiteStats::from_log_obs(&logs)
}

/// LNIW hyperparameters `(λ, μ, Ψ, ν)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Hyperparams {
    pub lambda: f64,
    pub mu: SpdMatrix,
    pub psi: SpdMatrix,
    pub nu: f64,
}

impl Hyperparams {
    pub fn new(lambda: f64, mu: SpdMatrix, psi: SpdMatrix, nu: f64) -> Result<Self> {
        let h = Hyperparams { lambda, mu, psi, nu };
        h.validate()?;
        Ok(h)
    }

    pub fn q(&self) -> usize {
        sym_dim(self.mu.dim())
    }

    pub fn validate(&self) -> Result<()> {
        let q = self.q();
        if !(self.lambda > 0.0) || !self.lambda.is_finite() {
            return Err(Error::BadHyper(format!("lambda must be positive, got {}", self.lambda)));
        }
        if !(self.nu > q as f64 + 1.0) || !self.nu.is_finite() {
            return Err(Error::BadHyper(format!(
                "nu must exceed q + 1 = {}, got {}",
                q + 1,
                self.nu
            )));
        }
        if self.psi.dim() != q {
            return Err(Error::DimMismatch {
                expected: q,
                found: self.psi.dim(),
            });
        }
        Ok(())
    }

    fn check_stats(&self, stats: &SiteStats) -> Result<()> {
        self.validate()?;
        if self.mu.dim() != stats.dim() {
            return Err(Error::DimMismatch {
                expected: stats.dim(),
                found: self.mu.dim(),
            });
        }
        Ok(())
    }
}

/// Tuning parameters chosen for a shrinkage fit.
#[derive(Debug, Clone, PartialEq)]
pub enum Fitted {
    /// Mean-only shrinkage with known per-site variances.
    KnownVar { lambda: f64, mu: SpdMatrix },
    Full(Hyperparams),
}

impl Fitted {
    pub fn lambda(&self) -> f64 {
        match self {
            Fitted::KnownVar { lambda, .. } => *lambda,
            Fitted::Full(h) => h.lambda,
        }
    }

    pub fn mu(&self) -> &SpdMatrix {
        match self {
            Fitted::KnownVar { mu, .. } => mu,
            Fitted::Full(h) => &h.mu,
        }
    }
}

/// Shrinkage estimates `M̂ᵢ`, `Σ̂ᵢ` together with the tuning that produced them.
///
/// `covs` are symmetric but only guaranteed SPD for the full estimator; the
/// MLE returned by the known-variance fit is singular when `n ≤ q`.
#[derive(Debug, Clone)]
pub struct ShrinkageResult {
    pub means: Vec<SpdMatrix>,
    pub covs: Vec<SymMatrix>,
    pub fitted: Fitted,
    pub sure_value: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl ShrinkageResult {
    /// Turns a non-converged fit into `OptFailed`.
    pub fn require_converged(self) -> Result<Self> {
        if self.converged {
            Ok(self)
        } else {
            Err(Error::OptFailed(format!(
                "no convergence after {} iterations (SURE = {})",
                self.iterations, self.sure_value
            )))
        }
    }
}

/// `ve(log M̂ᵢ) = (n X̄̃ᵢ + λ μ̃)/(λ + n)`.
pub(crate) fn shrunk_log_means(xbar_log: &[DVector<f64>], n: f64, lambda: f64, mu_log: &DVector<f64>) -> Vec<DVector<f64>> {
    let w = n / (lambda + n);
    xbar_log.iter().map(|x| x * w + mu_log * (1.0 - w)).collect()
}
