use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use super::mean_se;
use crate::distributions::{cholesky_lower, gaussian_vec, sample_inv_wishart, WishartParams};
use crate::error::{Error, Result};
use crate::geometry::{exp_vec, log_vec, SpdMatrix};
use crate::rng::RngStream;
use crate::sure::{estimate_fm_known_var, estimate_full, GroundTruth, Hyperparams, MinimizeConfig, SiteStats};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Estimator {
    /// Log-Euclidean sample Fréchet mean (the MLE).
    FmLe,
    /// Known-variance SURE shrinkage with `Âᵢ = tr Sᵢ/((n−1)q)`.
    SureFm,
    SureFullFm,
    /// `Sᵢ/n`.
    MleCov,
    SureFullCov,
}

impl Estimator {
    pub const ALL: [Estimator; 5] = [
        Estimator::FmLe,
        Estimator::SureFm,
        Estimator::SureFullFm,
        Estimator::MleCov,
        Estimator::SureFullCov,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Estimator::FmLe => "FM.LE",
            Estimator::SureFm => "SURE-FM",
            Estimator::SureFullFm => "SURE.Full-FM",
            Estimator::MleCov => "MLE-Cov",
            Estimator::SureFullCov => "SURE.Full-Cov",
        }
    }

    fn needs_full(self) -> bool {
        matches!(self, Estimator::SureFullFm | Estimator::SureFullCov)
    }
}

impl fmt::Display for Estimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Estimator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Estimator::ALL
            .into_iter()
            .find(|e| e.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown estimator {s:?}")))
    }
}

#[derive(Debug, Clone)]
pub struct RiskExperimentConfig {
    pub p_grid: Vec<usize>,
    pub n: usize,
    /// Replications `m`.
    pub reps: usize,
    pub prior: Hyperparams,
    pub estimators: Vec<Estimator>,
    pub seed: u64,
}

impl Default for RiskExperimentConfig {
    /// `λ = 10, ν = 15, μ = I₃, Ψ = I₆, n = 10`, `m = 200`, `p ∈ {50, 100, 200, 500}`.
    fn default() -> Self {
        RiskExperimentConfig {
            p_grid: vec![50, 100, 200, 500],
            n: 10,
            reps: 200,
            prior: Hyperparams::new(10.0, SpdMatrix::identity(3), SpdMatrix::identity(6), 15.0)
                .expect("valid default prior"),
            estimators: Estimator::ALL.to_vec(),
            seed: 0,
        }
    }
}

impl RiskExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.prior.validate()?;
        if self.reps == 0 {
            return Err(Error::Config("reps must be at least 1".into()));
        }
        if self.p_grid.is_empty() || self.estimators.is_empty() {
            return Err(Error::Config("p_grid and estimators must be nonempty".into()));
        }
        if let Some(&p) = self.p_grid.iter().find(|&&p| p < 2) {
            return Err(Error::Config(format!("every p must be at least 2, got {p}")));
        }
        let q = self.prior.q();
        if self.n < 2 {
            return Err(Error::BadN { n: self.n, why: "need n >= 2" });
        }
        if self.estimators.iter().any(|e| e.needs_full()) && self.n <= q + 2 {
            return Err(Error::BadN {
                n: self.n,
                why: "SURE.Full needs n > q + 2",
            });
        }
        Ok(())
    }
}

/// One simulated LNIW dataset in log coordinates.
#[derive(Debug, Clone)]
pub struct HierSample {
    /// `obs[i][j] = ve(log Xᵢⱼ)`
    pub obs: Vec<Vec<DVector<f64>>>,
    pub means_log: Vec<DVector<f64>>,
    pub covs: Vec<DMatrix<f64>>,
}

impl HierSample {
    pub fn truth(&self) -> Result<GroundTruth> {
        Ok(GroundTruth {
            means: self.means_log.iter().map(exp_vec).collect::<Result<_>>()?,
            covs: self.covs.iter().map(|c| SpdMatrix::new(c.clone())).collect::<Result<_>>()?,
        })
    }
}

/// Draws `Σᵢ ~ IW(Ψ, ν)`, `ve(log Mᵢ) ~ N(ve(log μ), Σᵢ/λ)` and
/// `ve(log Xᵢⱼ) ~ N(ve(log Mᵢ), Σᵢ)`; site `i` of replication `rep` uses its own stream.
pub fn gen_hier_log(prior: &Hyperparams, n: usize, p: usize, seed: u64, rep: u32) -> Result<HierSample> {
    prior.validate()?;
    let w = WishartParams::new(prior.psi.clone(), prior.nu)?;
    let mu = log_vec(&prior.mu);
    let scale = prior.lambda.sqrt().recip();
    let sites = (0..p)
        .into_par_iter()
        .map(|i| {
            let mut rng = RngStream::for_site(seed, rep, i as u32).rng();
            let sigma = sample_inv_wishart(&w, &mut rng)?.into_matrix();
            let l = cholesky_lower(&sigma)?;
            let m = gaussian_vec(&mu, &(&l * scale), &mut rng);
            let obs: Vec<DVector<f64>> = (0..n).map(|_| gaussian_vec(&m, &l, &mut rng)).collect();
            Ok((obs, m, sigma))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut out = HierSample {
        obs: Vec::with_capacity(p),
        means_log: Vec::with_capacity(p),
        covs: Vec::with_capacity(p),
    };
    for (o, m, s) in sites {
        out.obs.push(o);
        out.means_log.push(m);
        out.covs.push(s);
    }
    Ok(out)
}

/// [`gen_hier_log`] mapped back to SPD matrices.
pub fn gen_hier_dataset(cfg: &RiskExperimentConfig, p: usize, rep: u32) -> Result<(Vec<Vec<SpdMatrix>>, GroundTruth)> {
    let s = gen_hier_log(&cfg.prior, cfg.n, p, cfg.seed, rep)?;
    let data = s
        .obs
        .par_iter()
        .map(|row| row.iter().map(exp_vec).collect::<Result<Vec<_>>>())
        .collect::<Result<Vec<_>>>()?;
    Ok((data, s.truth()?))
}

/// Per-replication losses and their summary for one `(estimator, p)` cell.
#[derive(Debug, Clone)]
pub struct RiskRow {
    pub estimator: Estimator,
    pub p: usize,
    pub mean_loss: f64,
    pub se: f64,
    /// Wall-clock seconds summed over replications.
    pub runtime: f64,
    /// Loss per replication; NaN where the estimator failed.
    pub losses: Vec<f64>,
    pub failures: usize,
}

#[derive(Debug, Clone)]
pub struct RiskTable {
    pub rows: Vec<RiskRow>,
}

impl RiskTable {
    pub fn row(&self, estimator: Estimator, p: usize) -> Option<&RiskRow> {
        self.rows.iter().find(|r| r.estimator == estimator && r.p == p)
    }
}

fn mean_loss(est: &[DVector<f64>], truth: &[DVector<f64>]) -> f64 {
    est.iter().zip(truth).map(|(a, b)| (a - b).norm_squared()).sum::<f64>() / truth.len() as f64
}

fn cov_loss(est: impl Iterator<Item = DMatrix<f64>>, truth: &[DMatrix<f64>]) -> f64 {
    est.zip(truth).map(|(a, b)| (a - b).norm_squared()).sum::<f64>() / truth.len() as f64
}

/// Losses (and seconds spent) of each requested estimator on one dataset.
fn score(sample: &HierSample, n: usize, estimators: &[Estimator]) -> Vec<(f64, f64)> {
    let stats = SiteStats::from_log_obs(&sample.obs);
    let mut out = vec![(f64::NAN, 0.0); estimators.len()];
    let Ok(stats) = stats else { return out };

    let clock = Instant::now();
    let full = estimators
        .iter()
        .any(|e| e.needs_full())
        .then(|| estimate_full(&stats, &MinimizeConfig::default()));
    let full_time = clock.elapsed().as_secs_f64();
    let mut full_charged = false;

    for (slot, &e) in out.iter_mut().zip(estimators) {
        let clock = Instant::now();
        let loss = match e {
            Estimator::FmLe => Some(mean_loss(stats.xbar_log(), &sample.means_log)),
            Estimator::SureFm => estimate_fm_known_var(&stats, None)
                .ok()
                .map(|r| mean_loss(&r.means.iter().map(log_vec).collect::<Vec<_>>(), &sample.means_log)),
            Estimator::MleCov => Some(cov_loss(
                stats.scatter().iter().map(|s| s / n as f64),
                &sample.covs,
            )),
            Estimator::SureFullFm => full
                .as_ref()
                .and_then(|r| r.as_ref().ok())
                .map(|r| mean_loss(&r.means.iter().map(log_vec).collect::<Vec<_>>(), &sample.means_log)),
            Estimator::SureFullCov => full
                .as_ref()
                .and_then(|r| r.as_ref().ok())
                .map(|r| cov_loss(r.covs.iter().map(|c| c.as_matrix().clone()), &sample.covs)),
        };
        let mut secs = clock.elapsed().as_secs_f64();
        if e.needs_full() && !full_charged {
            secs += full_time;
            full_charged = true;
        }
        *slot = (loss.unwrap_or(f64::NAN), secs);
    }
    out
}

/// Average loss of every estimator at every `p`, over `reps` replications.
///
/// An estimator failing on a replication contributes NaN to that cell and is
/// counted in [`RiskRow::failures`].
pub fn run_risk_experiment(cfg: &RiskExperimentConfig) -> Result<RiskTable> {
    cfg.validate()?;
    let mut rows = Vec::new();
    for &p in &cfg.p_grid {
        let per_rep = (0..cfg.reps)
            .into_par_iter()
            .map(|rep| {
                let sample = gen_hier_log(&cfg.prior, cfg.n, p, cfg.seed, rep as u32)?;
                Ok(score(&sample, cfg.n, &cfg.estimators))
            })
            .collect::<Result<Vec<_>>>()?;
        for (k, &e) in cfg.estimators.iter().enumerate() {
            let losses: Vec<f64> = per_rep.iter().map(|r| r[k].0).collect();
            let runtime = per_rep.iter().map(|r| r[k].1).sum();
            let (mean_loss, se) = mean_se(&losses);
            rows.push(RiskRow {
                estimator: e,
                p,
                mean_loss,
                se,
                runtime,
                failures: losses.iter().filter(|l| !l.is_finite()).count(),
                losses,
            });
        }
    }
    Ok(RiskTable { rows })
}

/// `E tr Σᵢ` under `Σᵢ ~ IW(Ψ, ν)`.
#[cfg(test)]
pub(crate) fn expected_trace(prior: &Hyperparams) -> f64 {
    prior.psi.as_matrix().trace() / (prior.nu - crate::geometry::sym_dim(prior.mu.dim()) as f64 - 1.0)
}
