use nalgebra::DVector;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use super::mean_se;
use crate::error::{Error, Result};
use crate::geometry::{exp_vec, log_vec, sym_dim, SpdMatrix};
use crate::rng::RngStream;
use crate::tweedie::{
    hotelling_t2_log, to_f_stats, top_fraction_mask, tweedie_iterate, GroupData,
    NoncentralityMap, TweedieConfig,
};

#[derive(Debug, Clone)]
pub struct GroupExperimentConfig {
    /// Image `(H, W)`; site `i` is pixel `(i / W, i % W)`.
    pub grid: (usize, usize),
    pub n1: usize,
    pub n2: usize,
    /// `σᵢ ~ U(lo, hi)`.
    pub sigma_range: (f64, f64),
    /// Sites where group 1 uses `mean_pair.0`; group 2 uses `mean_pair.1` everywhere.
    pub changed_region: Vec<bool>,
    pub mean_pair: (SpdMatrix, SpdMatrix),
    pub seed: u64,
    pub tweedie: TweedieConfig,
}

/// Top-right quarter of an `h × w` image.
pub fn quarter_region(h: usize, w: usize) -> Vec<bool> {
    (0..h * w).map(|i| i / w < h / 2 && i % w >= w / 2).collect()
}

impl Default for GroupExperimentConfig {
    /// 20×20 grid, `n₁ = n₂ = 30`, `σ ~ U(0.3, 0.8)`, top-right quarter
    /// changed from `diag(1, 0.3)` to `diag(0.3, 1)`; selects the top quarter.
    fn default() -> Self {
        GroupExperimentConfig {
            grid: (20, 20),
            n1: 30,
            n2: 30,
            sigma_range: (0.3, 0.8),
            changed_region: quarter_region(20, 20),
            mean_pair: (
                SpdMatrix::from_diagonal(&[0.3, 1.0]).expect("positive diagonal"),
                SpdMatrix::from_diagonal(&[1.0, 0.3]).expect("positive diagonal"),
            ),
            seed: 0,
            tweedie: TweedieConfig {
                top_fraction: 0.25,
                ..TweedieConfig::default()
            },
        }
    }
}

impl GroupExperimentConfig {
    pub fn p(&self) -> usize {
        self.grid.0 * self.grid.1
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.p();
        if self.changed_region.len() != p {
            return Err(Error::DimMismatch {
                expected: p,
                found: self.changed_region.len(),
            });
        }
        let changed = self.changed_region.iter().filter(|&&b| b).count();
        if changed == 0 || changed == p {
            return Err(Error::Config("changed region must be a nonempty proper subset".into()));
        }
        let (lo, hi) = self.sigma_range;
        if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
            return Err(Error::Config(format!("bad sigma range ({lo}, {hi})")));
        }
        if self.mean_pair.0.dim() != self.mean_pair.1.dim() {
            return Err(Error::DimMismatch {
                expected: self.mean_pair.0.dim(),
                found: self.mean_pair.1.dim(),
            });
        }
        if self.n1 < 2 || self.n2 < 2 {
            return Err(Error::TooFewSamples {
                need: 2,
                got: self.n1.min(self.n2),
            });
        }
        to_f_stats(&[], self.n1, self.n2, self.q())?;
        Ok(())
    }

    fn q(&self) -> usize {
        sym_dim(self.mean_pair.0.dim())
    }
}

/// Two simulated groups in log coordinates with the true non-centralities.
#[derive(Debug, Clone)]
pub struct GroupSample {
    pub group1: Vec<Vec<DVector<f64>>>,
    pub group2: Vec<Vec<DVector<f64>>>,
    pub sigma: Vec<f64>,
    pub truth_lambda: Vec<f64>,
}

/// `ve(log Xᵢⱼ) ~ N(ve(log M⁽ᵏ⁾ᵢ), σᵢ² I)`; the true non-centrality is
/// `(1/n₁ + 1/n₂)⁻¹ ‖ve(log M⁽¹⁾ᵢ) − ve(log M⁽²⁾ᵢ)‖² / σᵢ²`.
pub fn gen_group_log(cfg: &GroupExperimentConfig, rep: u32) -> Result<GroupSample> {
    cfg.validate()?;
    let m1 = log_vec(&cfg.mean_pair.0);
    let m2 = log_vec(&cfg.mean_pair.1);
    let (lo, hi) = cfg.sigma_range;
    let harmonic = 1.0 / (1.0 / cfg.n1 as f64 + 1.0 / cfg.n2 as f64);
    let draw = |mean: &DVector<f64>, sigma: f64, rng: &mut rand_chacha::ChaCha8Rng| {
        DVector::from_fn(mean.len(), |k, _| mean[k] + sigma * rng.sample::<f64, _>(StandardNormal))
    };
    let sites: Vec<_> = (0..cfg.p())
        .into_par_iter()
        .map(|i| {
            let mut rng = RngStream::for_site(cfg.seed, rep, i as u32).rng();
            let sigma = if hi > lo { rng.random_range(lo..hi) } else { lo };
            let a = if cfg.changed_region[i] { &m1 } else { &m2 };
            let g1: Vec<_> = (0..cfg.n1).map(|_| draw(a, sigma, &mut rng)).collect();
            let g2: Vec<_> = (0..cfg.n2).map(|_| draw(&m2, sigma, &mut rng)).collect();
            let lambda = harmonic * (a - &m2).norm_squared() / (sigma * sigma);
            (g1, g2, sigma, lambda)
        })
        .collect();
    let mut out = GroupSample {
        group1: Vec::with_capacity(sites.len()),
        group2: Vec::with_capacity(sites.len()),
        sigma: Vec::with_capacity(sites.len()),
        truth_lambda: Vec::with_capacity(sites.len()),
    };
    for (g1, g2, s, l) in sites {
        out.group1.push(g1);
        out.group2.push(g2);
        out.sigma.push(s);
        out.truth_lambda.push(l);
    }
    Ok(out)
}

/// [`gen_group_log`] mapped back to SPD matrices.
pub fn gen_group_images(cfg: &GroupExperimentConfig, rep: u32) -> Result<(GroupData, Vec<f64>)> {
    let s = gen_group_log(cfg, rep)?;
    let to_spd = |g: &[Vec<DVector<f64>>]| {
        g.par_iter()
            .map(|row| row.iter().map(exp_vec).collect::<Result<Vec<_>>>())
            .collect::<Result<Vec<_>>>()
    };
    let data = GroupData::new(to_spd(&s.group1)?, to_spd(&s.group2)?)?;
    Ok((data, s.truth_lambda))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroupMetrics {
    pub f1_tweedie: f64,
    pub f1_mom: f64,
    /// Mean squared error against the true `λᵢ` over the changed region.
    pub mse_tweedie: f64,
    pub mse_mom: f64,
}

/// `2·TP / (|selected| + |truth|)`.
pub fn f1_score(selected: &[bool], truth: &[bool]) -> f64 {
    let tp = selected.iter().zip(truth).filter(|(&s, &t)| s && t).count() as f64;
    let denom = (selected.iter().filter(|&&s| s).count() + truth.iter().filter(|&&t| t).count()) as f64;
    if denom == 0.0 {
        1.0
    } else {
        2.0 * tp / denom
    }
}

/// Hotelling `T²` → F statistics → iterated Tweedie estimates, scored against
/// the known changed region and non-centralities.
pub fn run_group_experiment(cfg: &GroupExperimentConfig, rep: u32) -> Result<(NoncentralityMap, GroupMetrics)> {
    let s = gen_group_log(cfg, rep)?;
    let (t2, _) = hotelling_t2_log(&s.group1, &s.group2)?;
    let f = to_f_stats(&t2, cfg.n1, cfg.n2, cfg.q())?;
    let map = tweedie_iterate(&f, &cfg.tweedie)?;
    let mom_sel = top_fraction_mask(&map.lambda_mom, cfg.tweedie.top_fraction);
    let mse = |est: &[f64]| {
        let errs: Vec<f64> = est
            .iter()
            .zip(&s.truth_lambda)
            .zip(&cfg.changed_region)
            .filter(|(_, &c)| c)
            .map(|((e, t), _)| (e - t).powi(2))
            .collect();
        mean_se(&errs).0
    };
    let metrics = GroupMetrics {
        f1_tweedie: f1_score(&map.selection, &cfg.changed_region),
        f1_mom: f1_score(&mom_sel, &cfg.changed_region),
        mse_tweedie: mse(&map.lambda_tweedie),
        mse_mom: mse(&map.lambda_mom),
    };
    Ok((map, metrics))
}
