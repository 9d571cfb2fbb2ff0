//! TOML run configuration. Unknown keys are errors.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::Deserialize;

use super::tensor::SpdCheck;
use crate::error::{Error, Result};
use crate::geometry::SpdMatrix;
use crate::sim::{quarter_region, Estimator, GroupExperimentConfig, RiskExperimentConfig};
use crate::sure::Hyperparams;
use crate::tweedie::TweedieConfig;

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub output: Option<PathBuf>,
    pub risk: Option<RiskSection>,
    pub groups: Option<GroupsSection>,
    pub estimate: Option<EstimateSection>,
    pub groupdiff: Option<GroupdiffSection>,
    pub generate: Option<GenerateSection>,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        RunConfig::parse(&text)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum SpdCheckMode {
    #[default]
    Reject,
    Warn,
}

impl From<SpdCheckMode> for SpdCheck {
    fn from(m: SpdCheckMode) -> Self {
        match m {
            SpdCheckMode::Reject => SpdCheck::Reject,
            SpdCheckMode::Warn => SpdCheck::Warn,
        }
    }
}

fn matrix(rows: &[Vec<f64>], what: &str) -> Result<SpdMatrix> {
    let n = rows.len();
    if n == 0 || rows.iter().any(|r| r.len() != n) {
        return Err(Error::Config(format!("{what} must be a nonempty square matrix")));
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    SpdMatrix::new(DMatrix::from_row_slice(n, n, &flat)).map_err(|e| Error::Config(format!("{what}: {e}")))
}

/// Tweedie iteration settings shared by `[groups]` and `[groupdiff]`.
#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TweedieSection {
    pub degree: usize,
    pub bins: Option<usize>,
    pub max_iters: usize,
    pub tol: f64,
}

impl Default for TweedieSection {
    fn default() -> Self {
        let d = TweedieConfig::default();
        TweedieSection {
            degree: d.degree,
            bins: d.bins,
            max_iters: d.max_iters,
            tol: d.tol,
        }
    }
}

impl TweedieSection {
    pub fn to_config(self, top_fraction: f64) -> Result<TweedieConfig> {
        if !(0.0..=1.0).contains(&top_fraction) {
            return Err(Error::Config(format!("top_fraction {top_fraction} outside [0, 1]")));
        }
        if self.max_iters == 0 || !(self.tol > 0.0) {
            return Err(Error::Config("max_iters and tol must be positive".into()));
        }
        Ok(TweedieConfig {
            degree: self.degree,
            bins: self.bins,
            max_iters: self.max_iters,
            tol: self.tol,
            top_fraction,
        })
    }
}

/// `[risk]`: the LNIW risk experiment. Matrices are given as lists of rows.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RiskSection {
    pub p_grid: Vec<usize>,
    pub n: usize,
    pub reps: usize,
    pub lambda: f64,
    pub nu: f64,
    pub mu: Option<Vec<Vec<f64>>>,
    pub psi: Option<Vec<Vec<f64>>>,
    pub estimators: Vec<String>,
}

impl Default for RiskSection {
    fn default() -> Self {
        let d = RiskExperimentConfig::default();
        RiskSection {
            p_grid: d.p_grid,
            n: d.n,
            reps: d.reps,
            lambda: d.prior.lambda,
            nu: d.prior.nu,
            mu: None,
            psi: None,
            estimators: d.estimators.iter().map(|e| e.name().to_string()).collect(),
        }
    }
}

impl RiskSection {
    pub fn to_config(&self, seed: u64) -> Result<RiskExperimentConfig> {
        let mu = match &self.mu {
            Some(rows) => matrix(rows, "risk.mu")?,
            None => SpdMatrix::identity(3),
        };
        let q = mu.dim() * (mu.dim() + 1) / 2;
        let psi = match &self.psi {
            Some(rows) => matrix(rows, "risk.psi")?,
            None => SpdMatrix::identity(q),
        };
        let prior = Hyperparams::new(self.lambda, mu, psi, self.nu).map_err(|e| Error::Config(e.to_string()))?;
        let estimators = self.estimators.iter().map(|s| s.parse()).collect::<Result<Vec<Estimator>>>()?;
        let cfg = RiskExperimentConfig {
            p_grid: self.p_grid.clone(),
            n: self.n,
            reps: self.reps,
            prior,
            estimators,
            seed,
        };
        cfg.validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(cfg)
    }
}

/// `[groups]`: the two-group image experiment.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GroupsSection {
    pub grid: [usize; 2],
    pub n1: usize,
    pub n2: usize,
    pub sigma_range: [f64; 2],
    /// Changed sites as row-major indices; default is the top-right quarter.
    pub changed_sites: Option<Vec<usize>>,
    pub mean1: Option<Vec<Vec<f64>>>,
    pub mean2: Option<Vec<Vec<f64>>>,
    /// Number of seeded replications.
    pub reps: usize,
    pub top_fraction: f64,
    pub smooth: usize,
    #[serde(flatten)]
    pub tweedie: TweedieSection,
}

impl Default for GroupsSection {
    fn default() -> Self {
        let d = GroupExperimentConfig::default();
        GroupsSection {
            grid: [d.grid.0, d.grid.1],
            n1: d.n1,
            n2: d.n2,
            sigma_range: [d.sigma_range.0, d.sigma_range.1],
            changed_sites: None,
            mean1: None,
            mean2: None,
            reps: 50,
            top_fraction: d.tweedie.top_fraction,
            smooth: 1,
            tweedie: TweedieSection::default(),
        }
    }
}

impl GroupsSection {
    pub fn to_config(&self, seed: u64) -> Result<GroupExperimentConfig> {
        let d = GroupExperimentConfig::default();
        let [h, w] = self.grid;
        let changed_region = match &self.changed_sites {
            None => quarter_region(h, w),
            Some(sites) => {
                let mut mask = vec![false; h * w];
                for &s in sites {
                    *mask
                        .get_mut(s)
                        .ok_or_else(|| Error::Config(format!("changed site {s} outside {h}x{w} grid")))? = true;
                }
                mask
            }
        };
        let mean_pair = (
            self.mean1.as_ref().map_or(Ok(d.mean_pair.0), |m| matrix(m, "groups.mean1"))?,
            self.mean2.as_ref().map_or(Ok(d.mean_pair.1), |m| matrix(m, "groups.mean2"))?,
        );
        if self.reps == 0 || self.smooth == 0 {
            return Err(Error::Config("groups.reps and groups.smooth must be at least 1".into()));
        }
        let cfg = GroupExperimentConfig {
            grid: (h, w),
            n1: self.n1,
            n2: self.n2,
            sigma_range: (self.sigma_range[0], self.sigma_range[1]),
            changed_region,
            mean_pair,
            seed,
            tweedie: self.tweedie.to_config(self.top_fraction)?,
        };
        cfg.validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(cfg)
    }
}

/// `[estimate]`
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EstimateSection {
    pub known_variance: bool,
    pub multi_start: bool,
    pub grad_tol: f64,
    pub max_iters: usize,
    pub spd_check: SpdCheckMode,
}

impl Default for EstimateSection {
    fn default() -> Self {
        let o = crate::optimize::OptimConfig::default();
        EstimateSection {
            known_variance: false,
            multi_start: false,
            grad_tol: o.grad_tol,
            max_iters: o.max_iters,
            spd_check: SpdCheckMode::Reject,
        }
    }
}

/// `[groupdiff]`
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GroupdiffSection {
    pub top_fraction: f64,
    pub smooth: usize,
    /// Site grid dimensions (2 or 3 entries, row-major); enables map output.
    pub grid: Option<Vec<usize>>,
    pub spd_check: SpdCheckMode,
    #[serde(flatten)]
    pub tweedie: TweedieSection,
}

impl Default for GroupdiffSection {
    fn default() -> Self {
        GroupdiffSection {
            top_fraction: TweedieConfig::default().top_fraction,
            smooth: 1,
            grid: None,
            spd_check: SpdCheckMode::Reject,
            tweedie: TweedieSection::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GenerateKind {
    #[default]
    Hier,
    Groups,
}

/// `[generate]`: writes a synthetic dataset from `[risk]` or `[groups]`.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenerateSection {
    pub kind: GenerateKind,
    /// Number of sites for `kind = "hier"`.
    pub p: usize,
    pub rep: u32,
}

impl Default for GenerateSection {
    fn default() -> Self {
        GenerateSection {
            kind: GenerateKind::Hier,
            p: 100,
            rep: 0,
        }
    }
}
