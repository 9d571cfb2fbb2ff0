//! Two-group difference detection with selection-bias-corrected
//! non-centrality estimates.

mod iterate;
mod lindsey;
mod smooth;

pub use iterate::{
    top_fraction_mask, tweedie_chi2, tweedie_iterate, NoncentralityMap, TweedieConfig, DENOM_EPS,
};
pub use lindsey::{default_bins, lindsey_fit, LogDensityPoly};
pub use smooth::{smooth_map, Grid};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{log_vec, sym_dim, SpdMatrix};

/// Observations of two groups at the same `p` sites: `group1[i][j]` is the
/// `j`-th observation at site `i`.
#[derive(Debug, Clone)]
pub struct GroupData {
    pub group1: Vec<Vec<SpdMatrix>>,
    pub group2: Vec<Vec<SpdMatrix>>,
}

impl GroupData {
    pub fn new(group1: Vec<Vec<SpdMatrix>>, group2: Vec<Vec<SpdMatrix>>) -> Result<Self> {
        let g = GroupData { group1, group2 };
        g.validate()?;
        Ok(g)
    }

    fn validate(&self) -> Result<()> {
        let p = self.group1.len();
        if p == 0 {
            return Err(Error::EmptyInput);
        }
        if self.group2.len() != p {
            return Err(Error::DimMismatch {
                expected: p,
                found: self.group2.len(),
            });
        }
        let dim = self.group1[0].first().ok_or(Error::EmptyInput)?.dim();
        for g in [&self.group1, &self.group2] {
            let n = g[0].len();
            if n < 2 {
                return Err(Error::TooFewSamples { need: 2, got: n });
            }
            for row in g.iter() {
                if row.len() != n {
                    return Err(Error::DimMismatch { expected: n, found: row.len() });
                }
                if let Some(x) = row.iter().find(|x| x.dim() != dim) {
                    return Err(Error::DimMismatch { expected: dim, found: x.dim() });
                }
            }
        }
        f_dofs(self.group1[0].len(), self.group2[0].len(), sym_dim(dim))?;
        Ok(())
    }

    fn logs(g: &[Vec<SpdMatrix>]) -> Vec<Vec<DVector<f64>>> {
        g.par_iter().map(|row| row.iter().map(log_vec).collect()).collect()
    }
}

/// F statistics `zᵢ` with their degrees of freedom `(ν₁, ν₂) = (q, ν − q − 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FStatistics {
    pub z: Vec<f64>,
    pub dof1: f64,
    pub dof2: f64,
}

fn f_dofs(n_x: usize, n_y: usize, q: usize) -> Result<(f64, f64)> {
    let nu = n_x as f64 + n_y as f64 - 2.0;
    let dof2 = nu - q as f64 - 1.0;
    if dof2 < 1.0 {
        return Err(Error::BadDof(format!(
            "n_x + n_y - 2 - q - 1 = {dof2} < 1 (n_x = {n_x}, n_y = {n_y}, q = {q})"
        )));
    }
    Ok((nu, dof2))
}

fn moments(obs: &[DVector<f64>]) -> (DVector<f64>, DMatrix<f64>) {
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

/// Hotelling `T²` on log coordinates; returns the statistics and the pooled
/// scatter matrices `(S⁽¹⁾ᵢ + S⁽²⁾ᵢ)/(n_x + n_y − 2)`.
pub fn hotelling_t2_log(
    group1: &[Vec<DVector<f64>>],
    group2: &[Vec<DVector<f64>>],
) -> Result<(Vec<f64>, Vec<DMatrix<f64>>)> {
    if group1.len() != group2.len() {
        return Err(Error::DimMismatch {
            expected: group1.len(),
            found: group2.len(),
        });
    }
    let out: Vec<Result<(f64, DMatrix<f64>)>> = group1
        .par_iter()
        .zip(group2.par_iter())
        .enumerate()
        .map(|(i, (a, b))| {
            let (nx, ny) = (a.len() as f64, b.len() as f64);
            let (ma, sa) = moments(a);
            let (mb, sb) = moments(b);
            let pooled = (sa + sb) / (nx + ny - 2.0);
            let ch = (&pooled * (1.0 / nx + 1.0 / ny))
                .cholesky()
                .ok_or(Error::SingularPooled(i))?;
            let d = ma - mb;
            let t2 = d.dot(&ch.solve(&d)).max(0.0);
            Ok((t2, pooled))
        })
        .collect();
    let mut t2 = Vec::with_capacity(out.len());
    let mut pooled = Vec::with_capacity(out.len());
    for r in out {
        let (t, s) = r?;
        t2.push(t);
        pooled.push(s);
    }
    Ok((t2, pooled))
}

/// Hotelling `T²ᵢ = (X̄̃ᵢ − Ȳ̃ᵢ)ᵀ[(1/n_x + 1/n_y)Sᵢ]⁻¹(X̄̃ᵢ − Ȳ̃ᵢ)` per site.
pub fn hotelling_t2(g: &GroupData) -> Result<(Vec<f64>, Vec<SpdMatrix>)> {
    g.validate()?;
    let (t2, pooled) = hotelling_t2_log(&GroupData::logs(&g.group1), &GroupData::logs(&g.group2))?;
    let pooled = pooled
        .into_iter()
        .enumerate()
        .map(|(i, s)| SpdMatrix::new(s).map_err(|_| Error::SingularPooled(i)))
        .collect::<Result<Vec<_>>>()?;
    Ok((t2, pooled))
}

/// `zᵢ = (ν − q − 1)/(νq) · t²ᵢ` with `ν = n_x + n_y − 2`.
pub fn to_f_stats(t2: &[f64], n_x: usize, n_y: usize, q: usize) -> Result<FStatistics> {
    let (nu, dof2) = f_dofs(n_x, n_y, q)?;
    let scale = dof2 / (nu * q as f64);
    Ok(FStatistics {
        z: t2.iter().map(|t| t * scale).collect(),
        dof1: q as f64,
        dof2,
    })
}

/// Untruncated moment estimate `ν₁(ν₂ − 2)/ν₂ · z − ν₁`.
pub fn mom_raw(z: f64, dof1: f64, dof2: f64) -> f64 {
    dof1 * (dof2 - 2.0) / dof2 * z - dof1
}

/// `λ̂ᵢ = max(ν₁(ν₂ − 2)/ν₂ · zᵢ − ν₁, 0)`.
pub fn mom_noncentrality(f: &FStatistics) -> Result<Vec<f64>> {
    if !(f.dof2 > 2.0) {
        return Err(Error::BadDof(format!("MOM needs dof2 > 2, got {}", f.dof2)));
    }
    Ok(f.z.iter().map(|&z| mom_raw(z, f.dof1, f.dof2).max(0.0)).collect())
}
