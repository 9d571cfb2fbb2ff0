use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};

use super::cholesky_lower;
use crate::error::{Error, Result};
use crate::geometry::SpdMatrix;

/// Scale matrix and degrees of freedom of a (possibly inverse) Wishart law.
///
/// The inverse-Wishart draw with these parameters has mean `scale / (dof − q − 1)`.
#[derive(Debug, Clone)]
pub struct WishartParams {
    scale: SpdMatrix,
    dof: f64,
    factor: DMatrix<f64>,
    inv_factor: DMatrix<f64>,
}

impl WishartParams {
    /// Requires `dof > q − 1`.
    pub fn new(scale: SpdMatrix, dof: f64) -> Result<Self> {
        let q = scale.dim() as f64;
        if !(dof > q - 1.0) || !dof.is_finite() {
            return Err(Error::BadDof(format!(
                "Wishart needs dof > q - 1 = {}, got {dof}",
                q - 1.0
            )));
        }
        let factor = cholesky_lower(scale.as_matrix())?;
        let inv_factor = cholesky_lower(scale.inverse().as_matrix())?;
        Ok(WishartParams {
            scale,
            dof,
            factor,
            inv_factor,
        })
    }

    pub fn scale(&self) -> &SpdMatrix {
        &self.scale
    }

    pub fn dof(&self) -> f64 {
        self.dof
    }
}

/// Bartlett construction `L A Aᵀ Lᵀ`.
fn bartlett<R: Rng + ?Sized>(factor: &DMatrix<f64>, dof: f64, rng: &mut R) -> DMatrix<f64> {
    let q = factor.nrows();
    let mut a = DMatrix::zeros(q, q);
    for i in 0..q {
        let chi = ChiSquared::new(dof - i as f64).expect("dof validated");
        a[(i, i)] = chi.sample(rng).sqrt();
        for j in 0..i {
            a[(i, j)] = rng.sample::<f64, _>(StandardNormal);
        }
    }
    let la = factor * a;
    &la * la.transpose()
}

pub fn sample_wishart<R: Rng + ?Sized>(p: &WishartParams, rng: &mut R) -> Result<SpdMatrix> {
    SpdMatrix::new(bartlett(&p.factor, p.dof, rng))
}

/// Inverse of a `Wishart(scale⁻¹, dof)` draw.
pub fn sample_inv_wishart<R: Rng + ?Sized>(p: &WishartParams, rng: &mut R) -> Result<SpdMatrix> {
    Ok(SpdMatrix::new(bartlett(&p.inv_factor, p.dof, rng))?.inverse())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;

    fn random_spd(q: usize, seed: u64) -> SpdMatrix {
        let mut rng = RngStream::new(seed, 77).rng();
        let b = DMatrix::from_fn(q, q, |_, _| rng.random::<f64>() - 0.5);
        SpdMatrix::new(&b * b.transpose() + DMatrix::identity(q, q)).unwrap()
    }

    /// Mean and standard error of a scalar statistic.
    fn mean_se(xs: &[f64]) -> (f64, f64) {
        let m = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / m;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (m - 1.0);
        (mean, (var / m).sqrt())
    }

    #[test]
    fn bad_dof() {
        assert!(matches!(
            WishartParams::new(SpdMatrix::identity(6), 5.0),
            Err(Error::BadDof(_))
        ));
        assert!(WishartParams::new(SpdMatrix::identity(6), 5.5).is_ok());
    }

    #[test]
    fn wishart_moments() {
        let q = 6;
        let nu = 15.0;
        let sigma = random_spd(q, 1);
        let s = sigma.as_matrix();
        let p = WishartParams::new(sigma.clone(), nu).unwrap();
        let mut rng = RngStream::new(2, 0).rng();
        let draws: Vec<DMatrix<f64>> = (0..20000)
            .map(|_| sample_wishart(&p, &mut rng).unwrap().into_matrix())
            .collect();

        for i in 0..q {
            for j in 0..=i {
                let xs: Vec<f64> = draws.iter().map(|d| d[(i, j)]).collect();
                let (m, se) = mean_se(&xs);
                assert!((m - nu * s[(i, j)]).abs() < 4.0 * se, "entry ({i},{j})");
            }
        }

        let tr2: Vec<f64> = draws.iter().map(|d| d.trace().powi(2)).collect();
        let (m, se) = mean_se(&tr2);
        let want = nu * nu * s.trace().powi(2) + 2.0 * nu * (s * s).trace();
        assert!((m - want).abs() < 4.0 * se);

        // E S² = ν(ν+1)Σ² + ν tr(Σ) Σ
        let sq: Vec<f64> = draws.iter().map(|d| (d * d).trace()).collect();
        let (m, se) = mean_se(&sq);
        let want = nu * (nu + 1.0) * (s * s).trace() + nu * s.trace().powi(2);
        assert!((m - want).abs() < 4.0 * se);
    }

    #[test]
    fn minimal_dof_draws_are_spd() {
        let q = 6;
        let p = WishartParams::new(SpdMatrix::identity(q), q as f64).unwrap();
        let mut rng = RngStream::new(4, 0).rng();
        for _ in 0..10000 {
            sample_wishart(&p, &mut rng).unwrap();
        }
    }

    #[test]
    fn inverse_wishart_mean() {
        let q = 6;
        let nu = 15.0;
        let psi = random_spd(q, 3);
        let p = WishartParams::new(psi.clone(), nu).unwrap();
        let mut rng = RngStream::new(5, 0).rng();
        let draws: Vec<DMatrix<f64>> = (0..20000)
            .map(|_| sample_inv_wishart(&p, &mut rng).unwrap().into_matrix())
            .collect();
        let want = psi.as_matrix() / (nu - q as f64 - 1.0);
        for i in 0..q {
            for j in 0..=i {
                let xs: Vec<f64> = draws.iter().map(|d| d[(i, j)]).collect();
                let (m, se) = mean_se(&xs);
                assert!((m - want[(i, j)]).abs() < 4.0 * se, "entry ({i},{j})");
            }
        }
    }

    #[test]
    fn inverse_wishart_is_inverse_of_wishart_draw() {
        let psi = random_spd(6, 8);
        let inv = WishartParams::new(psi.clone(), 15.0).unwrap();
        let direct = WishartParams::new(psi.inverse(), 15.0).unwrap();
        let stream = RngStream::new(9, 4);
        for _ in 0..5 {
            let a = sample_inv_wishart(&inv, &mut stream.rng()).unwrap();
            let b = sample_wishart(&direct, &mut stream.rng()).unwrap().inverse();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn identity_scale_draws_are_spd() {
        let p = WishartParams::new(SpdMatrix::identity(6), 15.0).unwrap();
        let mut rng = RngStream::new(6, 0).rng();
        for _ in 0..2000 {
            sample_inv_wishart(&p, &mut rng).unwrap();
        }
    }
}
