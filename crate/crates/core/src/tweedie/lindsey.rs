use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

const IRLS_MAX_ITERS: usize = 100;
const SIMPSON_INTERVALS: usize = 4000;

/// Polynomial log-density `l(y) = Σ βₖ yᵏ` on a bounded support.
///
/// Evaluation uses the standardized variable `t = (y − mid)/half` internally;
/// [`LogDensityPoly::coeffs`] gives the equivalent raw-power coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct LogDensityPoly {
    /// coefficients in `t`
    std_coeffs: Vec<f64>,
    mid: f64,
    half: f64,
    coeffs: Vec<f64>,
}

fn horner(c: &[f64], t: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &b| acc * t + b)
}

fn derivative(c: &[f64]) -> Vec<f64> {
    c.iter().enumerate().skip(1).map(|(k, &b)| k as f64 * b).collect()
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

impl LogDensityPoly {
    fn from_std(std_coeffs: Vec<f64>, lo: f64, hi: f64) -> Self {
        let mid = 0.5 * (lo + hi);
        let half = 0.5 * (hi - lo);
        // expand Σ cₖ ((y − mid)/half)ᵏ in powers of y
        let k_max = std_coeffs.len();
        let mut coeffs = vec![0.0; k_max];
        for (k, &c) in std_coeffs.iter().enumerate() {
            let scale = c / half.powi(k as i32);
            for (j, slot) in coeffs.iter_mut().enumerate().take(k + 1) {
                *slot += scale * binomial(k, j) * (-mid).powi((k - j) as i32);
            }
        }
        LogDensityPoly {
            std_coeffs,
            mid,
            half,
            coeffs,
        }
    }

    pub fn degree(&self) -> usize {
        self.std_coeffs.len() - 1
    }

    /// `β₀..β_K` in powers of `y`.
    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn support(&self) -> (f64, f64) {
        (self.mid - self.half, self.mid + self.half)
    }

    fn t(&self, y: f64) -> f64 {
        (y - self.mid) / self.half
    }

    pub fn l(&self, y: f64) -> f64 {
        horner(&self.std_coeffs, self.t(y))
    }

    pub fn dl(&self, y: f64) -> f64 {
        horner(&derivative(&self.std_coeffs), self.t(y)) / self.half
    }

    pub fn d2l(&self, y: f64) -> f64 {
        horner(&derivative(&derivative(&self.std_coeffs)), self.t(y)) / (self.half * self.half)
    }

    pub fn density(&self, y: f64) -> f64 {
        self.l(y).exp()
    }

    /// Composite Simpson integral of `exp(l)` over the support.
    pub fn integral(&self, intervals: usize) -> f64 {
        self.log_integral(intervals).exp()
    }

    /// Log of [`Self::integral`], computed with the maximum factored out so
    /// steep fits do not overflow.
    pub fn log_integral(&self, intervals: usize) -> f64 {
        let m = intervals + intervals % 2;
        let (lo, hi) = self.support();
        let h = (hi - lo) / m as f64;
        let logs: Vec<f64> = (0..=m).map(|i| self.l(lo + i as f64 * h)).collect();
        let top = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let acc: f64 = logs
            .iter()
            .enumerate()
            .map(|(i, l)| {
                let w = if i == 0 || i == m {
                    1.0
                } else if i % 2 == 1 {
                    4.0
                } else {
                    2.0
                };
                w * (l - top).exp()
            })
            .sum();
        top + (acc * h / 3.0).ln()
    }
}

/// `max(60, ⌈√p⌉)` histogram bins.
pub fn default_bins(p: usize) -> usize {
    60.max((p as f64).sqrt().ceil() as usize)
}

fn deviance(counts: &[f64], mu: &DVector<f64>) -> f64 {
    2.0 * counts
        .iter()
        .zip(mu.iter())
        .map(|(&c, &m)| if c > 0.0 { c * (c / m).ln() - (c - m) } else { m })
        .sum::<f64>()
}

/// Lindsey's method: Poisson regression of histogram counts on a degree-`degree`
/// polynomial in the bin centres, normalized to a density on the padded range.
pub fn lindsey_fit(y: &[f64], degree: usize, bins: usize) -> Result<LogDensityPoly> {
    let need = 10 * degree.max(1);
    if y.len() < need {
        return Err(Error::TooFewSamples { need, got: y.len() });
    }
    if let Some(bad) = y.iter().find(|v| !v.is_finite()) {
        return Err(Error::IrlsDiverged(format!("non-finite observation {bad}")));
    }
    let (min, max) = y.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    if !(max > min) {
        return Err(Error::DegenerateSupport);
    }
    let bins = bins.max(degree + 1);
    let pad = 0.01 * (max - min);
    let (lo, hi) = (min - pad, max + pad);
    let width = (hi - lo) / bins as f64;

    let mut counts = vec![0.0; bins];
    for &v in y {
        let b = (((v - lo) / width) as usize).min(bins - 1);
        counts[b] += 1.0;
    }
    // standardized bin centres in (-1, 1)
    let x = DMatrix::from_fn(bins, degree + 1, |b, k| {
        let t = -1.0 + (2.0 * b as f64 + 1.0) / bins as f64;
        t.powi(k as i32)
    });

    let mut beta = DVector::zeros(degree + 1);
    beta[0] = (y.len() as f64 / bins as f64).ln();
    let mut mu = (&x * &beta).map(f64::exp);
    let mut dev = deviance(&counts, &mu);
    let mut converged = false;
    for _ in 0..IRLS_MAX_ITERS {
        let eta = &x * &beta;
        // W z with W = diag(μ), z = η + (c − μ)/μ, written without dividing by μ
        let wz = DVector::from_fn(bins, |b, _| mu[b] * eta[b] + counts[b] - mu[b]);
        let mut xtw = x.transpose();
        for b in 0..bins {
            xtw.column_mut(b).scale_mut(mu[b]);
        }
        let lhs = &xtw * &x;
        let rhs = x.transpose() * wz;
        let target = lhs
            .cholesky()
            .ok_or_else(|| Error::IrlsDiverged("singular weighted normal equations".into()))?
            .solve(&rhs);

        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let cand = &beta + (&target - &beta) * step;
            let eta = &x * &cand;
            if eta.iter().all(|e| e.is_finite() && *e < 700.0) {
                let m = eta.map(f64::exp);
                let d = deviance(&counts, &m);
                if d.is_finite() && d <= dev * (1.0 + 1e-12) + 1e-12 {
                    accepted = Some((cand, m, d));
                    break;
                }
            }
            step *= 0.5;
        }
        let Some((b, m, d)) = accepted else {
            return Err(Error::IrlsDiverged(format!("step halving failed at deviance {dev}")));
        };
        let change = (dev - d).abs();
        beta = b;
        mu = m;
        dev = d;
        if change <= 1e-10 * (dev.abs() + 0.1) {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::IrlsDiverged(format!(
            "no convergence in {IRLS_MAX_ITERS} iterations (deviance {dev})"
        )));
    }

    let poly = LogDensityPoly::from_std(beta.as_slice().to_vec(), lo, hi);
    let log_mass = poly.log_integral(SIMPSON_INTERVALS);
    if !log_mass.is_finite() {
        return Err(Error::IrlsDiverged(format!("log density integral {log_mass}")));
    }
    let mut std = poly.std_coeffs;
    std[0] -= log_mass;
    Ok(LogDensityPoly::from_std(std, lo, hi))
}
