//! Non-central χ² and F distribution functions.
//!
//! Both CDFs are Poisson mixtures of central ones:
//!
//! ```text
//! Φ̃_{ν,λ}(x)      = Σ_k Pois(k; λ/2) · P(ν/2 + k, x/2)
//! Φ_{ν₁,ν₂,λ}(f)  = Σ_k Pois(k; λ/2) · I_u(ν₁/2 + k, ν₂/2),   u = ν₁f/(ν₁f + ν₂)
//! ```
//!
//! The sum starts at the Poisson mode `k₀ = ⌊λ/2⌋` and walks outward in both
//! directions, so large non-centralities never underflow the leading weight.
//! Only the anchor term calls the incomplete gamma/beta function; neighbours
//! follow from the three-term recurrences `P(a+1, y) = P(a, y) − yᵃe⁻ʸ/Γ(a+1)`
//! and `I_u(a+1, b) = I_u(a, b) − uᵃ(1−u)ᵇ/(a·B(a, b))`.

use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::beta::beta_reg;
use statrs::function::gamma::{gamma_lr, gamma_ur, ln_gamma};

use crate::error::{Error, Result};

/// Tail bound on the discarded Poisson mass in each direction.
const SERIES_EPS: f64 = 1e-15;

/// Absolute CDF tolerance for the quantile solver.
pub const QUANTILE_TOL: f64 = 1e-10;

/// Values of a mixture at one point: lower tail, upper tail and density.
#[derive(Debug, Clone, Copy)]
struct Mix {
    cdf: f64,
    sf: f64,
    pdf: f64,
}

/// Central component evaluated at mixture index `k`: lower tail `p`, upper
/// tail `q`, and the recurrence increment `h` with `p(k+1) = p(k) − h(k)`.
/// `dens(k)` is the central density of component `k` at the evaluation point.
trait Component {
    fn anchor(&self, k: usize) -> (f64, f64);
    /// log of the increment h(k)
    fn ln_increment(&self, k: usize) -> f64;
    /// ratio h(k+1)/h(k)
    fn increment_ratio(&self, k: usize) -> f64;
    fn density(&self, k: usize) -> f64;
    /// ratio density(k+1)/density(k)
    fn density_ratio(&self, k: usize) -> f64;
}

fn poisson_ln_weight(k: usize, half_lambda: f64) -> f64 {
    if half_lambda == 0.0 {
        return if k == 0 { 0.0 } else { f64::NEG_INFINITY };
    }
    -half_lambda + k as f64 * half_lambda.ln() - ln_gamma(k as f64 + 1.0)
}

fn mixture<C: Component>(c: &C, lambda: f64, want_pdf: bool) -> Mix {
    let hl = lambda / 2.0;
    let k0 = hl.floor() as usize;

    let (p0, q0) = c.anchor(k0);
    let w0 = poisson_ln_weight(k0, hl).exp();
    let mut wsum = w0;
    let mut cdf = w0 * p0;
    let mut sf = w0 * q0;
    let d0 = if want_pdf { c.density(k0) } else { 0.0 };
    let mut pdf = w0 * d0;

    // upward: k0+1, k0+2, ...
    {
        let (mut p, mut q, mut w, mut d) = (p0, q0, w0, d0);
        let mut h = c.ln_increment(k0).exp();
        let mut k = k0;
        loop {
            p -= h;
            q += h;
            k += 1;
            let ratio = hl / k as f64;
            w *= ratio;
            if w == 0.0 && hl > 0.0 {
                w = poisson_ln_weight(k, hl).exp();
            }
            wsum += w;
            cdf += w * p.max(0.0);
            sf += w * q.min(1.0);
            if want_pdf {
                d *= c.density_ratio(k - 1);
                if d == 0.0 || !d.is_finite() {
                    d = c.density(k);
                }
                pdf += w * d;
            }
            // remaining Poisson mass is at most w·r/(1−r) with r = hl/(k+1)
            let r = hl / (k as f64 + 1.0);
            if w == 0.0 || (r < 1.0 && w * r / (1.0 - r) < SERIES_EPS) {
                break;
            }
            let next = h * c.increment_ratio(k - 1);
            h = if next == 0.0 || !next.is_finite() {
                c.ln_increment(k).exp()
            } else {
                next
            };
        }
    }

    // downward: k0-1, ..., 0
    {
        let (mut p, mut q, mut w, mut d) = (p0, q0, w0, d0);
        let mut k = k0;
        let mut h_prev: Option<f64> = None;
        while k > 0 {
            k -= 1;
            let h = match h_prev {
                Some(hn) if hn > 0.0 => {
                    let r = c.increment_ratio(k);
                    let v = hn / r;
                    if v.is_finite() && v > 0.0 {
                        v
                    } else {
                        c.ln_increment(k).exp()
                    }
                }
                _ => c.ln_increment(k).exp(),
            };
            h_prev = Some(h);
            p += h;
            q -= h;
            w *= (k as f64 + 1.0) / hl;
            wsum += w;
            cdf += w * p.min(1.0);
            sf += w * q.max(0.0);
            if want_pdf {
                d /= c.density_ratio(k);
                if d == 0.0 || !d.is_finite() {
                    d = c.density(k);
                }
                pdf += w * d;
            }
            let r = k as f64 / hl;
            if w == 0.0 || (r < 1.0 && w * r / (1.0 - r) < SERIES_EPS) {
                break;
            }
        }
    }

    // renormalize by the Poisson mass actually summed
    Mix {
        cdf: (cdf / wsum).clamp(0.0, 1.0),
        sf: (sf / wsum).clamp(0.0, 1.0),
        pdf: pdf / wsum,
    }
}

/// Central χ² components with `ν + 2k` degrees of freedom at `y = x/2`.
struct ChiComp {
    a: f64,
    y: f64,
}

impl Component for ChiComp {
    fn anchor(&self, k: usize) -> (f64, f64) {
        let s = self.a + k as f64;
        (gamma_lr(s, self.y), gamma_ur(s, self.y))
    }
    fn ln_increment(&self, k: usize) -> f64 {
        let s = self.a + k as f64;
        s * self.y.ln() - self.y - ln_gamma(s + 1.0)
    }
    fn increment_ratio(&self, k: usize) -> f64 {
        self.y / (self.a + k as f64 + 1.0)
    }
    fn density(&self, k: usize) -> f64 {
        // d/dx P(s, x/2) = ½ y^{s−1} e^{−y} / Γ(s)
        let s = self.a + k as f64;
        0.5 * ((s - 1.0) * self.y.ln() - self.y - ln_gamma(s)).exp()
    }
    fn density_ratio(&self, k: usize) -> f64 {
        self.y / (self.a + k as f64)
    }
}

/// Central F components: `I_u(ν₁/2 + k, ν₂/2)`.
struct BetaComp {
    a: f64,
    b: f64,
    u: f64,
    /// du/df
    du: f64,
}

impl Component for BetaComp {
    fn anchor(&self, k: usize) -> (f64, f64) {
        let a = self.a + k as f64;
        let p = beta_reg(a, self.b, self.u);
        let q = beta_reg(self.b, a, 1.0 - self.u);
        (p, q)
    }
    fn ln_increment(&self, k: usize) -> f64 {
        let a = self.a + k as f64;
        a * self.u.ln() + self.b * (1.0 - self.u).ln() + ln_gamma(a + self.b)
            - ln_gamma(a + 1.0)
            - ln_gamma(self.b)
    }
    fn increment_ratio(&self, k: usize) -> f64 {
        let a = self.a + k as f64;
        self.u * (a + self.b) / (a + 1.0)
    }
    fn density(&self, k: usize) -> f64 {
        let a = self.a + k as f64;
        let ln = (a - 1.0) * self.u.ln() + (self.b - 1.0) * (1.0 - self.u).ln() + ln_gamma(a + self.b)
            - ln_gamma(a)
            - ln_gamma(self.b);
        ln.exp() * self.du
    }
    fn density_ratio(&self, k: usize) -> f64 {
        let a = self.a + k as f64;
        self.u * (a + self.b) / a
    }
}

fn valid(dof: f64, lambda: f64) -> bool {
    dof > 0.0 && dof.is_finite() && lambda >= 0.0 && lambda.is_finite()
}

fn chi2_mix(x: f64, dof: f64, lambda: f64, want_pdf: bool) -> Mix {
    if !valid(dof, lambda) || x.is_nan() {
        return Mix { cdf: f64::NAN, sf: f64::NAN, pdf: f64::NAN };
    }
    if x <= 0.0 {
        return Mix { cdf: 0.0, sf: 1.0, pdf: 0.0 };
    }
    if x == f64::INFINITY {
        return Mix { cdf: 1.0, sf: 0.0, pdf: 0.0 };
    }
    mixture(&ChiComp { a: dof / 2.0, y: x / 2.0 }, lambda, want_pdf)
}

fn f_mix(x: f64, dof1: f64, dof2: f64, lambda: f64, want_pdf: bool) -> Mix {
    if !valid(dof1, lambda) || !(dof2 > 0.0) || x.is_nan() {
        return Mix { cdf: f64::NAN, sf: f64::NAN, pdf: f64::NAN };
    }
    if x <= 0.0 {
        return Mix { cdf: 0.0, sf: 1.0, pdf: 0.0 };
    }
    if x == f64::INFINITY {
        return Mix { cdf: 1.0, sf: 0.0, pdf: 0.0 };
    }
    let denom = dof1 * x + dof2;
    let u = dof1 * x / denom;
    let du = dof1 * dof2 / (denom * denom);
    mixture(
        &BetaComp { a: dof1 / 2.0, b: dof2 / 2.0, u, du },
        lambda,
        want_pdf,
    )
}

/// CDF of the non-central χ² distribution; 0 for `x ≤ 0`.
pub fn nc_chi2_cdf(x: f64, dof: f64, lambda: f64) -> f64 {
    chi2_mix(x, dof, lambda, false).cdf
}

/// Upper tail `1 − nc_chi2_cdf`, computed without cancellation.
pub fn nc_chi2_sf(x: f64, dof: f64, lambda: f64) -> f64 {
    chi2_mix(x, dof, lambda, false).sf
}

pub fn nc_chi2_pdf(x: f64, dof: f64, lambda: f64) -> f64 {
    chi2_mix(x, dof, lambda, true).pdf
}

/// CDF of the non-central F distribution `F_{dof1, dof2, λ}`.
pub fn nc_f_cdf(x: f64, dof1: f64, dof2: f64, lambda: f64) -> f64 {
    f_mix(x, dof1, dof2, lambda, false).cdf
}

pub fn nc_f_sf(x: f64, dof1: f64, dof2: f64, lambda: f64) -> f64 {
    f_mix(x, dof1, dof2, lambda, false).sf
}

pub fn nc_f_pdf(x: f64, dof1: f64, dof2: f64, lambda: f64) -> f64 {
    f_mix(x, dof1, dof2, lambda, true).pdf
}

/// Which tail a target probability refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Tail {
    Lower,
    Upper,
}

/// Solves `tail(x) = prob` by bracketing followed by safeguarded Newton.
fn chi2_solve(prob: f64, dof: f64, lambda: f64, tail: Tail) -> Result<f64> {
    if !(prob > 0.0 && prob < 1.0) {
        return Err(Error::BadProb(prob));
    }
    if !valid(dof, lambda) {
        return Err(Error::BadDof(format!("dof = {dof}, lambda = {lambda}")));
    }
    // residual increasing in x
    let resid = |x: f64| -> (f64, f64) {
        let m = chi2_mix(x, dof, lambda, true);
        match tail {
            Tail::Lower => (m.cdf - prob, m.pdf),
            Tail::Upper => (prob - m.sf, m.pdf),
        }
    };

    let mean = dof + lambda;
    let sd = (2.0 * (dof + 2.0 * lambda)).sqrt();
    let mut lo = 0.0;
    let mut hi = mean + 4.0 * sd;
    let mut fhi = resid(hi).0;
    while fhi < 0.0 {
        lo = hi;
        hi = 2.0 * hi + sd;
        fhi = resid(hi).0;
        if !hi.is_finite() {
            return Err(Error::BadProb(prob));
        }
    }

    let stop = (QUANTILE_TOL * 1e-3).min(prob * 1e-12);
    // normal approximation as the Newton start
    let z = Normal::standard().inverse_cdf(prob);
    let guess = match tail {
        Tail::Lower => mean + sd * z,
        Tail::Upper => mean - sd * z,
    };
    let mut x = if guess > lo && guess < hi { guess } else { mean.clamp(lo, hi) };
    // at very large λ the series carries ~1e−8 noise; stop once Newton stops gaining
    let (mut best, mut best_x, mut stalled) = (f64::INFINITY, x, 0);
    for _ in 0..200 {
        let (f, d) = resid(x);
        if f.abs() <= stop {
            return Ok(x);
        }
        if f.abs() < 0.5 * best {
            stalled = 0;
        } else {
            stalled += 1;
            if stalled >= 4 {
                return Ok(if f.abs() < best { x } else { best_x });
            }
        }
        if f.abs() < best {
            best = f.abs();
            best_x = x;
        }
        if f < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        let newton = x - f / d;
        x = if d > 0.0 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if hi - lo <= 4.0 * f64::EPSILON * hi.max(f64::MIN_POSITIVE) {
            return Ok(x);
        }
    }
    let (f, _) = resid(x);
    if f.abs() <= QUANTILE_TOL {
        Ok(x)
    } else {
        Err(Error::OptFailed(format!(
            "quantile search stalled at x = {x}, residual {f:e}"
        )))
    }
}

/// Quantile of the non-central χ² distribution.
pub fn nc_chi2_quantile(prob: f64, dof: f64, lambda: f64) -> Result<f64> {
    chi2_solve(prob, dof, lambda, Tail::Lower)
}

/// Upper-tail quantile: the `x` with `nc_chi2_sf(x) = upper`. Accurate when
/// `upper` is tiny, where `nc_chi2_quantile(1 − upper)` would lose digits.
pub fn nc_chi2_quantile_upper(upper: f64, dof: f64, lambda: f64) -> Result<f64> {
    chi2_solve(upper, dof, lambda, Tail::Upper)
}

/// Maps an F statistic to the χ² scale with the same tail probability:
/// `Φ̃⁻¹_{ν₁,λ}(Φ_{ν₁,ν₂,λ}(z))`. Uses whichever tail is smaller so extreme
/// statistics keep their precision.
pub fn f_to_chi2_quantile(z: f64, dof1: f64, dof2: f64, lambda: f64) -> Result<f64> {
    if z <= 0.0 {
        return Ok(0.0);
    }
    let m = f_mix(z, dof1, dof2, lambda, false);
    if m.cdf <= 0.5 {
        if m.cdf <= 0.0 {
            return Ok(0.0);
        }
        nc_chi2_quantile(m.cdf, dof1, lambda)
    } else {
        nc_chi2_quantile_upper(m.sf.max(f64::MIN_POSITIVE), dof1, lambda)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use statrs::distribution::{ChiSquared, ContinuousCDF, FisherSnedecor};

    #[test]
    fn zero_noncentrality_reduces_to_central() {
        for &dof in &[1.0, 3.0, 6.0, 17.5] {
            let central = ChiSquared::new(dof).unwrap();
            for i in 1..60 {
                let x = i as f64 * 0.5;
                let want = central.cdf(x);
                assert!((nc_chi2_cdf(x, dof, 0.0) - want).abs() <= 1e-12 * want.max(1e-300));
            }
        }
        let f = FisherSnedecor::new(3.0, 54.0).unwrap();
        for i in 1..40 {
            let x = i as f64 * 0.2;
            assert_relative_eq!(nc_f_cdf(x, 3.0, 54.0, 0.0), f.cdf(x), max_relative = 1e-12);
        }
    }

    #[test]
    fn boundary_values() {
        assert_eq!(nc_chi2_cdf(0.0, 3.0, 5.0), 0.0);
        assert_eq!(nc_chi2_cdf(-1.0, 3.0, 5.0), 0.0);
        assert_eq!(nc_chi2_cdf(f64::INFINITY, 3.0, 5.0), 1.0);
        assert!(nc_chi2_cdf(1e4, 3.0, 5.0) > 1.0 - 1e-15);
        assert_eq!(nc_f_cdf(0.0, 3.0, 10.0, 2.0), 0.0);
    }

    #[test]
    fn cdf_and_sf_are_complementary() {
        for &lambda in &[0.0, 0.7, 5.0, 25.0, 400.0] {
            for &x in &[0.3, 2.0, 8.0, 30.0, 500.0] {
                let s = nc_chi2_cdf(x, 3.0, lambda) + nc_chi2_sf(x, 3.0, lambda);
                assert!((s - 1.0).abs() < 1e-12, "lambda {lambda} x {x} sum {s}");
                let s = nc_f_cdf(x / 10.0, 3.0, 54.0, lambda) + nc_f_sf(x / 10.0, 3.0, 54.0, lambda);
                assert!((s - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn pdf_matches_derivative_of_cdf() {
        let h = 1e-5;
        for &(x, lambda) in &[(1.0, 0.0), (4.0, 3.0), (60.0, 50.0)] {
            let fd = (nc_chi2_cdf(x + h, 3.0, lambda) - nc_chi2_cdf(x - h, 3.0, lambda)) / (2.0 * h);
            assert_relative_eq!(nc_chi2_pdf(x, 3.0, lambda), fd, max_relative = 1e-6);
            let x = x / 20.0;
            let fd = (nc_f_cdf(x + h, 3.0, 20.0, lambda) - nc_f_cdf(x - h, 3.0, 20.0, lambda)) / (2.0 * h);
            assert_relative_eq!(nc_f_pdf(x, 3.0, 20.0, lambda), fd, max_relative = 1e-6);
        }
    }

    #[test]
    fn monotone_in_x_and_lambda() {
        for &lambda in &[0.0, 1.0, 5.0, 25.0] {
            let mut prev = 0.0;
            for i in 1..200 {
                let x = i as f64 * 0.25;
                let c = nc_chi2_cdf(x, 3.0, lambda);
                assert!(c >= prev);
                prev = c;
                assert!(nc_chi2_cdf(x, 3.0, lambda + 1.0) <= c + 1e-15);
                assert!(nc_f_cdf(x / 5.0, 3.0, 20.0, lambda + 1.0) <= nc_f_cdf(x / 5.0, 3.0, 20.0, lambda) + 1e-15);
            }
        }
    }

    #[test]
    fn central_chi2_two_dof_quantile_closed_form() {
        let p = 1.0 - (-1.0f64).exp();
        assert_relative_eq!(nc_chi2_quantile(p, 2.0, 0.0).unwrap(), 2.0, max_relative = 1e-10);
    }

    #[test]
    fn quantile_round_trip_and_monotone() {
        for &lambda in &[0.0, 1.0, 5.0, 25.0, 300.0] {
            let mut prev = 0.0;
            for i in 1..100 {
                let p = i as f64 / 100.0;
                let x = nc_chi2_quantile(p, 3.0, lambda).unwrap();
                assert!((nc_chi2_cdf(x, 3.0, lambda) - p).abs() <= 1e-8);
                assert!(x > prev);
                prev = x;
            }
            for &u in &[1e-3, 1e-8, 1e-14] {
                let x = nc_chi2_quantile_upper(u, 3.0, lambda).unwrap();
                assert_relative_eq!(nc_chi2_sf(x, 3.0, lambda), u, max_relative = 1e-6);
            }
        }
    }

    #[test]
    fn bad_probabilities_are_rejected() {
        for p in [0.0, 1.0, -0.1, 1.5, f64::NAN] {
            assert!(matches!(nc_chi2_quantile(p, 3.0, 1.0), Err(Error::BadProb(_))));
        }
    }

    #[test]
    fn huge_noncentrality_is_stable() {
        let lambda: f64 = 4.0e6;
        let mean = 3.0 + lambda;
        let sd = (2.0 * (3.0 + 2.0 * lambda)).sqrt();
        assert!((nc_chi2_cdf(mean, 3.0, lambda) - 0.5).abs() < 0.01);
        assert!(nc_chi2_cdf(mean - 10.0 * sd, 3.0, lambda) < 1e-15);
        let x = nc_chi2_quantile(0.3, 3.0, lambda).unwrap();
        assert!((nc_chi2_cdf(x, 3.0, lambda) - 0.3).abs() < 1e-9);
    }

    #[test]
    fn f_to_chi2_is_near_identity_for_large_denominator_dof() {
        for &lambda in &[0.0, 2.0, 10.0] {
            for &z in &[0.5, 1.0, 3.0, 8.0] {
                let y = f_to_chi2_quantile(z, 3.0, 1e7, lambda).unwrap();
                assert_relative_eq!(y, 3.0 * z, max_relative = 1e-3);
            }
        }
    }

    /// Plain Poisson-mixture sum from k = 0, run until the remaining mass is
    /// below 1e-18.
    fn oracle_chi2_cdf(x: f64, dof: f64, lambda: f64) -> f64 {
        let hl = lambda / 2.0;
        let mut total = 0.0;
        let mut mass = 0.0;
        let mut k = 0usize;
        loop {
            let w = (-hl + k as f64 * hl.ln() - ln_gamma(k as f64 + 1.0)).exp();
            let w = if hl == 0.0 { if k == 0 { 1.0 } else { 0.0 } } else { w };
            total += w * ChiSquared::new(dof + 2.0 * k as f64).unwrap().cdf(x);
            mass += w;
            k += 1;
            if (k as f64) > hl && 1.0 - mass < 1e-18 || k > 5000 {
                break;
            }
        }
        total
    }

    #[test]
    fn agrees_with_refined_series_oracle() {
        for &dof in &[1.0, 3.0, 6.0] {
            for &lambda in &[0.0, 0.5, 4.0, 20.0, 90.0] {
                for i in 0..40 {
                    let x = 0.05 + i as f64 * 4.0;
                    let a = nc_chi2_cdf(x, dof, lambda);
                    let b = oracle_chi2_cdf(x, dof, lambda);
                    assert!((a - b).abs() <= 1e-10, "dof {dof} lambda {lambda} x {x}: {a} vs {b}");
                }
            }
        }
    }
}
