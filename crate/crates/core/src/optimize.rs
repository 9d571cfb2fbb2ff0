//! Box-constrained BFGS with finite-difference gradients.

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimConfig {
    /// Stop when the projected gradient's max-norm falls below this.
    pub grad_tol: f64,
    pub max_iters: usize,
    /// Seed the inverse Hessian with a finite-difference Hessian at the start.
    pub hessian_init: bool,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            grad_tol: 1e-6,
            max_iters: 200,
            hessian_init: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Minimum {
    pub x: DVector<f64>,
    pub value: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
}

/// Per-coordinate box `[lo, hi]`; infinite ends allowed.
#[derive(Debug, Clone)]
pub struct Bounds {
    pub lo: DVector<f64>,
    pub hi: DVector<f64>,
}

impl Bounds {
    pub fn unbounded(dim: usize) -> Self {
        Bounds {
            lo: DVector::from_element(dim, f64::NEG_INFINITY),
            hi: DVector::from_element(dim, f64::INFINITY),
        }
    }

    fn project(&self, x: &mut DVector<f64>) {
        for i in 0..x.len() {
            x[i] = x[i].clamp(self.lo[i], self.hi[i]);
        }
    }

    /// Coordinates pinned at a bound with the gradient pushing outward.
    fn active(&self, x: &DVector<f64>, g: &DVector<f64>) -> Vec<bool> {
        (0..x.len())
            .map(|i| (x[i] <= self.lo[i] && g[i] > 0.0) || (x[i] >= self.hi[i] && g[i] < 0.0))
            .collect()
    }
}

fn fd_step(x: f64) -> f64 {
    1e-6 * (1.0 + x.abs())
}

struct Counted<F> {
    f: F,
    evals: usize,
}

impl<F: FnMut(&DVector<f64>) -> f64> Counted<F> {
    fn eval(&mut self, x: &DVector<f64>) -> f64 {
        self.evals += 1;
        (self.f)(x)
    }

    fn gradient(&mut self, x: &DVector<f64>) -> DVector<f64> {
        let mut g = DVector::zeros(x.len());
        let mut xp = x.clone();
        for i in 0..x.len() {
            let h = fd_step(x[i]);
            xp[i] = x[i] + h;
            let fp = self.eval(&xp);
            xp[i] = x[i] - h;
            let fm = self.eval(&xp);
            xp[i] = x[i];
            g[i] = (fp - fm) / (2.0 * h);
        }
        g
    }

    fn hessian(&mut self, x: &DVector<f64>, f0: f64) -> DMatrix<f64> {
        let d = x.len();
        let mut hm = DMatrix::zeros(d, d);
        let mut xp = x.clone();
        let steps: Vec<f64> = x.iter().map(|&v| 1e-4 * (1.0 + v.abs())).collect();
        for i in 0..d {
            let hi = steps[i];
            xp[i] = x[i] + hi;
            let fp = self.eval(&xp);
            xp[i] = x[i] - hi;
            let fm = self.eval(&xp);
            xp[i] = x[i];
            hm[(i, i)] = (fp - 2.0 * f0 + fm) / (hi * hi);
            for j in 0..i {
                let hj = steps[j];
                let mut acc = 0.0;
                for (si, sj, sign) in [(1.0, 1.0, 1.0), (1.0, -1.0, -1.0), (-1.0, 1.0, -1.0), (-1.0, -1.0, 1.0)] {
                    xp[i] = x[i] + si * hi;
                    xp[j] = x[j] + sj * hj;
                    acc += sign * self.eval(&xp);
                }
                xp[i] = x[i];
                xp[j] = x[j];
                let v = acc / (4.0 * hi * hj);
                hm[(i, j)] = v;
                hm[(j, i)] = v;
            }
        }
        hm
    }
}

fn projected_norm(g: &DVector<f64>, active: &[bool]) -> f64 {
    g.iter()
        .zip(active)
        .filter(|(_, &a)| !a)
        .fold(0.0, |m, (v, _)| m.max(v.abs()))
}

/// Minimizes `f` from `x0` inside `bounds`.
///
/// Returns the best iterate even when the gradient tolerance is not met; check
/// [`Minimum::converged`].
pub fn minimize<F>(f: F, x0: DVector<f64>, bounds: &Bounds, cfg: &OptimConfig) -> Minimum
where
    F: FnMut(&DVector<f64>) -> f64,
{
    let d = x0.len();
    let mut obj = Counted { f, evals: 0 };
    let mut x = x0;
    bounds.project(&mut x);
    let mut fx = obj.eval(&x);
    let mut g = obj.gradient(&x);

    let identity = || DMatrix::<f64>::identity(d, d);
    let mut h_inv = identity();
    if cfg.hessian_init {
        let hm = obj.hessian(&x, fx);
        if let Some(ch) = hm.cholesky() {
            h_inv = ch.inverse();
        }
    }

    let mut iterations = 0;
    let mut converged = false;
    let mut gnorm = projected_norm(&g, &bounds.active(&x, &g));
    while iterations < cfg.max_iters {
        if gnorm <= cfg.grad_tol {
            converged = true;
            break;
        }
        iterations += 1;

        let active = bounds.active(&x, &g);
        let mut dir = -(&h_inv * &g);
        for i in 0..d {
            if active[i] {
                dir[i] = 0.0;
            }
        }
        if g.dot(&dir) >= 0.0 {
            h_inv = identity();
            dir = -g.clone();
            for i in 0..d {
                if active[i] {
                    dir[i] = 0.0;
                }
            }
        }

        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let mut xn = &x + &dir * t;
            bounds.project(&mut xn);
            let fn_ = obj.eval(&xn);
            let decrease = g.dot(&(&xn - &x));
            if fn_.is_finite() && fn_ <= fx + 1e-4 * decrease {
                accepted = Some((xn, fn_));
                break;
            }
            t *= 0.5;
        }
        let Some((xn, fn_)) = accepted else {
            if h_inv != identity() {
                h_inv = identity();
                continue;
            }
            break;
        };

        let gn = obj.gradient(&xn);
        let s = &xn - &x;
        let y = &gn - &g;
        let sy = s.dot(&y);
        if sy > 1e-12 * s.norm() * y.norm() {
            let rho = 1.0 / sy;
            let hy = &h_inv * &y;
            let yhy = y.dot(&hy);
            h_inv += (&s * s.transpose()) * (rho * rho * yhy + rho)
                - (&hy * s.transpose() + &s * hy.transpose()) * rho;
        }
        x = xn;
        fx = fn_;
        g = gn;
        gnorm = projected_norm(&g, &bounds.active(&x, &g));
    }
    if !converged && gnorm <= cfg.grad_tol {
        converged = true;
    }

    Minimum {
        x,
        value: fx,
        grad_norm: gnorm,
        iterations,
        evaluations: obj.evals,
        converged,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_converges_in_one_newton_step() {
        let a = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.0, 1.0, 3.0, 0.5, 0.0, 0.5, 2.0]);
        let b = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let f = |x: &DVector<f64>| 0.5 * x.dot(&(&a * x)) - b.dot(x);
        let m = minimize(f, DVector::zeros(3), &Bounds::unbounded(3), &OptimConfig::default());
        let want = a.clone().cholesky().unwrap().solve(&b);
        assert!(m.converged);
        assert!(m.iterations <= 3);
        assert!((m.x - want).amax() < 1e-6);
    }

    #[test]
    fn rosenbrock() {
        let f = |x: &DVector<f64>| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2);
        let cfg = OptimConfig {
            hessian_init: false,
            ..OptimConfig::default()
        };
        let m = minimize(f, DVector::from_vec(vec![-1.2, 1.0]), &Bounds::unbounded(2), &cfg);
        assert!(m.converged);
        assert!((m.x[0] - 1.0).abs() < 1e-4 && (m.x[1] - 1.0).abs() < 1e-4);
    }

    #[test]
    fn respects_bounds() {
        let f = |x: &DVector<f64>| (x[0] + 3.0).powi(2) + (x[1] - 1.0).powi(2);
        let bounds = Bounds {
            lo: DVector::from_vec(vec![-1.0, f64::NEG_INFINITY]),
            hi: DVector::from_vec(vec![5.0, f64::INFINITY]),
        };
        let m = minimize(f, DVector::from_vec(vec![2.0, 0.0]), &bounds, &OptimConfig::default());
        assert!(m.converged);
        assert_eq!(m.x[0], -1.0);
        assert!((m.x[1] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn never_increases_objective() {
        let f = |x: &DVector<f64>| x.iter().map(|v| v.powi(4) - v * v).sum::<f64>();
        let x0 = DVector::from_vec(vec![0.1, -0.3, 2.0]);
        let f0 = f(&x0);
        let m = minimize(f, x0, &Bounds::unbounded(3), &OptimConfig::default());
        assert!(m.value <= f0);
    }
}
