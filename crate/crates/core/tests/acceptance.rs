//! Acceptance criteria 1–11. Prints one PASS/FAIL line per criterion and
//! exits nonzero if any fails.

use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use statrs::distribution::{ChiSquared as ChiSq, ContinuousCDF, Poisson, Discrete};

use spdshrink::distributions::{
    gaussian_vec, nc_chi2_cdf, nc_chi2_pdf, nc_chi2_quantile, nc_f_cdf, sample_inv_wishart, sample_wishart,
    WishartParams,
};
use spdshrink::geometry::{frechet_mean_le, log_vec, sym_exp, sym_log, ve, ve_inv, SpdMatrix, SymMatrix};
use spdshrink::rng::RngStream;
use spdshrink::sim::{
    gen_group_log, gen_hier_log, mean_se, run_group_experiment, run_risk_experiment, sign_test_less, Estimator,
    GroupExperimentConfig, RiskExperimentConfig,
};
use spdshrink::sure::{loss_log, minimize_sure, posterior_estimates, Hyperparams, SiteStats};
use spdshrink::tweedie::{
    default_bins, hotelling_t2_log, lindsey_fit, to_f_stats, tweedie_chi2, tweedie_iterate,
};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn random_spd(dim: usize, rng: &mut impl Rng) -> SpdMatrix {
    let b = DMatrix::from_fn(dim, dim, |_, _| rng.sample::<f64, _>(StandardNormal));
    let m = &b * b.transpose() / dim as f64 + DMatrix::identity(dim, dim) * 0.1;
    SpdMatrix::new(m).unwrap()
}

fn rel_err(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm().max(f64::MIN_POSITIVE)
}

fn geometry() -> Outcome {
    let mut rng = RngStream::new(1, 0).rng();
    let (mut round, mut vround, mut iso, mut fm) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for dim in [2, 3, 6] {
        for _ in 0..100 {
            let x = random_spd(dim, &mut rng);
            let back = sym_exp(&sym_log(&x)).unwrap();
            round = round.max(rel_err(back.as_matrix(), x.as_matrix()));

            let y = sym_log(&random_spd(dim, &mut rng));
            let v = ve(&y);
            vround = vround.max(rel_err(ve_inv(&v).as_matrix(), y.as_matrix()));
            iso = iso.max((v.values().norm() - y.frobenius()).abs() / y.frobenius());
        }
        // gradient descent on Σ ‖S − log Xᵢ‖²_F over symmetric S
        let xs: Vec<SpdMatrix> = (0..20).map(|_| random_spd(dim, &mut rng)).collect();
        let logs: Vec<DMatrix<f64>> = xs.iter().map(|x| sym_log(x).into_matrix()).collect();
        let mut s = DMatrix::<f64>::zeros(dim, dim);
        for _ in 0..2000 {
            let grad = logs.iter().fold(DMatrix::zeros(dim, dim), |g, l| g + (&s - l) * 2.0);
            s -= grad * (0.2 / (2.0 * xs.len() as f64));
        }
        let oracle = sym_exp(&SymMatrix::new(s).unwrap()).unwrap();
        let got = frechet_mean_le(&xs).unwrap();
        fm = fm.max(rel_err(got.as_matrix(), oracle.as_matrix()));
    }
    outcome(
        round <= 1e-9 && vround <= 1e-9 && iso <= 1e-12 && fm <= 1e-8,
        format!("exp∘log {round:.1e}, ve round trip {vround:.1e}, isometry {iso:.1e}, Fréchet mean {fm:.1e}"),
    )
}

/// `|mean(d)| < 4 SE` for paired differences `d`.
fn within_4se(d: &[f64]) -> (bool, f64) {
    let (m, se) = mean_se(d);
    let z = m.abs() / se;
    (z < 4.0, z)
}

fn moments() -> Outcome {
    let (dim, q, n, nu, lambda, m) = (3usize, 6usize, 10usize, 15.0, 10.0, 20000usize);
    let mut rng = RngStream::new(2, 0).rng();
    let psi = random_spd(q, &mut rng);
    let mu = log_vec(&random_spd(dim, &mut rng));
    let iw = WishartParams::new(psi.clone(), nu).unwrap();
    let k = (n - 1) as f64;
    let mut d: Vec<Vec<f64>> = vec![Vec::with_capacity(m); 5];
    for _ in 0..m {
        let sigma = sample_inv_wishart(&iw, &mut rng).unwrap().into_matrix();
        let l = sigma.clone().cholesky().unwrap().l();
        let mi = gaussian_vec(&mu, &(&l / f64::sqrt(lambda)), &mut rng);
        let obs: Vec<DVector<f64>> = (0..n).map(|_| gaussian_vec(&mi, &l, &mut rng)).collect();
        let xbar = obs.iter().fold(DVector::zeros(q), |a, x| a + x) / n as f64;
        let s = obs.iter().fold(DMatrix::zeros(q, q), |a, x| a + (x - &xbar) * (x - &xbar).transpose());

        let (tr_s, tr_sig) = (s.trace(), sigma.trace());
        let (tr_s2, tr_sig2) = ((&s * &s).trace(), (&sigma * &sigma).trace());
        let den = k * (k - 1.0) * (k + 2.0);
        d[0].push(tr_s / k - tr_sig);
        d[1].push((psi.as_matrix() * &s).trace() / k - (psi.as_matrix() * &sigma).trace());
        d[2].push(((k + 1.0) * tr_s * tr_s - 2.0 * tr_s2) / den - tr_sig * tr_sig);
        d[3].push((k * tr_s2 - tr_s * tr_s) / den - tr_sig2);
        d[4].push(((&xbar - &mu).norm_squared() - tr_s / (n as f64 * k)) - (&mi - &mu).norm_squared());
    }

    // Wishart moments at a fixed scale
    let scale = random_spd(q, &mut rng);
    let w = WishartParams::new(scale.clone(), nu).unwrap();
    let sm = scale.as_matrix();
    let (tr, tr2) = (sm.trace(), (sm * sm).trace());
    let mut entries: Vec<Vec<f64>> = vec![Vec::with_capacity(m); q * (q + 1) / 2];
    let mut sq = Vec::with_capacity(m);
    for _ in 0..m {
        let s = sample_wishart(&w, &mut rng).unwrap().into_matrix();
        let mut e = 0;
        for r in 0..q {
            for c in r..q {
                entries[e].push(s[(r, c)] - nu * sm[(r, c)]);
                e += 1;
            }
        }
        sq.push(s.trace().powi(2) - (nu * nu * tr * tr + 2.0 * nu * tr2));
    }

    let names = ["trΣ", "tr(ΨΣ)", "(trΣ)²", "trΣ²", "d²(μ,M)"];
    let mut pass = true;
    let mut parts = Vec::new();
    for (name, di) in names.iter().zip(&d) {
        let (ok, z) = within_4se(di);
        pass &= ok;
        parts.push(format!("{name} z={z:.2}"));
    }
    let zmax = entries.iter().map(|e| within_4se(e).1).fold(0.0, f64::max);
    pass &= zmax < 4.0;
    let (ok, z) = within_4se(&sq);
    pass &= ok;
    parts.push(format!("ES max z={zmax:.2}"));
    parts.push(format!("E(trS)² z={z:.2}"));
    outcome(pass, parts.join(", "))
}

fn default_prior() -> Hyperparams {
    RiskExperimentConfig::default().prior
}

/// SURE and combined loss of the posterior means at `h` on one LNIW dataset.
fn sure_and_loss(prior: &Hyperparams, h: &Hyperparams, p: usize, seed: u64, rep: u32) -> (f64, f64) {
    let s = gen_hier_log(prior, 10, p, seed, rep).unwrap();
    let st = SiteStats::from_log_obs(&s.obs).unwrap();
    let est = posterior_estimates(&st, h).unwrap();
    let means: Vec<DVector<f64>> = est.means.iter().map(log_vec).collect();
    let covs: Vec<DMatrix<f64>> = est.covs.iter().map(|c| c.as_matrix().clone()).collect();
    let (l1, l2) = loss_log(&means, &covs, &s.means_log, &s.covs);
    (est.sure_value, l1 + l2)
}

fn hyper_points() -> Vec<Hyperparams> {
    let d3 = |v: [f64; 3]| SpdMatrix::from_diagonal(&v).unwrap();
    let d6 = |c: f64| SpdMatrix::from_diagonal(&[c; 6]).unwrap();
    vec![
        default_prior(),
        Hyperparams::new(50.0, d3([2.0, 0.5, 0.5]), d6(2.0), 20.0).unwrap(),
        Hyperparams::new(2.0, d3([1.0, 1.0, 1.5]), d6(0.5), 9.0).unwrap(),
    ]
}

fn sure_unbiased() -> Outcome {
    let prior = default_prior();
    let mut pass = true;
    let mut parts = Vec::new();
    for (k, h) in hyper_points().iter().enumerate() {
        let d: Vec<f64> = (0..2000)
            .map(|r| {
                let (s, l) = sure_and_loss(&prior, h, 200, 300 + k as u64, r);
                s - l
            })
            .collect();
        let (ok, z) = within_4se(&d);
        pass &= ok;
        parts.push(format!("point {k}: z={z:.2}"));
    }
    outcome(pass, parts.join(", "))
}

fn sure_consistency() -> Outcome {
    let prior = default_prior();
    let h = &hyper_points()[1];
    let medians: Vec<f64> = [100usize, 400, 1600]
        .iter()
        .map(|&p| {
            let mut gaps: Vec<f64> = (0..20)
                .map(|r| {
                    let (s, l) = sure_and_loss(&prior, h, p, 400, r);
                    (s - l).abs()
                })
                .collect();
            gaps.sort_by(f64::total_cmp);
            0.5 * (gaps[9] + gaps[10])
        })
        .collect();
    outcome(
        medians.windows(2).all(|w| w[1] < w[0]),
        format!(
            "median |SURE − loss| at p = 100, 400, 1600: {}",
            medians.iter().map(|m| format!("{m:.3e}")).collect::<Vec<_>>().join(", ")
        ),
    )
}

struct RiskRun {
    lambda50: spdshrink::sim::RiskTable,
    lambda10: spdshrink::sim::RiskTable,
}

fn risk_runs() -> RiskRun {
    let mut cfg = RiskExperimentConfig {
        p_grid: vec![500],
        reps: 200,
        seed: 5,
        ..RiskExperimentConfig::default()
    };
    let lambda10 = run_risk_experiment(&cfg).unwrap();
    cfg.prior.lambda = 50.0;
    let lambda50 = run_risk_experiment(&cfg).unwrap();
    RiskRun { lambda50, lambda10 }
}

fn losses(t: &spdshrink::sim::RiskTable, e: Estimator) -> &[f64] {
    &t.row(e, 500).unwrap().losses
}

fn risk_dominance(run: &RiskRun) -> Outcome {
    let t = &run.lambda50;
    let full = losses(t, Estimator::SureFullFm);
    let p_fm = sign_test_less(full, losses(t, Estimator::FmLe));
    let p_sure = sign_test_less(full, losses(t, Estimator::SureFm));
    let gap = |t| {
        let d: Vec<f64> = losses(t, Estimator::FmLe)
            .iter()
            .zip(losses(t, Estimator::SureFullFm))
            .map(|(a, b)| a - b)
            .collect();
        mean_se(&d)
    };
    let (g50, se50) = gap(&run.lambda50);
    let (g10, se10) = gap(&run.lambda10);
    let mean = |e| t.row(e, 500).unwrap().mean_loss;
    let pass = p_fm < 0.01
        && p_sure < 0.01
        && mean(Estimator::SureFullFm) < mean(Estimator::FmLe)
        && mean(Estimator::SureFullFm) < mean(Estimator::SureFm)
        && g50 > g10;
    outcome(
        pass,
        format!(
            "mean loss SURE.Full-FM {:.4e}, FM.LE {:.4e}, SURE-FM {:.4e}; sign test p {p_fm:.1e} / {p_sure:.1e}; \
             gap λ=50 {g50:.4e}±{se50:.1e} vs λ=10 {g10:.4e}±{se10:.1e}",
            mean(Estimator::SureFullFm),
            mean(Estimator::FmLe),
            mean(Estimator::SureFm)
        ),
    )
}

fn cov_shrinkage(run: &RiskRun) -> Outcome {
    let t = &run.lambda50;
    let full = losses(t, Estimator::SureFullCov);
    let mle = losses(t, Estimator::MleCov);
    let p = sign_test_less(full, mle);
    let (a, b) = (mean_se(full).0, mean_se(mle).0);
    outcome(
        p < 0.01 && a < b,
        format!("mean ‖Σ̂ − Σ‖² SURE.Full-Cov {a:.4e} vs MLE {b:.4e}; sign test p {p:.1e}"),
    )
}

/// `P(χ²_dof(λ) ≤ x)` by direct Poisson mixture over a fixed long range.
fn chi2_cdf_oracle(x: f64, dof: f64, lambda: f64) -> f64 {
    if lambda == 0.0 {
        return ChiSq::new(dof).unwrap().cdf(x);
    }
    let pois = Poisson::new(lambda / 2.0).unwrap();
    (0..400u64)
        .map(|j| pois.pmf(j) * ChiSq::new(dof + 2.0 * j as f64).unwrap().cdf(x))
        .sum()
}

fn distributions() -> Outcome {
    let mut cdf_err = 0.0f64;
    let mut q_err = 0.0f64;
    for &dof in &[3.0, 6.0] {
        for &lambda in &[0.0, 1.0, 5.0, 25.0] {
            for i in 1..=25 {
                let x = 2.5 * i as f64;
                cdf_err = cdf_err.max((nc_chi2_cdf(x, dof, lambda) - chi2_cdf_oracle(x, dof, lambda)).abs());
            }
            for i in 1..100 {
                let prob = i as f64 / 100.0;
                let x = nc_chi2_quantile(prob, dof, lambda).unwrap();
                q_err = q_err.max((nc_chi2_cdf(x, dof, lambda) - prob).abs());
            }
        }
    }

    // empirical CDF of 10⁶ non-central F draws
    let (d1, d2, lambda) = (3.0, 54.0, 5.0);
    let m = 1_000_000;
    let mut rng = RngStream::new(7, 0).rng();
    let c_rest = ChiSquared::new(d1 - 1.0).unwrap();
    let c_den = ChiSquared::new(d2).unwrap();
    let mut z: Vec<f64> = (0..m)
        .map(|_| {
            let num = (rng.sample::<f64, _>(StandardNormal) + f64::sqrt(lambda)).powi(2) + c_rest.sample(&mut rng);
            (num / d1) / (c_den.sample(&mut rng) / d2)
        })
        .collect();
    z.sort_by(f64::total_cmp);
    let mut ks = 0.0f64;
    for (i, &v) in z.iter().enumerate().step_by(100) {
        let f = nc_f_cdf(v, d1, d2, lambda);
        ks = ks.max((f - i as f64 / m as f64).abs()).max((f - (i + 1) as f64 / m as f64).abs());
    }
    let bound = 3.0 * 1.36 / (m as f64).sqrt();
    outcome(
        cdf_err <= 1e-10 && q_err <= 1e-8 && ks <= bound,
        format!("cdf {cdf_err:.1e}, quantile round trip {q_err:.1e}, F KS {ks:.2e} (bound {bound:.2e})"),
    )
}

fn tweedie_oracle() -> Outcome {
    let (dof, p) = (3.0, 5000);
    let mut rng = RngStream::new(8, 0).rng();
    let y: Vec<f64> = (0..p)
        .map(|_| {
            let lambda: f64 = if rng.random::<bool>() { 8.0 } else { 0.0 };
            let rest: f64 = ChiSquared::new(dof - 1.0).unwrap().sample(&mut rng);
            (rng.sample::<f64, _>(StandardNormal) + lambda.sqrt()).powi(2) + rest
        })
        .collect();
    let fit = match lindsey_fit(&y, 5, default_bins(p)) {
        Ok(f) => f,
        Err(e) => return outcome(false, format!("density fit failed: {e}")),
    };
    let mut sorted = y.clone();
    sorted.sort_by(f64::total_cmp);
    let (lo, hi) = (sorted[p / 100], sorted[p - p / 100 - 1]);
    let (mut worst, mut worst_y, mut bad) = (0.0f64, 0.0, 0usize);
    let mut total = 0usize;
    for &v in sorted.iter().filter(|&&v| v >= lo && v <= hi) {
        let (f0, f8) = (nc_chi2_pdf(v, dof, 0.0), nc_chi2_pdf(v, dof, 8.0));
        let oracle = 8.0 * f8 / (f0 + f8);
        total += 1;
        let rel = match tweedie_chi2(v, dof, &fit) {
            Ok(est) => (est - oracle).abs() / oracle,
            Err(_) => f64::INFINITY,
        };
        if rel > 0.05 {
            bad += 1;
        }
        if rel > worst {
            worst = rel;
            worst_y = v;
        }
    }
    outcome(
        bad == 0,
        format!("{bad} of {total} points beyond 5%; worst relative error {worst:.2} at y = {worst_y:.3}"),
    )
}

fn group_experiment() -> Outcome {
    let cfg = GroupExperimentConfig::default();
    let (mut wins, mut failed) = (0, 0);
    let (mut mse_t, mut mse_m) = (0.0, 0.0);
    for rep in 0..50 {
        match run_group_experiment(&cfg, rep) {
            Ok((_, m)) => {
                wins += usize::from(m.f1_tweedie >= m.f1_mom);
                mse_t += m.mse_tweedie;
                mse_m += m.mse_mom;
            }
            Err(_) => failed += 1,
        }
    }
    outcome(
        wins >= 40 && failed == 0 && mse_t < mse_m,
        format!(
            "F1 Tweedie ≥ MOM in {wins}/50 seeds ({failed} failed); mean MSE Tweedie {:.4e} vs MOM {:.4e}",
            mse_t / 50.0,
            mse_m / 50.0
        ),
    )
}

fn iteration_budgets() -> Outcome {
    let cfg = RiskExperimentConfig::default();
    let mut sure_ok = 0;
    for seed in 0..50u64 {
        let p = cfg.p_grid[seed as usize % cfg.p_grid.len()];
        let s = gen_hier_log(&cfg.prior, cfg.n, p, 1000 + seed, 0).unwrap();
        let fit = minimize_sure(&SiteStats::from_log_obs(&s.obs).unwrap()).unwrap();
        sure_ok += usize::from(fit.converged && fit.iterations < 20);
    }
    let g = GroupExperimentConfig::default();
    let mut tw_ok = 0;
    let mut iters = Vec::new();
    for rep in 0..50 {
        let s = gen_group_log(&g, rep).unwrap();
        let (t2, _) = hotelling_t2_log(&s.group1, &s.group2).unwrap();
        let f = to_f_stats(&t2, g.n1, g.n2, 3).unwrap();
        match tweedie_iterate(&f, &g.tweedie) {
            Ok(map) => {
                iters.push(map.iterations);
                tw_ok += usize::from(map.converged && map.iterations < 10);
            }
            Err(_) => iters.push(0),
        }
    }
    iters.sort_unstable();
    outcome(
        sure_ok >= 48 && tw_ok >= 48,
        format!(
            "SURE minimization < 20 iterations in {sure_ok}/50; Tweedie < 10 iterations in {tw_ok}/50 (median {})",
            iters[25]
        ),
    )
}

fn cli(args: &[&str], threads: &str) -> i32 {
    Command::new(env!("CARGO_BIN_EXE_spdshrink"))
        .env("SPDSHRINK_THREADS", threads)
        .args(args)
        .output()
        .unwrap()
        .status
        .code()
        .unwrap()
}

fn tree_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let path = e.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.push((rel, fs::read(&path).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn determinism() -> Outcome {
    let root = tempfile::tempdir().unwrap();
    let cfg = root.path().join("run.toml");
    fs::write(
        &cfg,
        "seed = 3\n[risk]\np_grid = [50, 100]\nreps = 4\n[groups]\nreps = 2\n[generate]\nkind = \"groups\"\n",
    )
    .unwrap();
    let hier = root.path().join("hier.toml");
    fs::write(&hier, "seed = 3\n[generate]\nkind = \"hier\"\np = 150\n").unwrap();

    let session = |threads: &str, tag: &str| {
        let out = root.path().join(tag);
        let o = |name: &str| out.join(name).to_string_lossy().into_owned();
        let c = cfg.to_string_lossy().into_owned();
        let h = hier.to_string_lossy().into_owned();
        let mut codes = vec![
            cli(&["generate", "--config", &c, "--output", &o("groups")], threads),
            cli(&["generate", "--config", &h, "--output", &o("hier")], threads),
        ];
        codes.push(cli(
            &["estimate", "--input", &o("hier/data.spdf"), "--output", &o("est")],
            threads,
        ));
        codes.push(cli(
            &[
                "groupdiff",
                "--group1",
                &o("groups/group1.spdf"),
                "--group2",
                &o("groups/group2.spdf"),
                "--output",
                &o("diff"),
                "--grid",
                "20,20",
                "--smooth",
                "3",
            ],
            threads,
        ));
        codes.push(cli(&["simulate-risk", "--config", &c, "--output", &o("risk")], threads));
        codes.push(cli(&["simulate-groups", "--config", &c, "--output", &o("sim")], threads));
        (codes, tree_bytes(&out))
    };
    let a = session("1", "a");
    let b = session("1", "b");
    let c = session("4", "c");
    let valid = a.0.iter().all(|&c| c == 0 || c == 3);
    let files = a.1.len();
    outcome(
        valid && a == b && a == c && files >= 15,
        format!("{files} output files, exit codes {:?}; repeat identical: {}; threads 1 vs 4 identical: {}", a.0, a == b, a == c),
    )
}

fn main() {
    type Check = Box<dyn FnOnce() -> Outcome>;
    let risk = std::rc::Rc::new(std::cell::OnceCell::new());
    let (r5, r6) = (risk.clone(), risk);
    let criteria: Vec<(u32, &str, Option<f64>, Check)> = vec![
        (1, "geometry", Some(5.0), Box::new(geometry)),
        (2, "moment identities", Some(120.0), Box::new(moments)),
        (3, "SURE unbiasedness", Some(300.0), Box::new(sure_unbiased)),
        (4, "SURE consistency in p", Some(300.0), Box::new(sure_consistency)),
        (5, "risk dominance", Some(900.0), Box::new(move || risk_dominance(r5.get_or_init(risk_runs)))),
        (6, "covariance shrinkage", None, Box::new(move || cov_shrinkage(r6.get_or_init(risk_runs)))),
        (7, "distribution functions", None, Box::new(distributions)),
        (8, "Tweedie oracle", None, Box::new(tweedie_oracle)),
        (9, "group experiment", Some(600.0), Box::new(group_experiment)),
        (10, "iteration budgets", None, Box::new(iteration_budgets)),
        (11, "CLI determinism", None, Box::new(determinism)),
    ];
    let mut failed = Vec::new();
    for (id, name, budget, check) in criteria {
        let clock = Instant::now();
        let mut o = check();
        let secs = clock.elapsed().as_secs_f64();
        if let Some(b) = budget {
            if secs > b {
                o.pass = false;
                o.detail.push_str(&format!("; over the {b:.0} s budget"));
            }
        }
        let verdict = if o.pass { "PASS" } else { "FAIL" };
        println!("criterion {id:>2} {verdict}  {name}: {} [{secs:.1} s]", o.detail);
        if !o.pass {
            failed.push(id);
        }
    }
    if failed.is_empty() {
        println!("acceptance: all 11 criteria pass");
    } else {
        println!("acceptance: {} of 11 criteria fail: {failed:?}", failed.len());
        std::process::exit(1);
    }
}
