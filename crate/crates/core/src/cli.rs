//! Command-line surface.
//!
//! Exit codes: 0 success, 2 input or configuration error, 3 results written
//! with a numerical warning (non-convergence, repaired input, MOM fallback).

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use crate::error::{Error, Result};
use crate::geometry::{SpdMatrix, SymMatrix};
use crate::io::{
    fmt_f64, read_tensor_field, write_tensor_field, CsvTable, GenerateKind, GenerateSection, RunConfig, SpdCheckMode,
    TensorField,
};
use crate::sim::{
    f1_score, gen_group_images, gen_group_log, gen_hier_dataset, run_group_experiment, run_risk_experiment,
    GroupMetrics,
};
use crate::sure::{
    estimate_fm_known_var, minimize_sure_with, posterior_estimates, site_stats, Fitted, MinimizeConfig, ShrinkageResult,
};
use crate::tweedie::{
    hotelling_t2, mom_noncentrality, smooth_map, to_f_stats, top_fraction_mask, tweedie_iterate, GroupData, Grid,
    NoncentralityMap,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_WARN: i32 = 3;

/// Worker-count cap read from the environment.
pub const THREADS_VAR: &str = "SPDSHRINK_THREADS";

#[derive(Debug, Parser)]
#[command(name = "spdshrink", version, about = "Empirical-Bayes shrinkage for SPD-matrix data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Shrinkage estimates of per-site means and covariances.
    Estimate(EstimateArgs),
    /// Two-group difference detection with Tweedie-corrected non-centralities.
    Groupdiff(GroupdiffArgs),
    /// Monte Carlo risk comparison of the estimators.
    SimulateRisk(SimArgs),
    /// Monte Carlo two-group detection experiment.
    SimulateGroups(SimArgs),
    /// Write a synthetic dataset as tensor-field files.
    Generate(SimArgs),
}

#[derive(Debug, Args)]
struct EstimateArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    /// Mean-only shrinkage with per-site variances estimated from the data.
    #[arg(long)]
    known_variance: bool,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    spd_check: Option<SpdCheckMode>,
}

#[derive(Debug, Args)]
struct GroupdiffArgs {
    #[arg(long)]
    group1: PathBuf,
    #[arg(long)]
    group2: PathBuf,
    #[arg(long)]
    output: PathBuf,
    #[arg(long)]
    top_fraction: Option<f64>,
    /// Moving-average window for the map output.
    #[arg(long)]
    smooth: Option<usize>,
    /// Site grid, e.g. `20,20` or `4,5,6`; enables `maps.csv`.
    #[arg(long, value_delimiter = ',')]
    grid: Option<Vec<usize>>,
    /// CSV with a 0/1 `changed` column and optional `lambda` column per site.
    #[arg(long)]
    truth: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    spd_check: Option<SpdCheckMode>,
}

#[derive(Debug, Args)]
struct SimArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    output: Option<PathBuf>,
    /// Add wall-clock columns (makes output run-dependent).
    #[arg(long)]
    timing: bool,
}

/// Parses `args` (including the program name), runs the command and returns
/// the exit code. Diagnostics go to standard error.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
        }
    };
    let pool = match thread_pool() {
        Ok(p) => p,
        Err(e) => return report(e),
    };
    match pool.install(|| dispatch(cli.command)) {
        Ok(Status::Clean) => EXIT_OK,
        Ok(Status::Warned) => EXIT_WARN,
        Err(e) => report(e),
    }
}

fn report(e: Error) -> i32 {
    eprintln!("error: {e}");
    EXIT_INPUT
}

fn thread_pool() -> Result<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var(THREADS_VAR) {
        let n: usize = v
            .trim()
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| Error::Config(format!("{THREADS_VAR}={v:?} is not a positive integer")))?;
        b = b.num_threads(n);
    }
    b.build().map_err(|e| Error::Config(format!("thread pool: {e}")))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Status {
    Clean,
    Warned,
}

impl Status {
    fn from_warn(warned: bool) -> Self {
        if warned {
            Status::Warned
        } else {
            Status::Clean
        }
    }
}

fn dispatch(cmd: Command) -> Result<Status> {
    match cmd {
        Command::Estimate(a) => estimate(a),
        Command::Groupdiff(a) => groupdiff(a),
        Command::SimulateRisk(a) => simulate_risk(a),
        Command::SimulateGroups(a) => simulate_groups(a),
        Command::Generate(a) => generate(a),
    }
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    path.map_or_else(|| Ok(RunConfig::default()), RunConfig::load)
}

fn output_dir(flag: Option<PathBuf>, cfg: &RunConfig) -> Result<PathBuf> {
    let dir = flag
        .or_else(|| cfg.output.clone())
        .ok_or_else(|| Error::Config("no output directory (use --output or `output` in the config)".into()))?;
    create_dir(&dir)?;
    Ok(dir)
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn load_field(path: &Path, mode: SpdCheckMode) -> Result<(Vec<Vec<SpdMatrix>>, bool)> {
    let TensorField { data, repaired } = read_tensor_field(path, mode.into())?;
    for r in &repaired {
        eprintln!(
            "warning: {}: site {} obs {} not SPD (smallest eigenvalue {:e}); eigenvalues floored",
            path.display(),
            r.site,
            r.obs,
            r.min_eig
        );
    }
    Ok((data, !repaired.is_empty()))
}

/// `key,value` CSV.
struct Summary(CsvTable);

impl Summary {
    fn new() -> Self {
        Summary(CsvTable::new(&["key", "value"]))
    }

    fn put(&mut self, key: &str, value: impl ToString) {
        self.0.push(vec![key.to_string(), value.to_string()]);
    }

    fn num(&mut self, key: &str, value: f64) {
        self.put(key, fmt_f64(value));
    }

    fn matrix(&mut self, key: &str, m: &SpdMatrix) {
        let m = m.as_matrix();
        for r in 0..m.nrows() {
            for c in 0..m.ncols() {
                self.num(&format!("{key}[{r},{c}]"), m[(r, c)]);
            }
        }
    }

    fn write(&self, path: &Path) -> Result<()> {
        self.0.write(path)
    }
}

fn estimate(a: EstimateArgs) -> Result<Status> {
    let cfg = load_config(a.config.as_deref())?;
    let sec = cfg.estimate.clone().unwrap_or_default();
    let mode = a.spd_check.unwrap_or(sec.spd_check);
    let (data, repaired) = load_field(&a.input, mode)?;
    let stats = site_stats(&data)?;
    create_dir(&a.output)?;

    let mut summary = Summary::new();
    summary.put("p", stats.p());
    summary.put("N", stats.dim());
    summary.put("n", stats.n());
    let known = a.known_variance || sec.known_variance;
    let res: ShrinkageResult = if known {
        summary.put("estimator", "SURE-FM");
        estimate_fm_known_var(&stats, None)?
    } else {
        summary.put("estimator", "SURE.Full");
        let mcfg = MinimizeConfig {
            optim: crate::optimize::OptimConfig {
                grad_tol: sec.grad_tol,
                max_iters: sec.max_iters,
                ..Default::default()
            },
            multi_start: sec.multi_start,
        };
        let fit = minimize_sure_with(&stats, &mcfg)?;
        summary.num("sure_init", fit.init_value);
        let mut r = posterior_estimates(&stats, &fit.hyper)?;
        r.sure_value = fit.sure_value;
        r.iterations = fit.iterations;
        r.converged = fit.converged;
        r
    };
    summary.num("sure", res.sure_value);
    summary.put("iterations", res.iterations);
    summary.put("converged", res.converged);
    summary.num("lambda", res.fitted.lambda());
    summary.matrix("mu", res.fitted.mu());
    if let Fitted::Full(h) = &res.fitted {
        summary.num("nu", h.nu);
        summary.matrix("psi", &h.psi);
    }

    write_tensor_field(&a.output.join("means.spdf"), &one_per_site(&res.means))?;
    let covs: Option<Vec<Vec<SpdMatrix>>> = res
        .covs
        .iter()
        .map(|c: &SymMatrix| SpdMatrix::new(c.as_matrix().clone()).ok().map(|s| vec![s]))
        .collect();
    match &covs {
        Some(c) => write_tensor_field(&a.output.join("covs.spdf"), c)?,
        None => eprintln!("warning: covariance estimates are singular (n <= q); covs.spdf not written"),
    }
    summary.put("covs_written", covs.is_some());
    summary.write(&a.output.join("summary.csv"))?;

    if !res.converged {
        eprintln!("warning: optimizer did not converge in {} iterations", res.iterations);
    }
    Ok(Status::from_warn(!res.converged || repaired))
}

fn one_per_site(v: &[SpdMatrix]) -> Vec<Vec<SpdMatrix>> {
    v.iter().map(|x| vec![x.clone()]).collect()
}

/// Tweedie map, or MOM estimates when the density fit breaks down.
fn noncentrality(f: &crate::tweedie::FStatistics, cfg: &crate::tweedie::TweedieConfig) -> Result<(NoncentralityMap, Option<String>)> {
    match tweedie_iterate(f, cfg) {
        Ok(m) => Ok((m, None)),
        Err(e @ (Error::IrlsDiverged(_) | Error::DegenerateSupport | Error::TooFewSamples { .. })) => {
            let mom = mom_noncentrality(f)?;
            Ok((
                NoncentralityMap {
                    selection: top_fraction_mask(&mom, cfg.top_fraction),
                    lambda_tweedie: mom.clone(),
                    fallback: vec![true; mom.len()],
                    lambda_mom: mom,
                    iterations: 0,
                    converged: false,
                    max_change: f64::NAN,
                },
                Some(e.to_string()),
            ))
        }
        Err(e) => Err(e),
    }
}

fn groupdiff(a: GroupdiffArgs) -> Result<Status> {
    let cfg = load_config(a.config.as_deref())?;
    let sec = cfg.groupdiff.clone().unwrap_or_default();
    let mode = a.spd_check.unwrap_or(sec.spd_check);
    let top = a.top_fraction.unwrap_or(sec.top_fraction);
    let tcfg = sec.tweedie.to_config(top)?;
    let window = a.smooth.unwrap_or(sec.smooth);
    if window == 0 {
        return Err(Error::Config("--smooth must be at least 1".into()));
    }
    let grid = a.grid.clone().or(sec.grid.clone());

    let (g1, r1) = load_field(&a.group1, mode)?;
    let (g2, r2) = load_field(&a.group2, mode)?;
    let data = GroupData::new(g1, g2)?;
    let p = data.group1.len();
    if let Some(shape) = &grid {
        if !(2..=3).contains(&shape.len()) || shape.iter().product::<usize>() != p {
            return Err(Error::Config(format!("grid {shape:?} does not match {p} sites")));
        }
    }
    let truth = a.truth.as_deref().map(|t| read_truth(t, p)).transpose()?;
    create_dir(&a.output)?;

    let (n1, n2) = (data.group1[0].len(), data.group2[0].len());
    let q = crate::geometry::sym_dim(data.group1[0][0].dim());
    let (t2, _) = hotelling_t2(&data)?;
    let f = to_f_stats(&t2, n1, n2, q)?;
    let (map, fallback) = noncentrality(&f, &tcfg)?;
    if let Some(why) = &fallback {
        eprintln!("warning: density fit failed ({why}); reporting MOM estimates");
    } else if !map.converged {
        eprintln!(
            "warning: Tweedie iteration did not converge in {} iterations (max change {})",
            map.iterations, map.max_change
        );
    }

    let mut sites = CsvTable::new(&["site", "t2", "z", "lambda_mom", "lambda_tweedie", "selected", "fallback"]);
    for i in 0..p {
        sites.push(vec![
            i.to_string(),
            fmt_f64(t2[i]),
            fmt_f64(f.z[i]),
            fmt_f64(map.lambda_mom[i]),
            fmt_f64(map.lambda_tweedie[i]),
            u8::from(map.selection[i]).to_string(),
            u8::from(map.fallback[i]).to_string(),
        ]);
    }
    sites.write(&a.output.join("sites.csv"))?;

    if let Some(shape) = &grid {
        let smooth = |v: &[f64]| smooth_map(&Grid::new(shape.clone(), v.to_vec()).expect("shape checked"), window).values;
        let (mom, tw) = (smooth(&map.lambda_mom), smooth(&map.lambda_tweedie));
        let mut header = vec!["site".to_string()];
        header.extend((0..shape.len()).map(|d| format!("i{d}")));
        header.extend(["lambda_mom".into(), "lambda_tweedie".into()]);
        let mut maps = CsvTable {
            header,
            rows: Vec::with_capacity(p),
        };
        for i in 0..p {
            let mut row = vec![i.to_string()];
            let mut rem = i;
            let mut coords = vec![0; shape.len()];
            for d in (0..shape.len()).rev() {
                coords[d] = rem % shape[d];
                rem /= shape[d];
            }
            row.extend(coords.iter().map(usize::to_string));
            row.extend([fmt_f64(mom[i]), fmt_f64(tw[i])]);
            maps.rows.push(row);
        }
        maps.write(&a.output.join("maps.csv"))?;
    }

    let mut summary = Summary::new();
    summary.put("p", p);
    summary.put("n1", n1);
    summary.put("n2", n2);
    summary.put("q", q);
    summary.num("dof1", f.dof1);
    summary.num("dof2", f.dof2);
    summary.num("top_fraction", top);
    summary.put("selected", map.selection.iter().filter(|&&s| s).count());
    summary.put("iterations", map.iterations);
    summary.put("converged", map.converged);
    summary.num("max_change", map.max_change);
    summary.put("fallback_sites", map.fallback.iter().filter(|&&b| b).count());
    summary.put("density_fit", if fallback.is_some() { "failed" } else { "ok" });
    if let Some((changed, lambda)) = &truth {
        let m = metrics(&map, top, changed, lambda.as_deref());
        summary.num("f1_tweedie", m.f1_tweedie);
        summary.num("f1_mom", m.f1_mom);
        summary.num("mse_tweedie", m.mse_tweedie);
        summary.num("mse_mom", m.mse_mom);
    }
    summary.write(&a.output.join("summary.csv"))?;
    Ok(Status::from_warn(r1 || r2 || fallback.is_some() || !map.converged))
}

fn read_truth(path: &Path, p: usize) -> Result<(Vec<bool>, Option<Vec<f64>>)> {
    let t = CsvTable::read(path)?;
    let bad = |why: &str| Error::Config(format!("{}: {why}", path.display()));
    let changed = t
        .column("changed")
        .ok_or_else(|| bad("missing `changed` column"))?
        .into_iter()
        .map(|s| match s.trim() {
            "0" => Ok(false),
            "1" => Ok(true),
            other => Err(bad(&format!("`changed` value {other:?} is not 0 or 1"))),
        })
        .collect::<Result<Vec<_>>>()?;
    if changed.len() != p {
        return Err(bad(&format!("{} rows for {p} sites", changed.len())));
    }
    let lambda = match t.column("lambda") {
        None => None,
        Some(_) => Some(t.column_f64("lambda").ok_or_else(|| bad("unparseable `lambda` value"))?),
    };
    Ok((changed, lambda))
}

fn metrics(map: &NoncentralityMap, top: f64, changed: &[bool], lambda: Option<&[f64]>) -> GroupMetrics {
    let mse = |est: &[f64]| {
        let Some(truth) = lambda else { return f64::NAN };
        let errs: Vec<f64> = (0..est.len())
            .filter(|&i| changed[i])
            .map(|i| (est[i] - truth[i]).powi(2))
            .collect();
        crate::sim::mean_se(&errs).0
    };
    GroupMetrics {
        f1_tweedie: f1_score(&map.selection, changed),
        f1_mom: f1_score(&top_fraction_mask(&map.lambda_mom, top), changed),
        mse_tweedie: mse(&map.lambda_tweedie),
        mse_mom: mse(&map.lambda_mom),
    }
}

fn seed_of(flag: Option<u64>, cfg: &RunConfig) -> u64 {
    flag.or(cfg.seed).unwrap_or(0)
}

fn simulate_risk(a: SimArgs) -> Result<Status> {
    let cfg = load_config(a.config.as_deref())?;
    let rcfg = cfg.risk.clone().unwrap_or_default().to_config(seed_of(a.seed, &cfg))?;
    let out = output_dir(a.output, &cfg)?;
    let clock = Instant::now();
    let table = run_risk_experiment(&rcfg)?;

    let mut header = vec!["estimator", "p", "mean_loss", "se", "reps", "failures"];
    if a.timing {
        header.push("runtime");
    }
    let mut csv = CsvTable::new(&header);
    for r in &table.rows {
        let mut row = vec![
            r.estimator.to_string(),
            r.p.to_string(),
            fmt_f64(r.mean_loss),
            fmt_f64(r.se),
            r.losses.len().to_string(),
            r.failures.to_string(),
        ];
        if a.timing {
            row.push(fmt_f64(r.runtime));
        }
        csv.push(row);
    }
    csv.write(&out.join("risk_table.csv"))?;

    let mut header = vec!["p".to_string()];
    header.extend(rcfg.estimators.iter().map(|e| e.to_string()));
    let mut plot = CsvTable {
        header,
        rows: Vec::new(),
    };
    for &p in &rcfg.p_grid {
        let mut row = vec![p.to_string()];
        for &e in &rcfg.estimators {
            row.push(fmt_f64(table.row(e, p).expect("every cell is filled").mean_loss));
        }
        plot.rows.push(row);
    }
    plot.write(&out.join("risk_plot.csv"))?;
    if a.timing {
        eprintln!("elapsed {:.3} s", clock.elapsed().as_secs_f64());
    }

    let failures: usize = table.rows.iter().map(|r| r.failures).sum();
    if failures > 0 {
        eprintln!("warning: {failures} estimator runs failed and were recorded as NaN");
    }
    Ok(Status::from_warn(failures > 0))
}

fn simulate_groups(a: SimArgs) -> Result<Status> {
    let cfg = load_config(a.config.as_deref())?;
    let sec = cfg.groups.clone().unwrap_or_default();
    let gcfg = sec.to_config(seed_of(a.seed, &cfg))?;
    let out = output_dir(a.output, &cfg)?;

    let mut header = vec![
        "rep",
        "f1_tweedie",
        "f1_mom",
        "mse_tweedie",
        "mse_mom",
        "iterations",
        "converged",
        "error",
    ];
    if a.timing {
        header.push("runtime");
    }
    let mut csv = CsvTable::new(&header);
    let mut warned = false;
    let mut wins = 0usize;
    let mut ok = 0usize;
    let (mut mse_t, mut mse_m) = (Vec::new(), Vec::new());
    for rep in 0..sec.reps {
        let clock = Instant::now();
        let res = run_group_experiment(&gcfg, rep as u32);
        let secs = clock.elapsed().as_secs_f64();
        let mut row = vec![rep.to_string()];
        match &res {
            Ok((map, m)) => {
                ok += 1;
                wins += usize::from(m.f1_tweedie >= m.f1_mom);
                mse_t.push(m.mse_tweedie);
                mse_m.push(m.mse_mom);
                warned |= !map.converged;
                row.extend([m.f1_tweedie, m.f1_mom, m.mse_tweedie, m.mse_mom].map(fmt_f64));
                row.extend([map.iterations.to_string(), map.converged.to_string(), String::new()]);
            }
            Err(e) => {
                warned = true;
                row.extend([f64::NAN; 4].map(fmt_f64));
                row.extend(["0".to_string(), "false".to_string(), e.to_string()]);
            }
        }
        if a.timing {
            row.push(fmt_f64(secs));
        }
        csv.push(row);
    }
    csv.write(&out.join("metrics.csv"))?;

    let mut summary = Summary::new();
    summary.put("reps", sec.reps);
    summary.put("completed", ok);
    summary.put("f1_tweedie_ge_mom", wins);
    summary.num("mean_mse_tweedie", crate::sim::mean_se(&mse_t).0);
    summary.num("mean_mse_mom", crate::sim::mean_se(&mse_m).0);
    summary.write(&out.join("metrics_summary.csv"))?;

    // maps of the first replication, for plotting
    let sample = gen_group_log(&gcfg, 0)?;
    let mut maps = CsvTable::new(&[
        "site",
        "row",
        "col",
        "changed",
        "lambda_true",
        "lambda_mom",
        "lambda_tweedie",
        "selected_tweedie",
        "selected_mom",
    ]);
    let (h, w) = gcfg.grid;
    let first = run_group_experiment(&gcfg, 0).ok();
    let smooth = |v: &[f64]| smooth_map(&Grid::new(vec![h, w], v.to_vec()).expect("grid matches p"), sec.smooth).values;
    let (mom, tw, sel_t, sel_m) = match &first {
        Some((map, _)) => (
            smooth(&map.lambda_mom),
            smooth(&map.lambda_tweedie),
            map.selection.clone(),
            top_fraction_mask(&map.lambda_mom, gcfg.tweedie.top_fraction),
        ),
        None => {
            let p = gcfg.p();
            (vec![f64::NAN; p], vec![f64::NAN; p], vec![false; p], vec![false; p])
        }
    };
    for i in 0..gcfg.p() {
        maps.push(vec![
            i.to_string(),
            (i / w).to_string(),
            (i % w).to_string(),
            u8::from(gcfg.changed_region[i]).to_string(),
            fmt_f64(sample.truth_lambda[i]),
            fmt_f64(mom[i]),
            fmt_f64(tw[i]),
            u8::from(sel_t[i]).to_string(),
            u8::from(sel_m[i]).to_string(),
        ]);
    }
    maps.write(&out.join("group_maps.csv"))?;
    if ok < sec.reps {
        eprintln!("warning: {} of {} replications failed", sec.reps - ok, sec.reps);
    }
    Ok(Status::from_warn(warned))
}

fn generate(a: SimArgs) -> Result<Status> {
    let cfg = load_config(a.config.as_deref())?;
    let seed = seed_of(a.seed, &cfg);
    let out = output_dir(a.output, &cfg)?;
    let GenerateSection { kind, p, rep } = cfg.generate.clone().unwrap_or_default();
    match kind {
        GenerateKind::Hier => {
            let rcfg = cfg.risk.clone().unwrap_or_default().to_config(seed)?;
            let (data, truth) = gen_hier_dataset(&rcfg, p, rep)?;
            write_tensor_field(&out.join("data.spdf"), &data)?;
            write_tensor_field(&out.join("truth_means.spdf"), &one_per_site(&truth.means))?;
            write_tensor_field(&out.join("truth_covs.spdf"), &one_per_site(&truth.covs))?;
        }
        GenerateKind::Groups => {
            let gcfg = cfg.groups.clone().unwrap_or_default().to_config(seed)?;
            let (data, lambda) = gen_group_images(&gcfg, rep)?;
            write_tensor_field(&out.join("group1.spdf"), &data.group1)?;
            write_tensor_field(&out.join("group2.spdf"), &data.group2)?;
            let mut t = CsvTable::new(&["site", "changed", "lambda"]);
            for (i, l) in lambda.iter().enumerate() {
                t.push(vec![
                    i.to_string(),
                    u8::from(gcfg.changed_region[i]).to_string(),
                    fmt_f64(*l),
                ]);
            }
            t.write(&out.join("truth.csv"))?;
        }
    }
    Ok(Status::Clean)
}
