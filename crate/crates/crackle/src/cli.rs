//! Command-line driver. Subcommands exchange data through files in the
//! output directory so any step can be rerun on its own.

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crackle_core::limits::{ConstantsTable, LimitEstimate, MeanMeasure, RegionSpec, Shape};
use crackle_core::model::{RadialSampler, ScalingPlan};
use crackle_core::ph::{crackle_diagram_with, DiagramOptions, DiagramVariant};
use crackle_core::rng::trial_seed;

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::io::{self, DiagramRow, LambdaRow};
use crate::manifest::{now_unix, RunManifest};
use crate::plot;
use crate::verify::{self, PairRecord, SizeFilter, TestReport, TrialBatch, TrialOptions};

/// Directory holding a cached `constants.txt`.
pub const CONSTANTS_DIR_ENV: &str = "CRACKLE_CONSTANTS_DIR";
pub const CONSTANTS_FILE: &str = "constants.txt";

pub const EXIT_PASS: i32 = 0;
pub const EXIT_FAIL: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "crackle", version, about = "Topological crackle simulations and limit checks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Run configuration (key = value lines).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed; overrides run.seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory; overrides output.dir.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Trial count; overrides run.trials.
    #[arg(long, global = true)]
    pub trials: Option<u64>,
    /// Worker threads; overrides run.threads.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Draw one cloud at the first intensity of the ladder.
    Sample,
    /// Crackle diagrams of a cloud file, or of fresh trials.
    Diagram {
        /// Cloud CSV to use instead of sampling trials
        #[arg(long)]
        cloud: Option<PathBuf>,
    },
    /// Limiting mean measure of every test region.
    Integrate,
    /// Run all configured checks and write the reports.
    Verify,
    /// Render a diagram file as SVG.
    Plot {
        /// Diagram CSV; defaults to diagram.csv in the output directory
        #[arg(long)]
        diagram: Option<PathBuf>,
    },
    /// Summarize a reports file and check the manifest digests.
    Report,
}

/// Parses arguments, runs the command and returns the exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_PASS };
            let _ = e.print();
            return code;
        }
    };
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::Parse { .. } => EXIT_USAGE,
        _ => EXIT_RUNTIME,
    }
}

/// Effective configuration after command-line overrides.
pub fn effective_config(cli: &Cli) -> Result<RunConfig> {
    let mut c = match &cli.config {
        Some(p) => RunConfig::load(p).map_err(|e| match e {
            Error::Io { .. } => Error::Config(e.to_string()),
            other => other,
        })?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        c.seed = s;
    }
    if let Some(t) = cli.trials {
        if t == 0 {
            return Err(Error::Config("--trials must be at least 1".into()));
        }
        c.trials = t;
    }
    if let Some(t) = cli.threads {
        c.threads = t;
    }
    if let Some(o) = &cli.out {
        c.output_dir = o.to_string_lossy().into_owned();
    }
    Ok(c)
}

/// Region constants from the cache directory named by [`CONSTANTS_DIR_ENV`];
/// the built-in table is written there on first use.
pub fn load_constants() -> Result<ConstantsTable> {
    let Some(dir) = std::env::var_os(CONSTANTS_DIR_ENV) else {
        return Ok(ConstantsTable::builtin());
    };
    let dir = PathBuf::from(dir);
    let path = dir.join(CONSTANTS_FILE);
    match std::fs::read_to_string(&path) {
        Ok(text) => ConstantsTable::parse(&text).map_err(|(line, msg)| Error::parse(&path, line, msg)),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            let table = ConstantsTable::builtin();
            std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            std::fs::write(&path, table.to_text()).map_err(|e| Error::io(&path, e))?;
            Ok(table)
        }
        Err(e) => Err(Error::io(&path, e)),
    }
}

/// Expected number of points sampled per trial, i.e. in the shell `|x| >= R - 2M`.
pub fn expected_points(plan: &ScalingPlan) -> f64 {
    let r0 = plan.r - 2.0 * plan.m_scale;
    if r0 <= 0.0 {
        plan.n
    } else {
        plan.n * plan.tail.ln_survival(r0).exp()
    }
}

fn check_budget(plan: &ScalingPlan, limit: u64) -> Result<()> {
    let expected = expected_points(plan);
    if expected > limit as f64 {
        return Err(Error::BudgetExceeded { expected, limit });
    }
    Ok(())
}

fn out_dir(cfg: &RunConfig) -> Result<PathBuf> {
    let dir = PathBuf::from(&cfg.output_dir);
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    Ok(dir)
}

pub fn run(cli: &Cli) -> Result<i32> {
    let cfg = effective_config(cli)?;
    if cfg.threads > 0 {
        // a global pool can only be installed once per process
        let _ = rayon::ThreadPoolBuilder::new().num_threads(cfg.threads).build_global();
    }
    let started = now_unix();
    let dir = out_dir(&cfg)?;
    let name = match cli.command {
        Command::Sample => "sample",
        Command::Diagram { .. } => "diagram",
        Command::Integrate => "integrate",
        Command::Verify => "verify",
        Command::Plot { .. } => "plot",
        Command::Report => return cmd_report(&dir),
    };
    let mut manifest = RunManifest::new(name, &cfg.to_text(), started);
    // earlier commands in the same directory keep their entries
    if let Ok(previous) = RunManifest::read(&dir) {
        manifest.files = previous.files;
    }
    let table = load_constants()?;
    let code = match &cli.command {
        Command::Sample => {
            cmd_sample(&cfg, &dir, &mut manifest)?;
            EXIT_PASS
        }
        Command::Diagram { cloud } => {
            cmd_diagram(&cfg, cloud.as_deref(), &dir, &mut manifest)?;
            EXIT_PASS
        }
        Command::Integrate => {
            cmd_integrate(&cfg, &table, &dir, &mut manifest)?;
            EXIT_PASS
        }
        Command::Verify => {
            if cmd_verify(&cfg, &table, &dir, &mut manifest)? {
                EXIT_PASS
            } else {
                EXIT_FAIL
            }
        }
        Command::Plot { diagram } => {
            let path = diagram.clone().unwrap_or_else(|| dir.join("diagram.csv"));
            cmd_plot(&cfg, &table, &path, &dir, &mut manifest)?;
            EXIT_PASS
        }
        Command::Report => unreachable!(),
    };
    let config_path = dir.join("config.txt");
    std::fs::write(&config_path, cfg.to_text()).map_err(|e| Error::io(&config_path, e))?;
    manifest.add(&dir, "config.txt")?;
    manifest.write(&dir)?;
    Ok(code)
}

pub fn cmd_sample(cfg: &RunConfig, dir: &Path, manifest: &mut RunManifest) -> Result<PathBuf> {
    let n = cfg.n_ladder[0];
    if n > cfg.max_points as f64 {
        return Err(Error::BudgetExceeded { expected: n, limit: cfg.max_points });
    }
    let cloud = RadialSampler::new(cfg.tail_model()?).sample_cloud(n, trial_seed(cfg.seed, 0))?;
    let path = dir.join("cloud.csv");
    io::write_cloud(&path, &cloud)?;
    manifest.add(dir, "cloud.csv")?;
    Ok(path)
}

fn rows_of(trial: u64, pairs: &[PairRecord]) -> impl Iterator<Item = DiagramRow> + '_ {
    pairs.iter().map(move |p| DiagramRow { trial, pair: p.clone() })
}

/// Runs the trials of one rung, appending each finished trial to `trials_file`.
fn run_rung(cfg: &RunConfig, plan: &ScalingPlan, tilde: bool, trials_file: &Path) -> Result<TrialBatch> {
    check_budget(plan, cfg.max_points)?;
    let f = File::create(trials_file).map_err(|e| Error::io(trials_file, e))?;
    let mut w = BufWriter::new(f);
    let mut failure = None;
    let opts = TrialOptions { tilde, m_cap: cfg.m_cap, ..Default::default() };
    let batch = verify::run_trials_with(plan, cfg.trials, cfg.seed, opts, |t| {
        if failure.is_none() {
            let line = serde_json::to_string(t).expect("trial record serializes");
            if let Err(e) = writeln!(w, "{line}") {
                failure = Some(e);
            }
        }
    });
    if let Some(e) = failure {
        return Err(Error::io(trials_file, e));
    }
    w.flush().map_err(|e| Error::io(trials_file, e))?;
    Ok(batch)
}

pub fn cmd_diagram(cfg: &RunConfig, cloud: Option<&Path>, dir: &Path, manifest: &mut RunManifest) -> Result<PathBuf> {
    let plan = cfg.plans()?[0];
    let rows: Vec<DiagramRow> = match cloud {
        Some(path) => {
            let cloud = io::read_cloud(path)?;
            if cloud.dim != plan.dim() {
                return Err(Error::Config(format!("cloud has dimension {}, config {}", cloud.dim, plan.dim())));
            }
            let d = crackle_diagram_with(&cloud, &plan, DiagramVariant::Isolated, DiagramOptions { m_cap: cfg.m_cap })?;
            let pairs: Vec<PairRecord> = d.pairs.iter().map(|p| PairRecord::from_pair(p, plan.m_scale)).collect();
            rows_of(0, &pairs).collect()
        }
        None => {
            let batch = run_rung(cfg, &plan, false, &dir.join("trials.jsonl"))?;
            manifest.add(dir, "trials.jsonl")?;
            batch.trials.iter().flat_map(|t| rows_of(t.index, &t.pairs)).collect()
        }
    };
    let path = dir.join("diagram.csv");
    io::write_diagram(&path, &rows)?;
    manifest.add(dir, "diagram.csv")?;
    Ok(path)
}

/// Mean-measure job for the configured tail.
pub fn measure_job(cfg: &RunConfig, p: usize) -> Result<MeanMeasure> {
    let tail = cfg.tail_model()?;
    Ok(match tail.c_limit(cfg.m_scale) {
        None => {
            let crate::config::TailSpec::Pareto { alpha } = cfg.tail else { unreachable!("heavy tails are pareto") };
            MeanMeasure::heavy(cfg.k, p, alpha, cfg.dim, cfg.mc_samples, cfg.mc_seed)?
        }
        Some(c) => MeanMeasure::exponential(cfg.k, p, c, cfg.dim, cfg.mc_samples, cfg.mc_seed)?,
    })
}

fn kind_name(job: &MeanMeasure) -> &'static str {
    match job.kind {
        crackle_core::limits::MeasureKind::Heavy { .. } => "heavy",
        crackle_core::limits::MeasureKind::Exponential { .. } => "exponential",
    }
}

fn resolve_tests(cfg: &RunConfig, table: &ConstantsTable) -> Result<Vec<(String, Shape)>> {
    cfg.test_regions()?.into_iter().map(|(name, spec)| Ok((name, spec.resolve(table)?))).collect()
}

fn integrate(cfg: &RunConfig, tests: &[(String, Shape)]) -> Result<(Vec<LimitEstimate>, &'static str)> {
    if tests.is_empty() {
        return Ok((Vec::new(), ""));
    }
    let job = measure_job(cfg, cfg.p)?;
    let shapes: Vec<Shape> = tests.iter().map(|t| t.1.clone()).collect();
    let est = verify::estimate_to_precision(&job, &shapes, cfg.mc_rel_target, cfg.mc_max_samples.max(cfg.mc_samples))?;
    Ok((est, kind_name(&job)))
}

fn lambda_rows(tests: &[(String, Shape)], est: &[LimitEstimate], kind: &str) -> Vec<LambdaRow> {
    tests
        .iter()
        .zip(est)
        .map(|((name, _), e)| LambdaRow {
            region: name.clone(),
            kind: kind.into(),
            lambda: e.value,
            stderr: e.stderr,
            samples: e.samples,
            acceptance_rate: e.acceptance_rate,
        })
        .collect()
}

pub fn cmd_integrate(cfg: &RunConfig, table: &ConstantsTable, dir: &Path, manifest: &mut RunManifest) -> Result<PathBuf> {
    let tests = resolve_tests(cfg, table)?;
    let (est, kind) = integrate(cfg, &tests)?;
    let path = dir.join("lambda.csv");
    io::write_lambda(&path, &lambda_rows(&tests, &est, kind))?;
    manifest.add(dir, "lambda.csv")?;
    Ok(path)
}

fn tag(report: &mut TestReport, what: &str, n: f64) {
    report.name = format!("{}:{what}@n={n:e}", report.name);
}

/// Runs every configured check. Returns whether all reports passed.
pub fn cmd_verify(cfg: &RunConfig, table: &ConstantsTable, dir: &Path, manifest: &mut RunManifest) -> Result<bool> {
    let plans = cfg.plans()?;
    for plan in &plans {
        check_budget(plan, cfg.max_points)?;
    }
    let tests = resolve_tests(cfg, table)?;
    let (lambdas, kind) = integrate(cfg, &tests)?;
    io::write_lambda(&dir.join("lambda.csv"), &lambda_rows(&tests, &lambdas, kind))?;
    manifest.add(dir, "lambda.csv")?;

    let (k, p) = (cfg.k, cfg.p);
    let coverage = match &cfg.coverage {
        Some(c) if p >= k + 3 => Some((crate::config::parse_region(&c.region)?.resolve(table)?, c)),
        _ => None,
    };
    let lifespan = match cfg.lifespan {
        Some(l) => {
            let floor = crackle_core::limits::lifespan_floor(table, l.t, k, p)?;
            let jt = RegionSpec::JT { t: l.t, k, p }.resolve(table)?;
            let job = measure_job(cfg, p)?;
            let est = verify::estimate_to_precision(&job, &[jt], cfg.mc_rel_target, cfg.mc_max_samples.max(cfg.mc_samples))?;
            Some((l, floor, est[0]))
        }
        None => None,
    };

    let mut reports = Vec::new();
    let mut coverage_rungs = Vec::new();
    let mut rung_means: Vec<Vec<verify::RungSummary>> = vec![Vec::new(); tests.len()];
    for (ri, plan) in plans.iter().enumerate() {
        let file = if plans.len() == 1 { "trials.jsonl".to_string() } else { format!("trials_{ri}.jsonl") };
        let batch = run_rung(cfg, plan, false, &dir.join(&file))?;
        manifest.add(dir, &file)?;
        let failed_trials = batch.trials.iter().filter(|t| t.error.is_some()).count();
        if failed_trials > 0 {
            let mut r = TestReport {
                name: format!("trial_errors@n={:e}", plan.n),
                statistic: "failed_trials".into(),
                observed: failed_trials as f64,
                reference: 0.0,
                reference_stderr: 0.0,
                p_value: None,
                tolerance: 0.0,
                rule: "no trial fails".into(),
                passed: false,
                flags: Vec::new(),
                details: Default::default(),
            };
            r.flags.push(batch.trials.iter().find_map(|t| t.error.clone()).unwrap_or_default());
            reports.push(r);
        }
        for (ti, ((name, shape), lam)) in tests.iter().zip(&lambdas).enumerate() {
            let counts = verify::counts(&batch, shape, SizeFilter::exactly(p), false);
            let mut gof = verify::poisson_gof(&counts, lam);
            if !(lam.stderr < cfg.mc_rel_target * lam.value) {
                gof.flags.push("mean measure estimate above the relative error target".into());
            }
            tag(&mut gof, name, plan.n);
            reports.push(gof);
            let mut hm = verify::hit_miss_estimate(&counts, lam);
            tag(&mut hm, name, plan.n);
            reports.push(hm);
            if p >= k + 3 {
                let under = verify::counts(&batch, shape, SizeFilter::exactly(p - 1), false);
                let (mean, variance) = verify::mean_var(&under);
                rung_means[ti].push(verify::RungSummary {
                    density_scale: plan.density_scale(),
                    mean,
                    variance,
                    trials: cfg.trials,
                });
            }
        }
        if let Some((shape, spec)) = &coverage {
            let mut r = verify::coverage_fraction(&batch, shape, spec.eps)?;
            tag(&mut r, "coverage", plan.n);
            coverage_rungs.push(r);
        }
        if let Some((l, floor, lam)) = &lifespan {
            let mut r = verify::lifespan_law(&batch, l.t, *floor, l.delta, lam);
            tag(&mut r, "lifespan", plan.n);
            reports.push(r);
        }
    }
    if let Some((_, spec)) = &coverage {
        reports.extend(coverage_rungs.iter().cloned());
        reports.push(verify::coverage_trend(&coverage_rungs, spec.threshold));
    }
    for ((name, _), rungs) in tests.iter().zip(&rung_means) {
        if rungs.len() < 2 {
            continue;
        }
        match verify::moment_scaling(rungs, (-1.15, -0.85)) {
            Ok(mut r) => {
                r.name = format!("moment_scaling:{name}");
                reports.push(r);
            }
            Err(e @ (Error::InsufficientSpread(_) | Error::DegenerateTest(_))) => eprintln!("moment scaling skipped: {e}"),
            Err(e) => return Err(e),
        }
    }
    let path = dir.join("reports.jsonl");
    io::write_reports(&path, &reports)?;
    manifest.add(dir, "reports.jsonl")?;
    Ok(reports.iter().all(|r| r.passed))
}

pub fn cmd_plot(cfg: &RunConfig, table: &ConstantsTable, diagram: &Path, dir: &Path, manifest: &mut RunManifest) -> Result<PathBuf> {
    let rows = io::read_diagram(diagram)?;
    let (svg, conf) = plot::render_svg(&rows, cfg.k, cfg.p, table)?;
    if conf.unchecked > 0 {
        eprintln!("{} pairs have no region constants and were not checked", conf.unchecked);
    }
    let path = dir.join("diagram.svg");
    std::fs::write(&path, svg).map_err(|e| Error::io(&path, e))?;
    manifest.add(dir, "diagram.svg")?;
    Ok(path)
}

pub fn cmd_report(dir: &Path) -> Result<i32> {
    let (reports, summary) = io::read_reports(&dir.join("reports.jsonl"))?;
    for r in &reports {
        println!(
            "{} {} {}={:.6} reference={:.6} tol={:.6}",
            if r.passed { "PASS" } else { "FAIL" },
            r.name,
            r.statistic,
            r.observed,
            r.reference,
            r.tolerance
        );
    }
    println!("{} of {} passed", summary.total - summary.failed, summary.total);
    if let Ok(m) = RunManifest::read(dir) {
        let stale = m.stale(dir);
        if !stale.is_empty() {
            eprintln!("files changed since the run: {}", stale.join(", "));
            return Ok(EXIT_RUNTIME);
        }
    }
    Ok(if summary.passed { EXIT_PASS } else { EXIT_FAIL })
}
