//! Acceptance criteria, run in order with one PASS/FAIL line each. Criteria
//! that fail print the numbers needed to see why.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::OnceLock;
use std::time::Instant;

use crackle::cli::main_with;
use crackle::core::limits::{
    lifespan_floor, optimize_b, optimize_pi, ConstantsTable, LimitEstimate, MeanMeasure, OptimizerOptions, RegionSpec,
    Shape, BATCH_SIZE,
};
use crackle::core::model::{PointCloud, Regime, ScalingPlan, TailModel};
use crackle::core::ph::{crackle_diagram_with, naive_diagram_oracle, point_set_pairs, DiagramOptions, DiagramVariant};
use crackle::core::rng::stream_rng;
use crackle::io;
use crackle::verify::{self, RungSummary, SizeFilter, TrialBatch, TrialOptions};
use rand::Rng;

struct Outcome {
    passed: bool,
    summary: String,
    notes: Vec<String>,
}

impl Outcome {
    fn new(passed: bool, summary: String) -> Self {
        Self { passed, summary, notes: Vec::new() }
    }

    fn note(mut self, s: String) -> Self {
        self.notes.push(s);
        self
    }
}

fn table() -> ConstantsTable {
    ConstantsTable::builtin()
}

fn pareto() -> TailModel {
    TailModel::pareto(3.0, 2).unwrap()
}

/// `[0.2, 1.0] x [0.3, 1.3] ∩ Δ_{1,3}` shrunk by 0.02.
fn region_a() -> Shape {
    RegionSpec::Inset {
        region: Box::new(RegionSpec::Intersection(vec![
            RegionSpec::Rect { x0: 0.2, x1: 1.0, y0: 0.3, y1: 1.3 },
            RegionSpec::DeltaKM { k: 1, m: 3 },
        ])),
        margin: 0.02,
    }
    .resolve(&table())
    .unwrap()
}

fn coverage_region() -> Shape {
    RegionSpec::Intersection(vec![RegionSpec::BKM { k: 1, m: 3 }, RegionSpec::Rect { x0: 0.1, x1: 1.2, y0: 0.0, y1: 1e6 }])
        .resolve(&table())
        .unwrap()
}

/// Mean measure to `stderr / value < 0.05`.
fn lambda(job: MeanMeasure, regions: &[Shape]) -> Vec<LimitEstimate> {
    verify::estimate_to_precision(&job, regions, 0.05, BATCH_SIZE * 8192).unwrap()
}

const LADDER: [f64; 3] = [1e4, 4e4, 1.6e5];
const LADDER_TRIALS: u64 = 1000;

fn ladder(regime: Regime) -> Vec<TrialBatch> {
    LADDER
        .iter()
        .map(|&n| {
            let plan = ScalingPlan::with_regime(pareto(), 1, 4, n, 1.0, regime).unwrap();
            let opts = TrialOptions { tilde: true, ..TrialOptions::default() };
            verify::run_trials_with(&plan, LADDER_TRIALS, 41, opts, |_| {})
        })
        .collect()
}

fn critical_ladder() -> &'static [TrialBatch] {
    static L: OnceLock<Vec<TrialBatch>> = OnceLock::new();
    L.get_or_init(|| ladder(Regime::Critical))
}

fn subcritical_ladder() -> &'static [TrialBatch] {
    static L: OnceLock<Vec<TrialBatch>> = OnceLock::new();
    L.get_or_init(|| ladder(Regime::Subcritical { kappa: 1.5 }))
}

fn mean_count(batch: &TrialBatch, region: &Shape, filter: SizeFilter) -> (f64, f64) {
    let c = verify::counts(batch, region, filter, false);
    let (m, v) = verify::mean_var(&c);
    (m, (v / c.len() as f64).sqrt())
}

fn fmt_list(xs: &[f64]) -> String {
    xs.iter().map(|x| format!("{x:.4}")).collect::<Vec<_>>().join(", ")
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let plan = ScalingPlan { tail: pareto(), k: 1, p: 3, n: 1.0, m_scale: 1e6, r: 0.0, regime: Regime::Critical };
    let mut mismatches = 0;
    let mut worst = 0.0f64;
    let mut pairs_seen = 0;
    for i in 0..200u64 {
        let mut rng = stream_rng(2024, i);
        let n = rng.random_range(1..=7);
        let coords: Vec<f64> = (0..2 * n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let cloud = PointCloud::new(2, coords, i, 0.0);
        let d = crackle_diagram_with(&cloud, &plan, DiagramVariant::Isolated, DiagramOptions { m_cap: 64 }).unwrap();
        let mut got: Vec<(f64, f64)> = d.pairs.iter().map(|p| (p.birth, p.death)).collect();
        let refs: Vec<&[f64]> = cloud.points().collect();
        let mut want: Vec<(f64, f64)> = naive_diagram_oracle(&refs, 1).unwrap().iter().map(|p| (p.birth, p.death)).collect();
        got.sort_by(|a, b| a.partial_cmp(b).unwrap());
        want.sort_by(|a, b| a.partial_cmp(b).unwrap());
        pairs_seen += want.len();
        if got.len() != want.len() {
            mismatches += 1;
            continue;
        }
        for (g, w) in got.iter().zip(&want) {
            worst = worst.max((g.0 - w.0).abs()).max((g.1 - w.1).abs());
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let passed = mismatches == 0 && worst < 1e-9 && secs < 10.0;
    Outcome::new(
        passed,
        format!("200 clouds, {pairs_seen} oracle pairs, {mismatches} multiset mismatches, max |Δ| = {worst:.2e}, {secs:.2} s (< 10 s)"),
    )
}

fn criterion_2() -> Outcome {
    let pairs = |pts: &[[f64; 2]]| {
        let coords = pts.iter().flatten().copied().collect();
        point_set_pairs(&PointCloud::new(2, coords, 0, 0.0), 1).unwrap()
    };
    let square = pairs(&[[0.0, 0.0], [2.0, 0.0], [2.0, 2.0], [0.0, 2.0]]);
    let tri = pairs(&[[0.0, 0.0], [2.0, 0.0], [1.0, 3f64.sqrt()]]);
    let obtuse = pairs(&[[0.0, 0.0], [4.0, 0.0], [2.0, 0.5]]);
    let close = |got: &[(f64, f64)], b: f64, d: f64| got.len() == 1 && (got[0].0 - b).abs() < 1e-9 && (got[0].1 - d).abs() < 1e-9;
    let ok_sq = close(&square, 1.0, 2f64.sqrt());
    let ok_tri = close(&tri, 1.0, 2.0 / 3f64.sqrt());
    let ok_obtuse = obtuse.is_empty();
    Outcome::new(ok_sq && ok_tri && ok_obtuse, format!("square {square:?}, equilateral {tri:?}, obtuse {obtuse:?}"))
}

fn criterion_3() -> Outcome {
    let start = Instant::now();
    let opts = OptimizerOptions::default();
    let pi13 = optimize_pi(1, 3, 2, &opts).unwrap().value;
    let b13 = optimize_b(1, 3, 2, &opts).unwrap().value;
    let pi14 = optimize_pi(1, 4, 2, &opts).unwrap().value;
    let secs = start.elapsed().as_secs_f64();
    let e_pi = (pi13 - 2.0 / 3f64.sqrt()).abs();
    let e_b = (b13 - 2f64.sqrt()).abs();
    let passed = e_pi < 1e-3 && e_b < 1e-3 && pi14 >= 2f64.sqrt() - 1e-6 && secs < 120.0;
    Outcome::new(
        passed,
        format!("π_1,3 = {pi13:.9} (err {e_pi:.1e}), b_1,3 = {b13:.9} (err {e_b:.1e}), π_1,4 = {pi14:.9}, {secs:.1} s (< 120 s)"),
    )
}

fn criterion_4() -> Outcome {
    let a = region_a();
    let lam = lambda(MeanMeasure::heavy(1, 3, 3.0, 2, BATCH_SIZE * 16, 11).unwrap(), std::slice::from_ref(&a))[0];
    let plan = ScalingPlan::critical(pareto(), 1, 3, 1e4, 1.0).unwrap();
    let batch = verify::run_trials(&plan, 1000, 7);
    let counts = verify::counts(&batch, &a, SizeFilter::exactly(3), false);
    let r = verify::poisson_gof(&counts, &lam);
    let mut out = Outcome::new(
        r.passed,
        format!(
            "R = {:.2}, λ̂ = {:.4} ± {:.4}, mean = {:.4}, chi-square p = {:.3e}, void {:.3} vs e^-λ̂ = {:.3}",
            plan.r,
            lam.value,
            lam.stderr,
            r.details["mean"],
            r.p_value.unwrap_or(f64::NAN),
            r.details["void_observed"],
            r.details["void_expected"]
        ),
    );
    out = out.note(format!("n M^d f(R) = {:.4} at n = 1e4", plan.density_scale()));
    for (n, trials) in [(1e6, 300u64), (1e7, 150)] {
        let plan = ScalingPlan::critical(pareto(), 1, 3, n, 1.0).unwrap();
        let b = verify::run_trials(&plan, trials, 7);
        let (m, se) = mean_count(&b, &a, SizeFilter::exactly(3));
        out = out.note(format!(
            "same statistic at n = {n:e} ({trials} trials): mean = {m:.4} ± {se:.4}, n M^d f(R) = {:.4}",
            plan.density_scale()
        ));
    }
    out
}

fn criterion_5() -> Outcome {
    let a = region_a();
    let l = critical_ladder();
    let m5: Vec<f64> = l.iter().map(|b| mean_count(b, &a, SizeFilter::exactly(5)).0).collect();
    let m3: Vec<f64> = l.iter().map(|b| mean_count(b, &a, SizeFilter::exactly(3)).0).collect();
    let m4: Vec<f64> = l.iter().map(|b| mean_count(b, &a, SizeFilter::exactly(4)).0).collect();
    let tilde3: Vec<f64> = l
        .iter()
        .map(|b| verify::mean_var(&verify::counts(b, &a, SizeFilter::exactly(3), true)).0)
        .collect();
    let decreasing = m5.windows(2).all(|w| w[1] < w[0]);
    let top_small = *m5.last().unwrap() < 0.1;
    let doubling = m3.windows(2).all(|w| w[1] >= 2.0 * w[0]);
    Outcome::new(
        decreasing && top_small && doubling,
        format!(
            "size-5 means [{}] (decreasing: {decreasing}, top < 0.1: {top_small}); size-3 means [{}] (x2 per rung: {doubling})",
            fmt_list(&m5),
            fmt_list(&m3)
        ),
    )
    .note(format!("size-4 means [{}]", fmt_list(&m4)))
    .note(format!("size-3 means with the connected-only variant [{}]", fmt_list(&tilde3)))
    .note(format!(
        "n M^d f(R) along the ladder: [{}]",
        fmt_list(&l.iter().map(|b| b.plan.density_scale()).collect::<Vec<_>>())
    ))
}

fn criterion_6() -> Outcome {
    let a = region_a();
    let rungs: [(f64, u64); 6] = [(1e4, 400), (1e5, 300), (1e6, 150), (1e7, 60), (1e8, 25), (1.2e9, 12)];
    let mut summaries = Vec::new();
    for (n, trials) in rungs {
        let plan = ScalingPlan::critical(pareto(), 1, 4, n, 1.0).unwrap();
        let b = verify::run_trials(&plan, trials, 43);
        let c = verify::counts(&b, &a, SizeFilter::exactly(3), false);
        let (mean, variance) = verify::mean_var(&c);
        summaries.push(RungSummary { density_scale: plan.density_scale(), mean, variance, trials });
    }
    let xs: Vec<f64> = summaries.iter().map(|s| s.density_scale).collect();
    let ms: Vec<f64> = summaries.iter().map(|s| s.mean).collect();
    match verify::moment_scaling(&summaries, (-1.15, -0.85)) {
        Ok(r) => {
            let tail: Vec<RungSummary> = summaries[summaries.len() - 3..].to_vec();
            let tail_slope = verify::moment_scaling(&tail, (-1.15, -0.85)).map(|t| t.observed);
            let mut out = Outcome::new(
                r.passed,
                format!(
                    "slope = {:.3} (95% CI {:.3} .. {:.3}), required [-1.15, -0.85]",
                    r.observed, r.details["ci95_low"], r.details["ci95_high"]
                ),
            )
            .note(format!("n M^d f(R) = [{}]", fmt_list(&xs)))
            .note(format!("mean size-3 counts = [{}]", fmt_list(&ms)))
            .note(format!(
                "variance constant κ = {:.4}, worst Var / (κ / n M^d f(R)) = {:.3}",
                r.details["variance_kappa"], r.details["variance_worst_ratio"]
            ));
            if let Ok(s) = tail_slope {
                out = out.note(format!("slope over the three highest rungs alone = {s:.3}"));
            }
            out
        }
        Err(e) => Outcome::new(false, format!("{e}; n M^d f(R) = [{}]", fmt_list(&xs))),
    }
}

fn coverage_along(l: &[TrialBatch]) -> (Vec<verify::TestReport>, verify::TestReport) {
    let region = coverage_region();
    let rungs: Vec<_> = l.iter().map(|b| verify::coverage_fraction(b, &region, 0.05).unwrap()).collect();
    let trend = verify::coverage_trend(&rungs, 0.95);
    (rungs, trend)
}

fn criterion_7() -> Outcome {
    let (rungs, trend) = coverage_along(critical_ladder());
    let fr: Vec<f64> = rungs.iter().map(|r| r.observed).collect();
    Outcome::new(
        trend.passed,
        format!(
            "mean covered fraction [{}] over {} cells (non-decreasing: {}, top >= 0.95: {})",
            fmt_list(&fr),
            rungs[0].details["cells"],
            trend.details["monotone"] == 1.0,
            trend.observed >= 0.95
        ),
    )
}

fn criterion_8() -> Outcome {
    let a = region_a();
    let l = subcritical_ladder();
    let m4: Vec<f64> = l.iter().map(|b| mean_count(b, &a, SizeFilter::exactly(4)).0).collect();
    let (rungs, trend) = coverage_along(l);
    let fr: Vec<f64> = rungs.iter().map(|r| r.observed).collect();
    let decreasing = m4.windows(2).all(|w| w[1] < w[0]);
    let top_small = *m4.last().unwrap() < 0.1;
    let lam = lambda(MeanMeasure::heavy(1, 4, 3.0, 2, BATCH_SIZE * 64, 12).unwrap(), std::slice::from_ref(&a))[0];
    // inflating R by κ multiplies the scaling left side by κ^{d - αp}
    let limit = lam.value * 1.5f64.powf(2.0 - 12.0);
    Outcome::new(
        decreasing && top_small && trend.passed,
        format!(
            "size-4 means [{}] (decreasing: {decreasing}, top < 0.1: {top_small}); coverage [{}] (criterion 7 rule: {})",
            fmt_list(&m4),
            fmt_list(&fr),
            trend.passed
        ),
    )
    .note(format!(
        "critical size-4 limit λ̂(A) = {:.3} ± {:.3}; at κ = 1.5 the limiting mean is λ̂ κ^(d-αp) = {limit:.4}",
        lam.value, lam.stderr
    ))
}

fn criterion_9() -> Outcome {
    let a = region_a();
    let tail = TailModel::von_mises_power(1.0, 2).unwrap();
    let c = tail.c_limit(1.0).unwrap();
    let lam = lambda(MeanMeasure::exponential(1, 3, c, 2, BATCH_SIZE * 16, 11).unwrap(), std::slice::from_ref(&a))[0];
    let plan = ScalingPlan::critical(tail, 1, 3, 1e4, 1.0).unwrap();
    let batch = verify::run_trials(&plan, 1000, 9);
    let counts = verify::counts(&batch, &a, SizeFilter::exactly(3), false);
    let gof = verify::poisson_gof(&counts, &lam);

    // c = ∞ proxy: τ = 0.5 has a(z) / M → ∞
    let proxy = TailModel::von_mises_power(0.5, 2).unwrap();
    let c_inf = proxy.c_limit(1.0).unwrap();
    let sets: Vec<Shape> = [(0.2, 0.6, 0.2, 0.7), (0.65, 1.0, 0.65, 1.2), (1.05, 1.4, 1.05, 1.6)]
        .iter()
        .map(|&(x0, x1, y0, y1)| {
            RegionSpec::Intersection(vec![RegionSpec::Rect { x0, x1, y0, y1 }, RegionSpec::DeltaKM { k: 1, m: 3 }])
                .resolve(&table())
                .unwrap()
        })
        .collect();
    let samples = BATCH_SIZE * 64;
    let e = verify::estimate_parallel(&MeanMeasure::exponential(1, 3, c_inf, 2, samples, 5).unwrap(), &sets).unwrap();
    let h = verify::estimate_parallel(&MeanMeasure::heavy(1, 3, 3.0, 2, samples, 5).unwrap(), &sets).unwrap();
    let ratios: Vec<(f64, f64)> = e
        .iter()
        .zip(&h)
        .map(|(e, h)| {
            let r = e.value / h.value;
            (r, r * ((e.stderr / e.value).powi(2) + (h.stderr / h.value).powi(2)).sqrt())
        })
        .collect();
    let constant = ratios.iter().all(|a| ratios.iter().all(|b| (a.0 - b.0).abs() <= 3.0 * (a.1 + b.1)));
    Outcome::new(
        gof.passed && constant,
        format!(
            "c = {c}: R = {:.3}, λ̂ = {:.4} ± {:.4}, mean = {:.4}, chi-square p = {:.3e}, GOF rule: {}; c = ∞ ratios [{}] constant: {constant}",
            plan.r,
            lam.value,
            lam.stderr,
            gof.details["mean"],
            gof.p_value.unwrap_or(f64::NAN),
            gof.passed,
            fmt_list(&ratios.iter().map(|r| r.0).collect::<Vec<_>>())
        ),
    )
    .note(format!("n M^d f(R) = {:.4} at n = 1e4", plan.density_scale()))
}

fn criterion_10() -> Outcome {
    let t = 0.8 * table().b(1, 3).unwrap();
    let floor = lifespan_floor(&table(), t, 1, 4).unwrap();
    let delta = 0.1;
    let jt = RegionSpec::JT { t, k: 1, p: 4 }.resolve(&table()).unwrap();
    let shifted = RegionSpec::Intersection(vec![RegionSpec::JT { t, k: 1, p: 4 }, RegionSpec::MinLifespan { l: floor + delta }])
        .resolve(&table())
        .unwrap();
    let est = lambda(MeanMeasure::heavy(1, 4, 3.0, 2, BATCH_SIZE * 64, 13).unwrap(), &[jt, shifted]);
    let batch = critical_ladder().last().unwrap();
    let r = verify::lifespan_law(batch, t, floor, delta, &est[0]);
    Outcome::new(
        r.passed,
        format!(
            "t = {t:.4}, floor = {floor:.4}, n = {:e}: P(T > floor + 0.1) = {:.4} vs 1 - e^-λ̂(J_t) = {:.4} (λ̂ = {:.3} ± {:.3}), 3 se = {:.4}",
            batch.plan.n, r.observed, r.reference, est[0].value, est[0].stderr, r.tolerance
        ),
    )
    .note(format!("trials with no pair born by t: {}", r.details["trials_empty"]))
    .note(format!(
        "with J_t restricted to lifespans above floor + 0.1: λ̂ = {:.3} ± {:.3}, 1 - e^-λ̂ = {:.4}",
        est[1].value,
        est[1].stderr,
        1.0 - (-est[1].value).exp()
    ))
}

fn criterion_11() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.conf");
    std::fs::write(
        &cfg,
        "plan.p = 4\nplan.n_ladder = 1e4, 4e4\nrun.trials = 50\ntest.a = inset(rect(0.2, 1.0, 0.3, 1.3) & delta(1, 3), 0.02)\n\
         coverage.region = b(1, 3) & rect(0.1, 1.2, 0, 1e6)\nlifespan.t = 1.1\nmc.max_samples = 1048576\n",
    )
    .unwrap();
    let run = |name: &str| {
        let out = dir.path().join(name);
        let code = main_with(["crackle", "verify", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
        (code, out)
    };
    let (ca, a) = run("a");
    let (cb, b) = run("b");
    let mut problems = Vec::new();
    if ca != cb || !(ca == 0 || ca == 1) {
        problems.push(format!("exit codes {ca} / {cb}"));
    }
    let mut compared = 0;
    for entry in std::fs::read_dir(&a).unwrap() {
        let name = entry.unwrap().file_name().into_string().unwrap();
        if name == "manifest.json" || name == "config.txt" {
            continue;
        }
        compared += 1;
        if std::fs::read(a.join(&name)).unwrap() != std::fs::read(b.join(&name)).unwrap() {
            problems.push(format!("{name} differs"));
        }
    }
    // every format rewrites byte-identically after a read
    let sample = main_with(["crackle", "sample", "--config", cfg.to_str().unwrap(), "--out", a.to_str().unwrap()]);
    let diagram = main_with(["crackle", "diagram", "--config", cfg.to_str().unwrap(), "--out", a.to_str().unwrap()]);
    if sample != 0 || diagram != 0 {
        problems.push("sample/diagram failed".into());
    }
    let re = dir.path().join("re");
    std::fs::create_dir_all(&re).unwrap();
    let same = |x: &std::path::Path, y: &std::path::Path| std::fs::read(x).unwrap() == std::fs::read(y).unwrap();
    io::write_cloud(&re.join("cloud.csv"), &io::read_cloud(&a.join("cloud.csv")).unwrap()).unwrap();
    io::write_diagram(&re.join("diagram.csv"), &io::read_diagram(&a.join("diagram.csv")).unwrap()).unwrap();
    io::write_lambda(&re.join("lambda.csv"), &io::read_lambda(&a.join("lambda.csv")).unwrap()).unwrap();
    let (reports, _) = io::read_reports(&a.join("reports.jsonl")).unwrap();
    io::write_reports(&re.join("reports.jsonl"), &reports).unwrap();
    for f in ["cloud.csv", "diagram.csv", "lambda.csv", "reports.jsonl"] {
        if !same(&a.join(f), &re.join(f)) {
            problems.push(format!("{f} does not round-trip"));
        }
    }
    let manifest = crackle::manifest::RunManifest::read(&a).unwrap();
    let stale = manifest.stale(&a);
    if !stale.is_empty() {
        problems.push(format!("manifest digests stale: {stale:?}"));
    }
    Outcome::new(
        problems.is_empty(),
        format!("{compared} output files compared across two runs, {} reports, problems: {problems:?}", reports.len()),
    )
}

fn main() {
    let criteria: [(u32, &str, fn() -> Outcome); 11] = [
        (1, "oracle equivalence", criterion_1),
        (2, "exact geometry", criterion_2),
        (3, "region constants", criterion_3),
        (4, "Poisson limit, heavy tail", criterion_4),
        (5, "oversize vanishing / undersize divergence", criterion_5),
        (6, "moment scaling", criterion_6),
        (7, "coverage of B_1,3", criterion_7),
        (8, "subcritical regime", criterion_8),
        (9, "exponential tail", criterion_9),
        (10, "maximal lifespan law", criterion_10),
        (11, "determinism and formats", criterion_11),
    ];
    let filter: Option<u32> = std::env::var("ACCEPTANCE_ONLY").ok().and_then(|s| s.parse().ok());
    let mut failed = Vec::new();
    for (id, name, run) in criteria {
        if filter.is_some_and(|f| f != id) {
            continue;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(run))
            .unwrap_or_else(|e| {
                let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
                Outcome::new(false, format!("panicked: {}", msg.unwrap_or_default()))
            });
        let verdict = if outcome.passed { "PASS" } else { "FAIL" };
        println!("criterion {id:>2} {verdict} [{name}] ({:.1} s) {}", start.elapsed().as_secs_f64(), outcome.summary);
        for n in &outcome.notes {
            println!("               note: {n}");
        }
        if !outcome.passed {
            failed.push(id);
        }
    }
    if failed.is_empty() {
        println!("acceptance: all criteria passed");
    } else {
        println!("acceptance: failed criteria {failed:?}");
        std::process::exit(1);
    }
}
