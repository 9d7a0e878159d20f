use std::path::Path;

use crackle::cli::{self, main_with, EXIT_FAIL, EXIT_PASS, EXIT_RUNTIME, EXIT_USAGE};
use crackle::config::RunConfig;
use crackle::core::limits::ConstantsTable;
use crackle::io;
use crackle::manifest::RunManifest;
use crackle::Error;

const SMALL: &str = "
tail.kind = pareto
tail.alpha = 3
tail.dim = 2
plan.k = 1
plan.p = 3
plan.m = 1
plan.n = 1e4
run.trials = 30
run.seed = 3
test.a = inset(rect(0.2, 1.0, 0.3, 1.3) & delta(1, 3), 0.02)
mc.samples = 65536
mc.max_samples = 262144
";

fn write_config(dir: &Path, text: &str) -> String {
    let p = dir.join("run.conf");
    std::fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

fn crackle(args: &[&str]) -> i32 {
    main_with(std::iter::once("crackle").chain(args.iter().copied()))
}

#[test]
fn sample_writes_a_cloud_that_rereads_bitwise() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "plan.n = 10\n");
    let out = dir.path().join("o");
    assert_eq!(crackle(&["sample", "--config", &cfg, "--out", out.to_str().unwrap()]), EXIT_PASS);
    let text = std::fs::read_to_string(out.join("cloud.csv")).unwrap();
    assert!(text.starts_with("x0,x1\n"));
    let rows = text.lines().count() - 1;
    assert!(rows < 40, "{rows}");
    let cloud = io::read_cloud(&out.join("cloud.csv")).unwrap();
    io::write_cloud(&out.join("again.csv"), &cloud).unwrap();
    assert_eq!(std::fs::read(out.join("again.csv")).unwrap(), text.as_bytes());
}

#[test]
fn oversized_runs_are_refused() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig { n_ladder: vec![1e12], output_dir: dir.path().to_string_lossy().into(), ..Default::default() };
    let mut m = RunManifest::new("sample", "", 0);
    match cli::cmd_sample(&cfg, dir.path(), &mut m) {
        Err(e @ Error::BudgetExceeded { limit, .. }) => {
            assert_eq!(limit, cfg.max_points);
            assert!(e.to_string().contains(&cfg.max_points.to_string()));
        }
        other => panic!("{other:?}"),
    }
    let path = write_config(dir.path(), "plan.n = 1e12\n");
    assert_eq!(crackle(&["sample", "--config", &path, "--out", dir.path().to_str().unwrap()]), EXIT_RUNTIME);
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(crackle(&["frobnicate"]), EXIT_USAGE);
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "plan.unknown = 1\n");
    assert_eq!(crackle(&["verify", "--config", &cfg, "--out", dir.path().to_str().unwrap()]), EXIT_USAGE);
    assert_eq!(crackle(&["verify", "--config", "/nonexistent.conf"]), EXIT_USAGE);
}

#[test]
fn diagram_plot_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = dir.path().join("o");
    let o = out.to_str().unwrap();
    assert_eq!(crackle(&["sample", "--config", &cfg, "--out", o]), EXIT_PASS);
    let cloud = out.join("cloud.csv");
    assert_eq!(crackle(&["diagram", "--config", &cfg, "--out", o, "--cloud", cloud.to_str().unwrap()]), EXIT_PASS);
    let single = io::read_diagram(&out.join("diagram.csv")).unwrap();
    assert!(single.iter().all(|r| r.trial == 0));
    assert_eq!(crackle(&["diagram", "--config", &cfg, "--out", o, "--trials", "20"]), EXIT_PASS);
    let rows = io::read_diagram(&out.join("diagram.csv")).unwrap();
    assert!(rows.windows(2).all(|w| (w[0].trial, w[0].pair.birth_scaled) <= (w[1].trial, w[1].pair.birth_scaled)));
    assert_eq!(crackle(&["plot", "--config", &cfg, "--out", o]), EXIT_PASS);
    let svg = std::fs::read_to_string(out.join("diagram.svg")).unwrap();
    assert!(svg.contains("delta-boundary"));
    let manifest = RunManifest::read(&out).unwrap();
    for f in ["cloud.csv", "diagram.csv", "trials.jsonl", "diagram.svg", "config.txt"] {
        assert!(manifest.files.iter().any(|e| e.path == f), "{f} missing");
    }
    assert!(manifest.stale(&out).is_empty());
}

#[test]
fn empty_diagram_plots_regions_only() {
    let dir = tempfile::tempdir().unwrap();
    let diagram = dir.path().join("empty.csv");
    std::fs::write(&diagram, "trial,component_id,m,dim,birth,death,birth_scaled,death_scaled\n").unwrap();
    let cfg = write_config(dir.path(), "plan.p = 4\n");
    let o = dir.path().join("o");
    assert_eq!(
        crackle(&["plot", "--config", &cfg, "--out", o.to_str().unwrap(), "--diagram", diagram.to_str().unwrap()]),
        EXIT_PASS
    );
    let svg = std::fs::read_to_string(o.join("diagram.svg")).unwrap();
    assert!(svg.contains("class=\"band\"") && !svg.contains("class=\"pair"));
}

#[test]
fn verify_is_deterministic_and_reports_are_consistent() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let ca = crackle(&["verify", "--config", &cfg, "--out", a.to_str().unwrap()]);
    let cb = crackle(&["verify", "--config", &cfg, "--out", b.to_str().unwrap(), "--threads", "1"]);
    assert_eq!(ca, cb);
    assert!(ca == EXIT_PASS || ca == EXIT_FAIL);
    for f in ["reports.jsonl", "lambda.csv", "trials.jsonl"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    let (reports, summary) = io::read_reports(&a.join("reports.jsonl")).unwrap();
    assert_eq!(reports.len(), 2);
    assert!(reports.iter().all(|r| !r.rule.is_empty()));
    assert_eq!(crackle(&["report", "--out", a.to_str().unwrap()]), if summary.passed { EXIT_PASS } else { EXIT_FAIL });
    std::fs::write(a.join("lambda.csv"), "tampered").unwrap();
    assert_eq!(crackle(&["report", "--out", a.to_str().unwrap()]), EXIT_RUNTIME);
}

#[test]
fn integrate_writes_lambda_table() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let o = dir.path().join("o");
    assert_eq!(crackle(&["integrate", "--config", &cfg, "--out", o.to_str().unwrap()]), EXIT_PASS);
    let rows = io::read_lambda(&o.join("lambda.csv")).unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0].kind, "heavy");
    assert!(rows[0].lambda > 0.5 && rows[0].lambda < 3.0, "{:?}", rows[0]);
}

#[test]
fn constants_cache_round_trip() {
    let table = ConstantsTable::builtin();
    assert_eq!(ConstantsTable::parse(&table.to_text()).unwrap(), table);
}
