use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn predloop(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_predloop")).args(args).output().unwrap()
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn text(b: &[u8]) -> String {
    String::from_utf8_lossy(b).into_owned()
}

#[test]
fn missing_config_is_a_runtime_error_naming_the_path() {
    let out = predloop(&["run", "missing.cfg"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(text(&out.stderr).contains("missing.cfg"), "{}", text(&out.stderr));
}

#[test]
fn usage_errors_exit_1() {
    for args in [&["run", "--wat", "x"][..], &["bogus"], &[], &["dbbuild"]] {
        let out = predloop(args);
        assert_eq!(out.status.code(), Some(1), "{args:?}");
        assert!(text(&out.stderr).contains("Usage"), "{args:?}");
    }
    assert_eq!(predloop(&["--help"]).status.code(), Some(0));
}

#[test]
fn analyze_six_row_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let out = predloop(&[
        "analyze",
        fixture("results_6.csv").to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    let mut r = csv::Reader::from_path(dir.path().join("correlations.csv")).unwrap();
    let n_col = r.headers().unwrap().iter().position(|h| h == "n").unwrap();
    let rows: Vec<_> = r.records().map(|r| r.unwrap()).collect();
    assert!(!rows.is_empty());
    assert!(rows.iter().all(|r| &r[n_col] == "6"));
    for f in ["results.csv", "scatter.csv", "summary.txt"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
}

#[test]
fn analyze_rejects_unknown_csv() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("other.csv");
    fs::write(&bad, "a,b\n1,2\n").unwrap();
    let out = predloop(&["analyze", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(text(&out.stderr).contains("other.csv"));
}

#[test]
fn replay_shipped_log() {
    let out = predloop(&["replay", fixture("scenario_000.csv").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    assert!(text(&out.stdout).contains("verified"));
}

#[test]
fn replay_detects_a_tampered_log() {
    let dir = tempfile::tempdir().unwrap();
    for ext in ["csv", "decisions.csv", "predictions.csv", "meta.toml"] {
        let name = format!("scenario_000.{ext}");
        fs::copy(fixture(&name), dir.path().join(&name)).unwrap();
    }
    let states = dir.path().join("scenario_000.csv");
    let body = fs::read_to_string(&states).unwrap();
    let mut lines: Vec<String> = body.lines().map(String::from).collect();
    // Nudge the ego's x at a late tick.
    let i = lines.len() - 5;
    let mut cells: Vec<String> = lines[i].split(',').map(String::from).collect();
    let x: f64 = cells[3].parse().unwrap();
    cells[3] = format!("{}", x + 0.5);
    lines[i] = cells.join(",");
    fs::write(&states, lines.join("\n") + "\n").unwrap();
    let out = predloop(&["replay", states.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(text(&out.stderr).contains("replay diverged"), "{}", text(&out.stderr));
}

#[test]
fn run_then_analyze_report_dbbuild_and_replay() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("small.toml");
    fs::write(
        &cfg,
        r#"
[experiment]
name = "small"
scenarios_per_predictor = 2
base_seed = 5
n_exo = 4
horizon_ticks = 240
static_scenarios = 1
database_scenarios = 1
write_logs = true

[[predictors]]
id = "cv"
kind = "cv"

[[predictors]]
id = "ca"
kind = "ca"
"#,
    )
    .unwrap();
    let run_dir = dir.path().join("run");
    let out = predloop(&["run", cfg.to_str().unwrap(), "--out", run_dir.to_str().unwrap(), "--threads", "1"]);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    assert!(text(&out.stdout).contains("experiment: small"));

    let analysis = dir.path().join("analysis");
    let out = predloop(&[
        "analyze",
        run_dir.join("metrics.csv").to_str().unwrap(),
        "--out",
        analysis.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    let results = fs::read_to_string(analysis.join("results.csv")).unwrap();
    assert_eq!(results.lines().count(), 3);

    let before = fs::read(run_dir.join("results.csv")).unwrap();
    let out = predloop(&["report", run_dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    assert_eq!(fs::read(run_dir.join("results.csv")).unwrap(), before);

    let logs: Vec<String> = ["cv/scenario_000.csv", "ca/scenario_001.csv"]
        .iter()
        .map(|l| run_dir.join("logs").join(l).to_str().unwrap().to_string())
        .collect();
    for log in &logs {
        let out = predloop(&["replay", log]);
        assert_eq!(out.status.code(), Some(0), "{log}: {}", text(&out.stderr));
    }
    let db = dir.path().join("db.csv");
    let mut args = vec!["dbbuild", "-o", db.to_str().unwrap()];
    args.extend(logs.iter().map(String::as_str));
    let out = predloop(&args);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    assert!(fs::metadata(&db).unwrap().len() > 0);
}
