//! Exit codes, config precedence and output layout of the `moodsense` binary.

use std::path::Path;
use std::process::{Command, Output};

fn moodsense(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_moodsense"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn metadata(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("metadata.json")).unwrap()).unwrap()
}

fn synth_small(dir: &Path) {
    let out = moodsense(&["synth", "--out", s(dir), "--subjects", "10", "--weeks", "2", "--seed", "4"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn help_and_version_succeed() {
    assert_eq!(code(&moodsense(&["--help"])), 0);
    assert_eq!(code(&moodsense(&["run", "--help"])), 0);
    assert_eq!(code(&moodsense(&["--version"])), 0);
}

#[test]
fn usage_errors_exit_1() {
    assert_eq!(code(&moodsense(&[])), 1);
    assert_eq!(code(&moodsense(&["train"])), 1);
    assert_eq!(code(&moodsense(&["synth", "--subjects", "ten"])), 1);
    // --out missing from flags and config
    assert_eq!(code(&moodsense(&["synth"])), 1);
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&moodsense(&["synth", "--out", s(dir.path()), "--subjects", "3"])), 1);
    let manifest = dir.path().join("none.csv");
    let out = dir.path().join("o");
    for cluster in ["optics", "all"] {
        let o = moodsense(&["extract", "--manifest", s(&manifest), "--out", s(&out), "--cluster", cluster]);
        assert_eq!(code(&o), 1, "{cluster}");
    }
    let o = moodsense(&["run", "--manifest", s(&manifest), "--features-csv", s(&manifest), "--out", s(&out)]);
    assert_eq!(code(&o), 1);
}

#[test]
fn config_file_fills_flags_and_flags_win() {
    let dir = tempfile::tempdir().unwrap();
    let cohort = dir.path().join("nested/deeper/cohort");
    let config = dir.path().join("moodsense.toml");
    std::fs::write(
        &config,
        format!("[synth]\nout = {:?}\nsubjects = 10\nweeks = 2\nseed = 1\nnoise = 0.5\n", s(&cohort)),
    )
    .unwrap();
    let out = moodsense(&["--config", s(&config), "synth", "--seed", "9"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let meta = metadata(&cohort);
    assert_eq!(meta["command"], "synth");
    assert_eq!(meta["config"]["synth"]["seed"], 9);
    assert_eq!(meta["config"]["synth"]["n_weeks"], 2);
    assert_eq!(meta["config"]["synth"]["noise"], 0.5);
    assert!(meta["version"].is_string());
}

#[test]
fn unknown_config_keys_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("bad.toml");
    std::fs::write(&config, "[run]\nepoch = 3\n").unwrap();
    assert_eq!(code(&moodsense(&["--config", s(&config), "run", "--out", "x"])), 1);
    std::fs::write(&config, "[train]\nepochs = 3\n").unwrap();
    assert_eq!(code(&moodsense(&["--config", s(&config), "run", "--out", "x"])), 1);
}

#[test]
fn empty_or_missing_cohort_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dir.path().join("manifest.csv");
    std::fs::write(&manifest, "subject,study_start_ms,offset_min,calls,usage,apps,locks,gps,phq\n").unwrap();
    let out = dir.path().join("out");
    assert_eq!(code(&moodsense(&["extract", "--manifest", s(&manifest), "--out", s(&out)])), 2);
    assert_eq!(code(&moodsense(&["run", "--manifest", s(&manifest), "--out", s(&out)])), 2);
    let missing = dir.path().join("nope.csv");
    assert_eq!(code(&moodsense(&["extract", "--manifest", s(&missing), "--out", s(&out)])), 2);
}

#[test]
fn extract_writes_the_feature_matrix_and_logs() {
    let dir = tempfile::tempdir().unwrap();
    let cohort = dir.path().join("cohort");
    synth_small(&cohort);
    let out = dir.path().join("a/b/features");
    let o = moodsense(&[
        "extract", "--manifest", s(&cohort), "--out", s(&out), "--cluster", "dbscan", "--eps", "30", "--min-samples", "3",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["features.csv", "phq.csv", "rejected.csv", "extract_log.txt", "metadata.json", "places/s001.csv"] {
        assert!(out.join(f).is_file(), "{f}");
    }
    let features = std::fs::read_to_string(out.join("features.csv")).unwrap();
    assert_eq!(features.lines().count(), 1 + 10 * 14);
    let meta = metadata(&out);
    assert_eq!(meta["config"]["clustering"]["eps_m"], 30.0);
    assert_eq!(meta["config"]["clustering"]["min_samples"], 3);
}

#[test]
fn fewer_subjects_than_folds_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let cohort = dir.path().join("cohort");
    synth_small(&cohort);
    let out = dir.path().join("run");
    let o = moodsense(&["run", "--manifest", s(&cohort), "--out", s(&out), "--folds", "11", "--epochs", "1"]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("11"));
}

#[test]
fn run_writes_reports_and_feature_ablation() {
    let dir = tempfile::tempdir().unwrap();
    let cohort = dir.path().join("cohort");
    synth_small(&cohort);
    let out = dir.path().join("run");
    let o = moodsense(&[
        "run", "--manifest", s(&cohort), "--out", s(&out), "--task", "forecast", "--features", "activity", "--folds", "5",
        "--epochs", "3", "--cluster", "kmeans",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let report = std::fs::read_to_string(out.join("report.csv")).unwrap();
    let mut lines = report.lines();
    assert!(lines.next().unwrap().contains("forecast_rmse"));
    assert!(lines.next().unwrap().starts_with("baseline"));
    assert!(lines.next().unwrap().starts_with("kmeans"));
    let ablation = std::fs::read_to_string(out.join("ablation.csv")).unwrap();
    assert!(ablation.lines().skip(1).all(|l| l.starts_with("kmeans,activity,forecast")));
    for f in ["folds.csv", "folds.json", "samples_forecast.csv", "predictions_forecast_activity.csv", "checkpoints/forecast_activity_fold0.ckpt"] {
        assert!(out.join(f).is_file(), "{f}");
    }
    assert_eq!(metadata(&out)["config"]["train"]["epochs"], 3);
}

#[test]
fn divergence_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let cohort = dir.path().join("cohort");
    synth_small(&cohort);
    let out = dir.path().join("run");
    let o = moodsense(&["run", "--manifest", s(&cohort), "--out", s(&out), "--task", "diagnosis", "--epochs", "5", "--lr", "1e300"]);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("folds.json").is_file());
}

#[test]
fn verify_flags_a_tampered_cohort() {
    let dir = tempfile::tempdir().unwrap();
    let cohort = dir.path().join("cohort");
    synth_small(&cohort);
    let out = dir.path().join("verify");
    let ok = moodsense(&["verify", "--cohort", s(&cohort), "--out", s(&out)]);
    assert_eq!(code(&ok), 0, "{}", String::from_utf8_lossy(&ok.stdout));
    // every call counts towards some feature of its day
    let calls = cohort.join("s002").join("calls.csv");
    let text = std::fs::read_to_string(&calls).unwrap();
    let kept: Vec<&str> = text.lines().enumerate().filter(|(i, _)| *i != 1).map(|(_, l)| l).collect();
    std::fs::write(&calls, kept.join("\n") + "\n").unwrap();
    let bad = moodsense(&["verify", "--cohort", s(&cohort), "--cluster", "time_based", "--out", s(&out)]);
    assert_eq!(code(&bad), 2);
    let diffs = std::fs::read_to_string(out.join("discrepancies_time_based.csv")).unwrap();
    assert!(diffs.lines().count() > 1);
    assert!(diffs.lines().skip(1).all(|l| l.starts_with("time_based,s002,")));
}
