//! End-to-end checks of the command-line surface: subcommands, exit
//! codes, and the files a run produces.

use std::path::Path;
use std::process::{Command, Output};

fn tubersim(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tubersim"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn write_default_config(dir: &Path) -> std::path::PathBuf {
    let cfg = tubersim::config::ExperimentConfig::default();
    let path = dir.join("cell.toml");
    cfg.save(&path).unwrap();
    path
}

#[test]
fn validate_config_accepts_the_default() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_default_config(dir.path());
    let out = tubersim(
        &["validate-config", "--config", cfg.to_str().unwrap()],
        dir.path(),
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn validate_config_rejects_unknown_keys_with_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_default_config(dir.path());
    let mut text = std::fs::read_to_string(&cfg).unwrap();
    text.push_str("\nmystery_knob = 3\n");
    std::fs::write(&cfg, text).unwrap();
    let out = tubersim(
        &["validate-config", "--config", cfg.to_str().unwrap()],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(!String::from_utf8_lossy(&out.stderr).is_empty());
}

#[test]
fn validate_config_reports_field_errors_with_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_default_config(dir.path());
    let text = std::fs::read_to_string(&cfg)
        .unwrap()
        .replace("batch_size = 81", "batch_size = 0");
    std::fs::write(&cfg, text).unwrap();
    let out = tubersim(
        &["validate-config", "--config", cfg.to_str().unwrap()],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("batch_size"), "stderr: {err}");
}

#[test]
fn run_writes_records_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let out = tubersim(
        &[
            "run",
            "--batch-size",
            "4",
            "--seed",
            "3",
            "--output-dir",
            "out",
        ],
        dir.path(),
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let records = std::fs::read_to_string(dir.path().join("out/records.jsonl")).unwrap();
    assert_eq!(records.lines().count(), 4);
    let summary = std::fs::read_to_string(dir.path().join("out/summary.json")).unwrap();
    assert!(summary.contains("deposit_success_rate"));
}

#[test]
fn identical_seeds_produce_byte_identical_records() {
    let dir = tempfile::tempdir().unwrap();
    for name in ["a", "b"] {
        let out = tubersim(
            &[
                "run",
                "--batch-size",
                "6",
                "--seed",
                "11",
                "--output-dir",
                name,
            ],
            dir.path(),
        );
        assert!(out.status.success());
    }
    let a = std::fs::read(dir.path().join("a/records.jsonl")).unwrap();
    let b = std::fs::read(dir.path().join("b/records.jsonl")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn replay_round_trips_through_the_cli() {
    let dir = tempfile::tempdir().unwrap();
    let out = tubersim(
        &[
            "run",
            "--batch-size",
            "5",
            "--seed",
            "21",
            "--output-dir",
            "live",
            "--detection-log",
        ],
        dir.path(),
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let out = tubersim(
        &[
            "replay",
            "--batch-size",
            "5",
            "--seed",
            "21",
            "--log",
            "live/detections.log",
            "--output-dir",
            "replayed",
        ],
        dir.path(),
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let live = std::fs::read(dir.path().join("live/records.jsonl")).unwrap();
    let replayed = std::fs::read(dir.path().join("replayed/records.jsonl")).unwrap();
    assert_eq!(live, replayed);
}

#[test]
fn replay_names_the_malformed_line() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("bad.log"),
        "1 tuber 0 0 10 10 0.9\ngarbage\n",
    )
    .unwrap();
    let out = tubersim(&["replay", "--log", "bad.log"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 2"), "stderr: {err}");
}

#[test]
fn calibrate_emits_constants_and_table() {
    let dir = tempfile::tempdir().unwrap();
    let out = tubersim(
        &[
            "calibrate",
            "--samples",
            "600",
            "--verify-draws",
            "3000",
            "--output",
            "constants.toml",
        ],
        dir.path(),
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("lateral_mean_mm"));
    assert!(stdout.contains("achieved"));
    let constants = std::fs::read_to_string(dir.path().join("constants.toml")).unwrap();
    assert!(constants.contains("depth_over_prob"));
}

#[test]
fn shipped_sample_config_matches_the_defaults() {
    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/default.toml");
    let loaded = tubersim::config::ExperimentConfig::load(&path).unwrap();
    assert_eq!(loaded, tubersim::config::ExperimentConfig::default());
}
