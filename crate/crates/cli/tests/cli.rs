//! End-to-end exercises of the `confot` binary: the three subcommands, the
//! report formats, and the exit-code contract (0 success, 2 config error,
//! 3 data error).

use std::path::Path;
use std::process::Command;

fn confot() -> Command {
    Command::new(env!("CARGO_BIN_EXE_confot"))
}

fn gen_synth(dir: &Path, prefix: &str, shift: &str) -> (String, String) {
    let prefix_path = dir.join(prefix);
    let out = confot()
        .args([
            "gen-synth",
            "--classes",
            "5",
            "--cal",
            "60",
            "--test",
            "40",
            "--shift",
            shift,
            "--seed",
            "7",
            "--out-prefix",
        ])
        .arg(&prefix_path)
        .output()
        .expect("spawn confot");
    assert!(out.status.success(), "gen-synth failed: {out:?}");
    (
        format!("{}_logits.bin", prefix_path.display()),
        format!("{}_labels.csv", prefix_path.display()),
    )
}

#[test]
fn gen_synth_then_validate_then_run_json() {
    let dir = tempfile::tempdir().unwrap();
    let (logits, labels) = gen_synth(dir.path(), "d", "prior");

    let out = confot()
        .args(["validate", "--logits", &logits, "--labels", &labels])
        .output()
        .unwrap();
    assert!(out.status.success());
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("100 samples"), "stdout: {stdout}");
    assert!(stdout.contains("5 classes"), "stdout: {stdout}");

    let report = dir.path().join("report.json");
    let out = confot()
        .args([
            "run", "--logits", &logits, "--labels", &labels, "--seeds", "3", "--alpha", "0.1",
            "--score", "lac", "--out",
        ])
        .arg(&report)
        .output()
        .unwrap();
    assert!(out.status.success(), "run failed: {out:?}");
    let text = std::fs::read_to_string(&report).unwrap();
    assert!(text.contains("\"paired_size_reduction\""));
    assert!(text.contains("\"conf_ot\""));
}

#[test]
fn run_writes_pinned_csv_schema() {
    let dir = tempfile::tempdir().unwrap();
    let (logits, labels) = gen_synth(dir.path(), "c", "none");
    let report = dir.path().join("report.csv");
    let out = confot()
        .args([
            "run", "--logits", &logits, "--labels", &labels, "--seeds", "2", "--alpha", "0.2",
            "--method", "base", "--format", "csv", "--out",
        ])
        .arg(&report)
        .output()
        .unwrap();
    assert!(out.status.success(), "run failed: {out:?}");
    let text = std::fs::read_to_string(&report).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "method,score,alpha,top1_mean,top1_std,cov_mean,cov_std,size_mean,size_std,ccv_mean,ccv_std,seeds"
    );
    // base x {lac, aps, raps} x one alpha.
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 3);
    for row in rows {
        assert!(row.starts_with("base,"));
        assert!(row.ends_with(",2"));
    }
}

#[test]
fn missing_required_flag_exits_2() {
    let out = confot().args(["run", "--labels", "x.csv"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn bad_alpha_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let (logits, labels) = gen_synth(dir.path(), "a", "none");
    let out = confot()
        .args([
            "run", "--logits", &logits, "--labels", &labels, "--alpha", "1.5", "--seeds", "1",
        ])
        .arg("--out")
        .arg(dir.path().join("r.json"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2), "stderr: {:?}", out.stderr);
}

#[test]
fn missing_data_file_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let out = confot()
        .args([
            "run",
            "--logits",
            "/nonexistent/logits.bin",
            "--labels",
            "/nonexistent/labels.csv",
        ])
        .arg("--out")
        .arg(dir.path().join("r.json"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn corrupt_logits_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let logits = dir.path().join("bad.bin");
    std::fs::write(&logits, b"not a logit file").unwrap();
    let labels = dir.path().join("l.csv");
    std::fs::write(&labels, "label\n0\n1\n").unwrap();
    let out = confot()
        .arg("validate")
        .arg("--logits")
        .arg(&logits)
        .arg("--labels")
        .arg(&labels)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("format error"), "stderr: {stderr}");
}

#[test]
fn mismatched_labels_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let (logits, _) = gen_synth(dir.path(), "m", "none");
    let labels = dir.path().join("short.csv");
    std::fs::write(&labels, "label\n0\n1\n").unwrap();
    let out = confot()
        .args(["validate", "--logits", &logits, "--labels"])
        .arg(&labels)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn temperature_shift_dataset_generates() {
    let dir = tempfile::tempdir().unwrap();
    let (logits, labels) = gen_synth(dir.path(), "t", "temperature");
    let out = confot()
        .args(["validate", "--logits", &logits, "--labels", &labels])
        .output()
        .unwrap();
    assert!(out.status.success());
}
