//! End-to-end tests of the `fallwatch` binary: exit codes, output
//! determinism, and artifact layout, all through real process invocations.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use fallwatch_core::csi::{ComplexSample, CsiFrame};
use fallwatch_core::ingest::trace::pack_frame;

fn fallwatch(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fallwatch"))
        .args(args)
        .output()
        .expect("binary spawns")
}

fn stdout_of(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).expect("stdout is utf-8")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("process exited normally")
}

/// Every file in a directory tree, relative path -> bytes.
fn tree_bytes(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).expect("dir readable") {
            let path = entry.expect("entry readable").path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(root).expect("under root");
                files.push((
                    rel.to_string_lossy().into_owned(),
                    fs::read(&path).expect("file readable"),
                ));
            }
        }
    }
    files.sort();
    files
}

#[test]
fn help_exits_zero() {
    let out = fallwatch(&["--help"]);
    assert_eq!(code(&out), 0);
    assert!(stdout_of(&out).contains("fallwatch"));
}

#[test]
fn unknown_flag_exits_one() {
    let out = fallwatch(&["simulate", "--no-such-flag"]);
    assert_eq!(code(&out), 1);
}

#[test]
fn missing_subcommand_exits_one() {
    let out = fallwatch(&[]);
    assert_eq!(code(&out), 1);
}

#[test]
fn missing_input_file_exits_two() {
    let out = fallwatch(&["inspect-trace", "/nonexistent/trace.dat"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn unresolvable_bind_address_exits_four() {
    let out = fallwatch(&["serve", "--bind", "definitely-not-a-host:0", "--duration-s", "0"]);
    assert_eq!(code(&out), 4);
}

#[test]
fn conflicting_trials_and_schedule_exit_one() {
    let out = fallwatch(&["e2e", "--trials", "4", "--schedule", "7of8"]);
    assert_eq!(code(&out), 1);
}

#[test]
fn synth_same_seed_writes_identical_trees() {
    let dir = tempfile::tempdir().expect("tempdir");
    let spec = dir.path().join("table2.json");
    fs::write(
        &spec,
        r#"{"classes": {"Fall": 3, "Normal": 4, "No-person": 4},
            "seed": 7, "sample_rate": 20, "duration_s": 1.0}"#,
    )
    .expect("spec written");
    let a = dir.path().join("a");
    let b = dir.path().join("b");

    let spec_s = spec.to_str().unwrap();
    for out_dir in [&a, &b] {
        let out = fallwatch(&["synth", "--spec", spec_s, "--out", out_dir.to_str().unwrap()]);
        assert_eq!(code(&out), 0, "stderr: {}", String::from_utf8_lossy(&out.stderr));
    }
    let ta = tree_bytes(&a);
    assert_eq!(ta, tree_bytes(&b), "same spec and seed must write the same bytes");
    assert!(
        ta.iter().any(|(name, _)| name == "manifest.json"),
        "dataset carries a manifest"
    );
    // 3 + 4 + 4 instance files plus the manifest.
    assert_eq!(ta.len(), 12);
}

#[test]
fn seed_flag_overrides_spec_seed() {
    let dir = tempfile::tempdir().expect("tempdir");
    let spec = dir.path().join("spec.json");
    fs::write(
        &spec,
        r#"{"classes": {"Fall": 2, "Normal": 2}, "seed": 7,
            "sample_rate": 20, "duration_s": 1.0}"#,
    )
    .expect("spec written");
    let a = dir.path().join("a");
    let b = dir.path().join("b");

    let spec_s = spec.to_str().unwrap();
    let out = fallwatch(&["synth", "--spec", spec_s, "--out", a.to_str().unwrap()]);
    assert_eq!(code(&out), 0);
    let out = fallwatch(&["synth", "--spec", spec_s, "--seed", "8", "--out", b.to_str().unwrap()]);
    assert_eq!(code(&out), 0);
    assert_ne!(tree_bytes(&a), tree_bytes(&b), "--seed must change the data");
}

#[test]
fn grad_check_exits_zero() {
    let out = fallwatch(&["grad-check", "--quiet"]);
    assert_eq!(code(&out), 0, "stderr: {}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout_of(&out).contains("all passed"));
}

#[test]
fn offline_simulate_reports_seven_of_eight() {
    let out = fallwatch(&["simulate", "--schedule", "7of8", "--seed", "1", "--format", "json", "--quiet"]);
    assert_eq!(code(&out), 0);
    let v: serde_json::Value = serde_json::from_str(&stdout_of(&out)).expect("stdout is pure JSON");
    assert_eq!(v["success_rate"], 0.875);
    assert_eq!(v["trials"].as_array().expect("trials array").len(), 8);
}

#[test]
fn simulate_csv_has_stable_header() {
    let out = fallwatch(&["simulate", "--schedule", "2of2", "--seed", "3", "--format", "csv", "--quiet"]);
    assert_eq!(code(&out), 0);
    let text = stdout_of(&out);
    assert_eq!(
        text.lines().next().unwrap(),
        "trial,outcome,detection_class,alarm_latency_s,nav_time_s,door_time_s,total_response_s"
    );
    assert_eq!(text.lines().count(), 3);
}

#[test]
fn e2e_report_is_deterministic_and_out_file_is_pure_json() {
    let dir = tempfile::tempdir().expect("tempdir");
    let a = dir.path().join("a.json");
    let b = dir.path().join("b.json");
    for path in [&a, &b] {
        let out = fallwatch(&[
            "e2e", "--trials", "3", "--schedule", "2of3", "--seed", "9",
            "--format", "json", "--out", path.to_str().unwrap(),
        ]);
        assert_eq!(code(&out), 0, "stderr: {}", String::from_utf8_lossy(&out.stderr));
    }
    let bytes_a = fs::read(&a).expect("report written");
    assert_eq!(bytes_a, fs::read(&b).expect("report written"), "same seed, same bytes");
    let v: serde_json::Value = serde_json::from_slice(&bytes_a).expect("out file is pure JSON");
    assert_eq!(v["trials"].as_array().expect("trials").len(), 3);
}

#[test]
fn trial_missed_flag_reports_missed_detection() {
    let out = fallwatch(&["trial", "--missed", "--seed", "2", "--format", "json", "--quiet"]);
    assert_eq!(code(&out), 0);
    let v: serde_json::Value = serde_json::from_str(&stdout_of(&out)).expect("JSON");
    assert_eq!(v["success_rate"], 0.0);
    assert_eq!(v["trials"][0]["outcome"], "missed_detection");
}

#[test]
fn inspect_trace_counts_frames_and_skipped_records() {
    let mut frame = CsiFrame {
        timestamp: 1.0,
        n_rx: 2,
        n_tx: 1,
        n_sub: 30,
        csi: (0..60).map(|i| ComplexSample::new((i % 7) as f64, -((i % 5) as f64))).collect(),
        rssi: [40, 41, 0],
        agc: 30,
        noise_floor: -92,
    };
    let mut blob = pack_frame(&frame).expect("packs");
    frame.timestamp = 1.5;
    blob.extend_from_slice(&pack_frame(&frame).expect("packs"));
    // One record with an unknown code, to be skipped and counted.
    blob.extend_from_slice(&[0x00, 0x03, 0xC4, 0xDE, 0xAD]);

    let dir = tempfile::tempdir().expect("tempdir");
    let path = dir.path().join("capture.dat");
    fs::write(&path, &blob).expect("trace written");

    let out = fallwatch(&["inspect-trace", path.to_str().unwrap(), "--format", "json", "--quiet"]);
    assert_eq!(code(&out), 0, "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_str(&stdout_of(&out)).expect("JSON");
    assert_eq!(v["frames"], 2);
    assert_eq!(v["skipped_records"], 1);
}

#[test]
fn train_writes_metrics_and_checkpoints() {
    let dir = tempfile::tempdir().expect("tempdir");
    let spec = dir.path().join("spec.json");
    fs::write(
        &spec,
        r#"{"classes": {"Fall": 5, "Normal": 5}, "seed": 3,
            "sample_rate": 20, "duration_s": 1.0}"#,
    )
    .expect("spec written");
    let data = dir.path().join("data");
    let out = fallwatch(&["synth", "--spec", spec.to_str().unwrap(), "--out", data.to_str().unwrap()]);
    assert_eq!(code(&out), 0);

    let run = dir.path().join("run");
    let out = fallwatch(&[
        "train", "--data", data.to_str().unwrap(), "--epochs", "1",
        "--batch-size", "4", "--embed-dim", "8", "--heads", "2", "--blocks", "1",
        "--kernels", "3", "--seed", "11", "--out", run.to_str().unwrap(), "--quiet",
    ]);
    assert_eq!(code(&out), 0, "stderr: {}", String::from_utf8_lossy(&out.stderr));
    for name in ["metrics.csv", "best.ckpt", "final.ckpt"] {
        assert!(run.join(name).is_file(), "{name} missing");
    }
    let metrics = fs::read_to_string(run.join("metrics.csv")).expect("readable");
    assert!(metrics.starts_with("epoch,train_acc,test_acc,avg_loss"));
    // Epoch 0 (untrained baseline) plus one trained epoch.
    assert_eq!(metrics.lines().count(), 3);
}

#[test]
fn eval_rejects_corrupt_checkpoint_with_exit_two() {
    let dir = tempfile::tempdir().expect("tempdir");
    let ckpt = dir.path().join("bad.ckpt");
    fs::write(&ckpt, b"not a checkpoint").expect("written");
    let data = dir.path().join("data");
    let spec = dir.path().join("spec.json");
    fs::write(
        &spec,
        r#"{"classes": {"Fall": 2, "Normal": 2}, "sample_rate": 20, "duration_s": 1.0}"#,
    )
    .expect("spec written");
    let out = fallwatch(&["synth", "--spec", spec.to_str().unwrap(), "--out", data.to_str().unwrap()]);
    assert_eq!(code(&out), 0);

    let out = fallwatch(&[
        "eval", "--checkpoint", ckpt.to_str().unwrap(), "--data", data.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 2);
}
