//! End-to-end tests of the `ctp` binary: exit codes, artifacts, and
//! reproducibility from echoed configs.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn ctp() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ctp"))
}

fn tmp_dir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("ctp-cli-{tag}-{}", std::process::id()));
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn run(args: &[&str]) -> Output {
    ctp().args(args).output().expect("spawn ctp")
}

fn assert_success(out: &Output) {
    assert!(
        out.status.success(),
        "stdout:\n{}\nstderr:\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn gen_tiny_data(dir: &Path) {
    let out = run(&[
        "gen-data",
        "--out",
        dir.to_str().unwrap(),
        "--classes",
        "3",
        "--train",
        "48",
        "--test",
        "18",
        "--latent-dim",
        "6",
        "--text-dim",
        "8",
        "--image-dim",
        "8",
        "--points-min",
        "4",
        "--points-max",
        "9",
        "--seed",
        "5",
    ]);
    assert_success(&out);
}

fn train_tiny(data: &Path, out_dir: &Path, loss: &str, extra: &[&str]) -> Output {
    let mut args = vec![
        "train",
        "--data",
        data.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
        "--loss",
        loss,
        "--epochs",
        "2",
        "--batch-size",
        "12",
        "--embed-dim",
        "8",
        "--hidden-dim",
        "16",
        "--n-points",
        "6",
        "--seed",
        "9",
    ];
    args.extend_from_slice(extra);
    run(&args)
}

#[test]
fn gen_data_writes_three_files_and_is_seed_deterministic() {
    let a = tmp_dir("gen-a");
    let b = tmp_dir("gen-b");
    gen_tiny_data(&a);
    gen_tiny_data(&b);
    for name in ["train.jsonl", "test.jsonl", "prototypes.jsonl"] {
        let file_a = fs::read(a.join(name)).unwrap();
        assert!(!file_a.is_empty());
        assert_eq!(file_a, fs::read(b.join(name)).unwrap(), "{name} differs");
    }
    fs::remove_dir_all(a).ok();
    fs::remove_dir_all(b).ok();
}

#[test]
fn gen_data_rejects_single_class() {
    let dir = tmp_dir("gen-one-class");
    let out = run(&["gen-data", "--out", dir.to_str().unwrap(), "--classes", "1"]);
    assert_eq!(out.status.code(), Some(2));
    fs::remove_dir_all(dir).ok();
}

#[test]
fn echoed_config_reproduces_outputs_bit_for_bit() {
    let first = tmp_dir("echo-a");
    let second = tmp_dir("echo-b");
    gen_tiny_data(&first);
    let out = run(&[
        "gen-data",
        "--config",
        first.join("config.resolved").to_str().unwrap(),
        "--out",
        second.to_str().unwrap(),
    ]);
    assert_success(&out);
    for name in [
        "train.jsonl",
        "test.jsonl",
        "prototypes.jsonl",
        "config.resolved",
    ] {
        assert_eq!(
            fs::read(first.join(name)).unwrap(),
            fs::read(second.join(name)).unwrap(),
            "{name} differs after config round trip"
        );
    }
    fs::remove_dir_all(first).ok();
    fs::remove_dir_all(second).ok();
}

#[test]
fn unknown_config_keys_are_rejected() {
    let dir = tmp_dir("bad-key");
    let config = dir.join("bad.conf");
    fs::write(&config, "[dataset]\nclasses = 3\nbananas = 7\n").unwrap();
    let out = run(&[
        "gen-data",
        "--config",
        config.to_str().unwrap(),
        "--out",
        dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("bananas"), "stderr: {stderr}");
    fs::remove_dir_all(dir).ok();
}

#[test]
fn train_produces_checkpoint_and_log_deterministically() {
    let data = tmp_dir("train-data");
    gen_tiny_data(&data);
    let run_a = tmp_dir("train-a");
    let run_b = tmp_dir("train-b");
    assert_success(&train_tiny(&data, &run_a, "ctp_mask", &[]));
    assert_success(&train_tiny(&data, &run_b, "ctp_mask", &[]));
    let checkpoint_a = fs::read(run_a.join("checkpoint.json")).unwrap();
    assert!(!checkpoint_a.is_empty());
    assert_eq!(
        checkpoint_a,
        fs::read(run_b.join("checkpoint.json")).unwrap()
    );
    let log = fs::read_to_string(run_a.join("train_log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 2);
    for line in log.lines() {
        let entry: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(entry["mean_loss"].as_f64().unwrap().is_finite());
    }
    fs::remove_dir_all(data).ok();
    fs::remove_dir_all(run_a).ok();
    fs::remove_dir_all(run_b).ok();
}

#[test]
fn every_loss_variant_trains() {
    let data = tmp_dir("variants-data");
    gen_tiny_data(&data);
    for loss in ["ctp_mask", "ctp_nm", "ctp_cosine", "pairwise"] {
        let out_dir = tmp_dir(&format!("variants-{loss}"));
        assert_success(&train_tiny(&data, &out_dir, loss, &[]));
        fs::remove_dir_all(out_dir).ok();
    }
    fs::remove_dir_all(data).ok();
}

#[test]
fn point_encoder_baseline_flags_work() {
    let data = tmp_dir("baseline-data");
    gen_tiny_data(&data);
    let out_dir = tmp_dir("baseline-run");
    let out = train_tiny(
        &data,
        &out_dir,
        "pairwise",
        &["--coeffs", "0,0.5,0.5", "--freeze", "text,image"],
    );
    assert_success(&out);
    let resolved = fs::read_to_string(out_dir.join("config.resolved")).unwrap();
    assert!(resolved.contains("coeffs = 0,0.5,0.5"));
    assert!(resolved.contains("freeze = text,image"));
    fs::remove_dir_all(data).ok();
    fs::remove_dir_all(out_dir).ok();
}

#[test]
fn train_requires_a_manifest() {
    let dir = tmp_dir("no-manifest");
    let out = run(&[
        "train",
        "--data",
        dir.join("missing").to_str().unwrap(),
        "--out",
        dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    fs::remove_dir_all(dir).ok();
}

#[test]
fn eval_writes_metrics_for_all_modes() {
    let data = tmp_dir("eval-data");
    gen_tiny_data(&data);
    let run_dir = tmp_dir("eval-run");
    assert_success(&train_tiny(&data, &run_dir, "ctp_mask", &[]));
    let out = run(&[
        "eval",
        "--checkpoint",
        run_dir.join("checkpoint.json").to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
        "--out",
        run_dir.to_str().unwrap(),
        "--mode",
        "all",
    ]);
    assert_success(&out);
    for mode in ["T_I", "T_P", "T_IP"] {
        let report: serde_json::Value = serde_json::from_str(
            &fs::read_to_string(run_dir.join(format!("metrics_{mode}.json"))).unwrap(),
        )
        .unwrap();
        assert_eq!(report["mode"], mode);
        assert_eq!(report["n_samples"], 18);
    }
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("Avg."), "stdout: {stdout}");
    fs::remove_dir_all(data).ok();
    fs::remove_dir_all(run_dir).ok();
}

#[test]
fn eval_reports_missing_checkpoint() {
    let dir = tmp_dir("eval-missing");
    let out = run(&[
        "eval",
        "--checkpoint",
        dir.join("nope.json").to_str().unwrap(),
        "--data",
        dir.to_str().unwrap(),
        "--out",
        dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    fs::remove_dir_all(dir).ok();
}

#[test]
fn gradcheck_passes_and_self_test_fails() {
    let dir = tmp_dir("gradcheck");
    let out = run(&["gradcheck", "--out", dir.to_str().unwrap(), "--seeds", "2"]);
    assert_success(&out);
    assert!(dir.join("gradcheck.json").exists());

    let flipped = run(&[
        "gradcheck",
        "--out",
        dir.to_str().unwrap(),
        "--seeds",
        "1",
        "--self-test-flip",
    ]);
    assert_eq!(flipped.status.code(), Some(3));
    fs::remove_dir_all(dir).ok();
}

#[test]
fn oracle_check_passes_on_default_tolerance() {
    let dir = tmp_dir("oracle");
    let out = run(&[
        "oracle-check",
        "--out",
        dir.to_str().unwrap(),
        "--b",
        "2,4",
        "--seeds",
        "4",
    ]);
    assert_success(&out);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("PASS"));
    assert!(dir.join("oracle_check.json").exists());
    fs::remove_dir_all(dir).ok();
}

#[test]
fn compare_single_seed_omits_std_columns() {
    let dir = tmp_dir("compare");
    let out = run(&[
        "compare",
        "--out",
        dir.to_str().unwrap(),
        "--seeds",
        "1",
        "--classes",
        "3",
        "--train",
        "36",
        "--test",
        "12",
        "--epochs",
        "2",
        "--batch-size",
        "12",
        "--embed-dim",
        "8",
        "--hidden-dim",
        "16",
        "--n-points",
        "6",
    ]);
    assert_success(&out);
    let table = fs::read_to_string(dir.join("comparison.txt")).unwrap();
    assert!(table.contains("ctp_mask"));
    assert!(table.contains("pairwise"));
    assert!(
        !table.contains('±'),
        "std column should be omitted: {table}"
    );
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("comparison.json")).unwrap()).unwrap();
    assert!(summary["ctp_mask"]["T_IP"].as_array().unwrap().len() == 1);
    fs::remove_dir_all(dir).ok();
}

#[test]
fn bench_reports_kernel_timings() {
    let dir = tmp_dir("bench");
    let out = run(&[
        "bench",
        "--out",
        dir.to_str().unwrap(),
        "--b",
        "8",
        "--d",
        "8",
        "--iters",
        "2",
    ]);
    assert_success(&out);
    let timings: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("bench.json")).unwrap()).unwrap();
    assert!(timings["tensor_loss_mask"].as_f64().unwrap() >= 0.0);
    fs::remove_dir_all(dir).ok();
}
