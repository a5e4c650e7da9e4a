//! End-to-end checks of the command-line surface: exit codes, artifact
//! files, provenance replay, and corrupted-query evaluation.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use uembed::model::load_checkpoint_file;
use uembed::pipeline::restore_model;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_uembed"))
}

fn workdir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("uembed_cli_{tag}_{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

const TINY_SPEC: &str = "k=4,per_class=12,train=6,query=3,mode=image,h=16,w=8,noise=0.08";

fn run_train(out: &Path, extra: &[&str]) -> Output {
    let mut cmd = bin();
    cmd.args([
        "train",
        "--synthetic",
        TINY_SPEC,
        "--channels",
        "8",
        "--epochs",
        "3",
        "--warmup",
        "1",
        "--stage2-epochs",
        "1",
        "--lr",
        "5e-3",
        "--batch",
        "16",
        "--seed",
        "5",
        "--out",
    ]);
    cmd.arg(out);
    cmd.args(extra);
    cmd.output().expect("spawn uembed")
}

#[test]
fn train_writes_checkpoint_logs_and_reports() {
    let dir = workdir("train_smoke");
    let out = dir.join("run");
    let result = run_train(&out, &["--loss", "distribution"]);
    assert!(result.status.success(), "{}", String::from_utf8_lossy(&result.stderr));
    for artifact in [
        "checkpoint.gckp",
        "trainlog.csv",
        "trainlog.json",
        "eval.json",
        "eval.csv",
        "config.resolved.txt",
    ] {
        assert!(out.join(artifact).exists(), "missing {artifact}");
    }
    let csv = std::fs::read_to_string(out.join("trainlog.csv")).unwrap();
    assert!(csv.starts_with("epoch,lr,total,cls,kl,wall_ms"));
    assert_eq!(csv.trim().lines().count(), 1 + 4); // header + 3 stage-1 + 1 stage-2
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn zero_learning_rate_leaves_parameters_at_initialization() {
    let dir = workdir("lr_zero");
    let out = dir.join("run");
    let result = run_train(&out, &["--lr", "0"]);
    assert!(result.status.success());
    let checkpoint = load_checkpoint_file(&out.join("checkpoint.gckp")).unwrap();
    let trained = restore_model(&checkpoint).unwrap();
    // a fresh model from the same seed is the initialization
    let fresh = uembed::model::EmbedModel::init(trained.config.clone(), 5).unwrap();
    for ((name, a), (_, b)) in trained.named_tensors().iter().zip(fresh.named_tensors()) {
        assert_eq!(a, &b, "{name} moved under lr 0");
    }
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn provenance_config_replays_bit_identically() {
    let dir = workdir("provenance");
    let first = dir.join("a");
    let result = run_train(&first, &[]);
    assert!(result.status.success());
    let second = dir.join("b");
    let replay = bin()
        .args([
            "train",
            "--config",
            first.join("config.resolved.txt").to_str().unwrap(),
            "--out",
            second.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(replay.status.success(), "{}", String::from_utf8_lossy(&replay.stderr));
    let bytes_a = std::fs::read(first.join("checkpoint.gckp")).unwrap();
    let bytes_b = std::fs::read(second.join("checkpoint.gckp")).unwrap();
    assert_eq!(bytes_a, bytes_b, "checkpoints differ after config replay");
    assert_eq!(
        std::fs::read(first.join("eval.json")).unwrap(),
        std::fs::read(second.join("eval.json")).unwrap()
    );
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn eval_reproduces_training_report_and_identity_corruption() {
    let dir = workdir("eval_match");
    let out = dir.join("run");
    let result = run_train(&out, &[]);
    assert!(result.status.success());
    let eval_out = dir.join("eval");
    let eval = bin()
        .args([
            "eval",
            "--checkpoint",
            out.join("checkpoint.gckp").to_str().unwrap(),
            "--synthetic",
            TINY_SPEC,
            "--seed",
            "5",
            "--out",
            eval_out.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(eval.status.success(), "{}", String::from_utf8_lossy(&eval.stderr));
    assert_eq!(
        std::fs::read(out.join("eval.csv")).unwrap(),
        std::fs::read(eval_out.join("eval.csv")).unwrap(),
        "eval diverged from training-time report"
    );

    // identity corruption changes nothing
    let ident_out = dir.join("ident");
    let ident = bin()
        .args([
            "eval",
            "--checkpoint",
            out.join("checkpoint.gckp").to_str().unwrap(),
            "--synthetic",
            TINY_SPEC,
            "--seed",
            "5",
            "--corrupt",
            "interp:ratio=1.0",
            "--out",
            ident_out.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(ident.status.success());
    assert_eq!(
        std::fs::read(eval_out.join("eval.json")).unwrap(),
        std::fs::read(ident_out.join("eval.json")).unwrap()
    );
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn softlabels_rows_sum_to_one_and_project_draws_all_priors() {
    let dir = workdir("exports");
    let out = dir.join("run");
    let result = run_train(&out, &[]);
    assert!(result.status.success());
    let checkpoint = out.join("checkpoint.gckp");

    let sl_out = dir.join("sl");
    let soft = bin()
        .args([
            "softlabels",
            "--checkpoint",
            checkpoint.to_str().unwrap(),
            "--tau",
            "0.17",
            "--out",
            sl_out.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(soft.status.success());
    let csv = std::fs::read_to_string(sl_out.join("softlabels.csv")).unwrap();
    let rows: Vec<&str> = csv.trim().lines().collect();
    assert_eq!(rows.len(), 4);
    for row in rows {
        let sum: f64 = row.split(',').map(|v| v.parse::<f64>().unwrap()).sum();
        assert!((sum - 1.0).abs() < 1e-9, "row sums to {sum}");
    }

    let proj_out = dir.join("proj");
    let project = bin()
        .args([
            "project",
            "--checkpoint",
            checkpoint.to_str().unwrap(),
            "--samples",
            "300",
            "--out",
            proj_out.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(project.status.success());
    let svg = std::fs::read_to_string(proj_out.join("projection.svg")).unwrap();
    let drawn = svg.matches("<ellipse").count() + svg.matches("class=\"dot\"").count();
    assert_eq!(drawn, 4, "expected one mark per prior");
    assert!(proj_out.join("projection.csv").exists());
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn exit_codes_are_stable() {
    let dir = workdir("exit_codes");

    // 1: usage errors
    let unknown_flag = bin().args(["train", "--bogus", "x"]).output().unwrap();
    assert_eq!(unknown_flag.status.code(), Some(1));
    let bad_corrupt = bin()
        .args([
            "eval",
            "--checkpoint",
            "nope.gckp",
            "--corrupt",
            "gaussian-blur:k=4",
        ])
        .output()
        .unwrap();
    assert_eq!(bad_corrupt.status.code(), Some(1));
    let unknown_command = bin().args(["frobnicate"]).output().unwrap();
    assert_eq!(unknown_command.status.code(), Some(1));

    // 2: data errors
    let missing_dataset = bin()
        .args([
            "train",
            "--dataset",
            dir.join("does_not_exist").to_str().unwrap(),
            "--out",
            dir.join("out").to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(missing_dataset.status.code(), Some(2));
    let missing_checkpoint = bin()
        .args([
            "eval",
            "--checkpoint",
            dir.join("missing.gckp").to_str().unwrap(),
            "--out",
            dir.join("out2").to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(missing_checkpoint.status.code(), Some(2));

    // 0: success
    let help = bin().args(["help"]).output().unwrap();
    assert_eq!(help.status.code(), Some(0));
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn gradcheck_command_passes_and_reports() {
    let dir = workdir("gradcheck");
    let out = dir.join("gc");
    let result = bin()
        .args(["gradcheck", "--seed", "3", "--out", out.to_str().unwrap()])
        .output()
        .unwrap();
    assert!(result.status.success(), "{}", String::from_utf8_lossy(&result.stderr));
    let stdout = String::from_utf8_lossy(&result.stdout);
    assert!(stdout.contains("PASS"));
    assert!(!stdout.contains("FAIL"));
    assert!(stdout.contains("full_model"));
    assert!(out.join("gradcheck.json").exists());
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn train_on_exported_directory_dataset() {
    // export a synthetic dataset to PPM files, then train from the directory
    let dir = workdir("dir_dataset");
    let data_dir = dir.join("market");
    let spec = uembed::data::SyntheticSpec {
        classes: 3,
        per_class: 8,
        train_per_class: 4,
        query_per_class: 2,
        mode: uembed::data::SyntheticMode::Image {
            height: 16,
            width: 8,
            noise_std: 0.05,
        },
        seed: 9,
    };
    let dataset = uembed::data::generate_synthetic(&spec).unwrap();
    uembed::data::export_dataset(&dataset, &data_dir).unwrap();

    let out = dir.join("run");
    let result = bin()
        .args([
            "train",
            "--dataset",
            data_dir.to_str().unwrap(),
            "--channels",
            "8",
            "--epochs",
            "2",
            "--warmup",
            "1",
            "--no-stage2",
            "--lr",
            "5e-3",
            "--out",
            out.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(result.status.success(), "{}", String::from_utf8_lossy(&result.stderr));
    assert!(out.join("checkpoint.gckp").exists());
    std::fs::remove_dir_all(&dir).ok();
}
