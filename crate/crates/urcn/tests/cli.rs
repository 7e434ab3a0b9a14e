//! End-to-end checks of the `urcn` binary: exit codes, artifact layout,
//! and reproducibility of the simulate/train/evaluate pipeline.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn urcn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_urcn"))
        .args(args)
        .output()
        .expect("failed to launch urcn")
}

fn simulate_tiny(dir: &Path, seed: &str) -> Output {
    urcn(&[
        "simulate",
        "--modality",
        "mri",
        "--size",
        "16",
        "--accel",
        "2",
        "--center-fraction",
        "0.1",
        "--n-train",
        "3",
        "--n-val",
        "2",
        "--n-test",
        "2",
        "--seed",
        seed,
        "--out",
        dir.to_str().unwrap(),
    ])
}

#[test]
fn simulate_writes_containers_and_is_reproducible() {
    let d1 = tempfile::tempdir().unwrap();
    let d2 = tempfile::tempdir().unwrap();
    assert!(simulate_tiny(d1.path(), "7").status.success());
    assert!(simulate_tiny(d2.path(), "7").status.success());
    for f in ["train.urcn", "val.urcn", "test.urcn", "manifest.json"] {
        assert!(d1.path().join(f).exists(), "{f} missing");
    }
    for f in ["train.urcn", "val.urcn", "test.urcn"] {
        assert_eq!(
            fs::read(d1.path().join(f)).unwrap(),
            fs::read(d2.path().join(f)).unwrap(),
            "{f} not bitwise reproducible"
        );
    }
}

#[test]
fn simulate_refuses_overwrite_without_force() {
    let dir = tempfile::tempdir().unwrap();
    assert!(simulate_tiny(dir.path(), "1").status.success());
    let second = simulate_tiny(dir.path(), "1");
    assert_eq!(second.status.code(), Some(2), "expected argument-error exit");
    let forced = urcn(&[
        "simulate",
        "--size",
        "16",
        "--accel",
        "2",
        "--center-fraction",
        "0.1",
        "--n-train",
        "1",
        "--n-val",
        "1",
        "--n-test",
        "1",
        "--out",
        dir.path().to_str().unwrap(),
        "--force",
    ]);
    assert!(forced.status.success());
}

#[test]
fn ct_simulation_shapes_match_geometry() {
    let dir = tempfile::tempdir().unwrap();
    let out = urcn(&[
        "simulate",
        "--modality",
        "ct",
        "--size",
        "128",
        "--views",
        "90",
        "--n-train",
        "1",
        "--n-val",
        "0",
        "--n-test",
        "0",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let c = urcn::container::DatasetContainer::read_from(dir.path().join("train.urcn")).unwrap();
    assert_eq!(c.tensor("sample0000/f").unwrap().shape, vec![90, 300, 1]);
}

#[test]
fn full_pipeline_train_then_evaluate() {
    let data = tempfile::tempdir().unwrap();
    assert!(simulate_tiny(data.path(), "3").status.success());

    let run = tempfile::tempdir().unwrap();
    let train_out = urcn(&[
        "train",
        "--dataset",
        data.path().to_str().unwrap(),
        "--family",
        "ista",
        "--state",
        "I",
        "--stages",
        "2",
        "--epochs",
        "2",
        "--seed",
        "4",
        "--out",
        run.path().to_str().unwrap(),
        "--force",
    ]);
    assert!(
        train_out.status.success(),
        "train failed: {}",
        String::from_utf8_lossy(&train_out.stderr)
    );
    let loss_csv = fs::read_to_string(run.path().join("loss.csv")).unwrap();
    assert!(loss_csv.starts_with("epoch,train_loss,val_loss\n"));
    assert_eq!(loss_csv.lines().count(), 3);

    let eval = tempfile::tempdir().unwrap();
    let eval_out = urcn(&[
        "evaluate",
        "--dataset",
        data.path().to_str().unwrap(),
        "--checkpoint",
        run.path().join("checkpoint.urcn").to_str().unwrap(),
        "--out",
        eval.path().to_str().unwrap(),
        "--sweep-accel",
        "2,4",
        "--export-images",
        "1",
        "--force",
    ]);
    assert!(
        eval_out.status.success(),
        "evaluate failed: {}",
        String::from_utf8_lossy(&eval_out.stderr)
    );
    for f in [
        "metrics.csv",
        "sweep.csv",
        "esp_mean.csv",
        "esp_sample0000.csv",
        "recon_0000.pgm",
        "manifest.json",
    ] {
        assert!(eval.path().join(f).exists(), "{f} missing");
    }
}

#[test]
fn train_loss_curves_are_bit_identical_across_runs() {
    let data = tempfile::tempdir().unwrap();
    assert!(simulate_tiny(data.path(), "9").status.success());
    let mut curves = Vec::new();
    for _ in 0..2 {
        let run = tempfile::tempdir().unwrap();
        let out = urcn(&[
            "train",
            "--dataset",
            data.path().to_str().unwrap(),
            "--family",
            "pdhg",
            "--state",
            "I",
            "--stages",
            "2",
            "--epochs",
            "2",
            "--seed",
            "11",
            "--out",
            run.path().to_str().unwrap(),
            "--force",
        ]);
        assert!(out.status.success());
        curves.push((
            fs::read(run.path().join("loss.csv")).unwrap(),
            fs::read(run.path().join("checkpoint.urcn")).unwrap(),
        ));
    }
    assert_eq!(curves[0].0, curves[1].0, "loss curves differ");
    assert_eq!(curves[0].1, curves[1].1, "checkpoints differ");
}

#[test]
fn train_accepts_istar_control() {
    let data = tempfile::tempdir().unwrap();
    assert!(simulate_tiny(data.path(), "5").status.success());
    let run = tempfile::tempdir().unwrap();
    let out = urcn(&[
        "train",
        "--dataset",
        data.path().to_str().unwrap(),
        "--family",
        "pdhg",
        "--state",
        "I_star",
        "--stages",
        "1",
        "--epochs",
        "0",
        "--out",
        run.path().to_str().unwrap(),
        "--force",
    ]);
    assert!(
        out.status.success(),
        "I_star training failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn bad_arguments_exit_with_code_two() {
    let out = urcn(&["simulate", "--modality", "pet"]);
    assert_eq!(out.status.code(), Some(2));
    let out = urcn(&["train", "--family", "unknown", "--dataset", "/nonexistent"]);
    assert_ne!(out.status.code(), Some(0));
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("sim.json");
    let out_dir = dir.path().join("out");
    let cfg = serde_json::json!({
        "modality": "mri",
        "size": 16,
        "accel": 2.0,
        "center_fraction": 0.1,
        "noise_sigma": 0.0,
        "views": 90,
        "n_train": 5,
        "n_val": 1,
        "n_test": 1,
        "phantom": "random_ellipses",
        "seed": 3,
        "out": out_dir,
        "force": false
    });
    fs::write(&cfg_path, serde_json::to_string(&cfg).unwrap()).unwrap();
    // flag overrides n_train 5 -> 2
    let out = urcn(&[
        "simulate",
        "--config",
        cfg_path.to_str().unwrap(),
        "--n-train",
        "2",
    ]);
    assert!(out.status.success());
    let c = urcn::container::DatasetContainer::read_from(out_dir.join("train.urcn")).unwrap();
    assert_eq!(c.meta_parsed::<usize>("n_samples"), Some(2));
    // manifest echoes the resolved value
    let manifest = fs::read_to_string(out_dir.join("manifest.json")).unwrap();
    assert!(manifest.contains("\"n_train\": 2"));
}
