//! End-to-end runs of the `dhvt` binary: exit codes and output artifacts.

use std::path::Path;
use std::process::{Command, Output};

fn dhvt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dhvt"))
        .args(args)
        .output()
        .expect("binary must spawn")
}

fn write_micro_run(dir: &Path, steps: usize) -> std::path::PathBuf {
    let run = serde_json::json!({
        "model": {
            "image_size": [16, 16], "patch_size": 4, "embed_dim": 16,
            "depth": 1, "num_heads": 2, "num_classes": 4
        },
        "data": { "kind": "synthetic", "classes": 4, "samples": 16, "size": 16, "seed": 5 },
        "epochs": 100, "batch_size": 8, "warmup_epochs": 1,
        "seed": 3, "dtype": "f32", "max_steps": steps,
        "out_dir": dir.join("out").to_str().unwrap()
    });
    let path = dir.join("run.json");
    std::fs::write(&path, serde_json::to_vec_pretty(&run).unwrap()).unwrap();
    path
}

#[test]
fn make_config_and_count_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("cfg.json");
    let out = dhvt(&[
        "make-config",
        "--variant",
        "dhvt-t",
        "--dataset",
        "cifar",
        "--patch",
        "4",
        "--output",
        cfg_path.to_str().unwrap(),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );

    let out = dhvt(&["count", "--config", cfg_path.to_str().unwrap()]);
    assert!(out.status.success());
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("6.01M"), "{stdout}");

    let out = dhvt(&["count", "--config", cfg_path.to_str().unwrap(), "--json"]);
    assert!(out.status.success());
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["total_params"], serde_json::json!(6_008_938u64));
}

#[test]
fn unknown_variant_fails_with_options_listed() {
    let out = dhvt(&[
        "count",
        "--variant",
        "dhvt-t",
        "--dataset",
        "cifar",
        "--patch",
        "16",
    ]);
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("known variants"), "{stderr}");
}

#[test]
fn gradcheck_passes_by_default_and_fails_at_absurd_tolerance() {
    let out = dhvt(&["gradcheck", "--samples", "50"]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(String::from_utf8_lossy(&out.stdout).contains("PASS"));

    let out = dhvt(&["gradcheck", "--samples", "50", "--tolerance", "1e-13"]);
    assert!(!out.status.success(), "impossible tolerance must fail");
    assert!(String::from_utf8_lossy(&out.stderr).contains("offender"));
}

#[test]
fn train_eval_export_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let run = write_micro_run(dir.path(), 30);

    let out = dhvt(&["train", "--run", run.to_str().unwrap()]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let ckpt = dir.path().join("out/checkpoint_final.dhvt");
    assert!(ckpt.exists());
    assert!(dir.path().join("out/train_log.csv").exists());
    assert!(dir.path().join("out/train_log.txt").exists());

    let out = dhvt(&[
        "eval",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--run",
        run.to_str().unwrap(),
        "--split",
        "train",
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(String::from_utf8_lossy(&out.stdout).contains("accuracy"));

    let export_dir = dir.path().join("maps");
    let out = dhvt(&[
        "export-attention",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--image",
        "gray",
        "--layers",
        "0",
        "--out",
        export_dir.to_str().unwrap(),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(export_dir.join("layer_0_attention.csv").exists());
    assert!(export_dir.join("layer_0_head_0.pgm").exists());
    assert!(export_dir.join("layer_0_head_1.pgm").exists());

    // Out-of-range layer must fail, naming the valid range.
    let out = dhvt(&[
        "export-attention",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--layers",
        "5",
        "--out",
        export_dir.to_str().unwrap(),
    ]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("0..=0"));
}

#[test]
fn train_rejects_broken_run_config() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    std::fs::write(&path, b"{ not json").unwrap();
    let out = dhvt(&["train", "--run", path.to_str().unwrap()]);
    assert!(!out.status.success());

    // Structurally valid JSON with an invalid model config.
    let run = serde_json::json!({
        "model": {
            "image_size": [16, 16], "patch_size": 4, "embed_dim": 15,
            "depth": 1, "num_heads": 2, "num_classes": 4
        },
        "data": { "kind": "synthetic", "classes": 4, "samples": 8, "size": 16, "seed": 5 },
        "out_dir": dir.path().join("out").to_str().unwrap()
    });
    std::fs::write(&path, serde_json::to_vec(&run).unwrap()).unwrap();
    let out = dhvt(&["train", "--run", path.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("num_heads"));
}

#[test]
fn identical_seeds_give_identical_logs() {
    let dir = tempfile::tempdir().unwrap();
    let run = write_micro_run(dir.path(), 12);
    let out = dhvt(&["train", "--run", run.to_str().unwrap()]);
    assert!(out.status.success());
    let log1 = std::fs::read(dir.path().join("out/train_log.csv")).unwrap();
    let out = dhvt(&["train", "--run", run.to_str().unwrap()]);
    assert!(out.status.success());
    let log2 = std::fs::read(dir.path().join("out/train_log.csv")).unwrap();
    assert_eq!(log1, log2);
}
