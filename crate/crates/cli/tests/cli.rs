//! End-to-end tests of the `tcl` binary.

use std::path::Path;
use std::process::{Command, Output};

fn tcl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tcl"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write(path: &Path, content: &str) {
    std::fs::write(path, content).unwrap();
}

const TINY_GEN: &str = r#"{
    "seed": 9, "num_sequences": 8, "T": 20, "J": 3,
    "t_h": 3, "t_p": 5, "noise_std": 0.01,
    "split_fractions": [0.5, 0.25, 0.25]
}"#;

const TINY_TRAIN: &str = r#"{
    "mode": "tcl", "segment_lengths": [2, 3], "stage_epochs": [2, 4],
    "batch_size": 16, "seed": 4, "hidden_dims": [16], "alpha_head_hidden": 4
}"#;

#[test]
fn missing_config_file_names_the_path() {
    let out = tcl(&[
        "train",
        "--config",
        "missing.json",
        "--data-dir",
        "x",
        "--out-dir",
        "y",
    ]);
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("missing.json"), "stderr: {stderr}");
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let out = tcl(&["train", "--no-such-flag"]);
    assert!(!out.status.success());
}

#[test]
fn verify_lemmas_passes_and_writes_reports() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("bounds");
    let out = tcl(&[
        "verify-lemmas",
        "--resolution",
        "300",
        "--out-dir",
        out_dir.to_str().unwrap(),
    ]);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(out.status.success(), "stdout: {stdout}");
    assert!(stdout.contains("PASS"));

    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("bound_summary.json")).unwrap())
            .unwrap();
    assert_eq!(summary["pass"], true);
    let max_gap = summary["restricted_max"]["gap"].as_f64().unwrap();
    assert!((max_gap - 1.5f64.ln()).abs() < 1e-9);

    let grid = std::fs::read_to_string(out_dir.join("bound_grid.csv")).unwrap();
    assert!(grid.starts_with("a,b,gap\n"));
    // 300 rows of b, 301 of a, plus header.
    assert_eq!(grid.lines().count(), 1 + 300 * 301);
}

#[test]
fn generate_train_eval_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let gen_cfg = dir.path().join("gen.json");
    write(&gen_cfg, TINY_GEN);
    let data = dir.path().join("data");
    let out = tcl(&[
        "generate",
        "--config",
        gen_cfg.to_str().unwrap(),
        "--out-dir",
        data.to_str().unwrap(),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    for f in ["train.csv", "val.csv", "test.csv", "generation.json"] {
        assert!(data.join(f).exists(), "{f} missing");
    }

    let train_cfg = dir.path().join("train.json");
    write(&train_cfg, TINY_TRAIN);
    let run = dir.path().join("run");
    let out = tcl(&[
        "train",
        "--config",
        train_cfg.to_str().unwrap(),
        "--data-dir",
        data.to_str().unwrap(),
        "--out-dir",
        run.to_str().unwrap(),
        "--horizons",
        "1,3,5",
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    for f in [
        "metrics.csv",
        "stage1.ckpt",
        "stage2.ckpt",
        "final.ckpt",
        "report.json",
    ] {
        assert!(run.join(f).exists(), "{f} missing");
    }
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(run.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["schema"], "runreport/v1");
    assert_eq!(report["mode"], "tcl");

    let eval_out = dir.path().join("eval.json");
    let out = tcl(&[
        "eval",
        "--checkpoint",
        run.join("final.ckpt").to_str().unwrap(),
        "--data-dir",
        data.to_str().unwrap(),
        "--out",
        eval_out.to_str().unwrap(),
        "--horizons",
        "1,5",
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let eval: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&eval_out).unwrap()).unwrap();
    // Same model, same test split: the eval avg must match the train
    // report's avg exactly.
    assert_eq!(eval["avg_error"], report["avg_error"]);

    // report renders both files.
    let out = tcl(&[
        "report",
        "--run",
        run.join("report.json").to_str().unwrap(),
        "--run",
        eval_out.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("avg error"));
}

#[test]
fn eval_of_untrained_model_equals_replication_baseline() {
    let dir = tempfile::tempdir().unwrap();
    let gen_cfg = dir.path().join("gen.json");
    write(&gen_cfg, TINY_GEN);
    let data = dir.path().join("data");
    assert!(tcl(&[
        "generate",
        "--config",
        gen_cfg.to_str().unwrap(),
        "--out-dir",
        data.to_str().unwrap(),
    ])
    .status
    .success());

    // Zero training epochs: the checkpoint holds the residual-start model.
    let train_cfg = dir.path().join("train.json");
    write(
        &train_cfg,
        r#"{"mode": "one_stage", "segment_lengths": [5], "stage_epochs": [0],
            "batch_size": 16, "seed": 4, "hidden_dims": [16], "alpha_head_hidden": 4}"#,
    );
    let run = dir.path().join("run");
    assert!(tcl(&[
        "train",
        "--config",
        train_cfg.to_str().unwrap(),
        "--data-dir",
        data.to_str().unwrap(),
        "--out-dir",
        run.to_str().unwrap(),
        "--horizons",
        "1,2,5",
    ])
    .status
    .success());

    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(run.join("report.json")).unwrap()).unwrap();

    // Replication-baseline oracle computed straight from the test split.
    let test_ds = tcl_core::dataset::load_csv(&data.join("test.csv")).unwrap();
    let cols = test_ds.coord_cols();
    let preds: Vec<tcl_core::RealArray> = test_ds
        .samples
        .iter()
        .map(|s| {
            let last = &s.history.data()[(test_ds.t_h - 1) * cols..];
            let mut tiled = Vec::with_capacity(test_ds.t_p * cols);
            for _ in 0..test_ds.t_p {
                tiled.extend_from_slice(last);
            }
            tcl_core::RealArray::from_vec(vec![test_ds.t_p, cols], tiled).unwrap()
        })
        .collect();
    let gts: Vec<tcl_core::RealArray> = test_ds.samples.iter().map(|s| s.future.clone()).collect();
    let curve = tcl_core::metrics::mpjpe_curve(&preds, &gts, test_ds.joints, test_ds.dims).unwrap();
    let oracle_avg = curve.iter().sum::<f64>() / curve.len() as f64;

    let avg = report["avg_error"].as_f64().unwrap();
    assert!(
        (avg - oracle_avg).abs() < 1e-9,
        "untrained model avg {avg} vs replication baseline {oracle_avg}"
    );
}

#[test]
fn ablate_and_report_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let gen_cfg = dir.path().join("gen.json");
    write(&gen_cfg, TINY_GEN);
    let data = dir.path().join("data");
    assert!(tcl(&[
        "generate",
        "--config",
        gen_cfg.to_str().unwrap(),
        "--out-dir",
        data.to_str().unwrap(),
    ])
    .status
    .success());

    let spec = dir.path().join("spec.json");
    write(
        &spec,
        r#"{
            "base": {"mode": "tcl", "segment_lengths": [2, 3], "stage_epochs": [1, 2],
                     "batch_size": 16, "hidden_dims": [8], "alpha_head_hidden": 3},
            "arms": ["one_stage", "tcl"],
            "seeds": [1, 2],
            "task_count_sweep": [1, 2],
            "sweep_total_epochs": 2,
            "horizons": [1, 5]
        }"#,
    );
    let out_dir = dir.path().join("abl");
    let out = tcl(&[
        "ablate",
        "--spec",
        spec.to_str().unwrap(),
        "--data-dir",
        data.to_str().unwrap(),
        "--out-dir",
        out_dir.to_str().unwrap(),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("one_stage"));
    assert!(text.contains("tcl"));
    assert!(out_dir.join("ablation.json").exists());
    assert!(out_dir.join("runs").join("tcl_seed1.json").exists());

    let out = tcl(&[
        "report",
        "--ablation",
        out_dir.join("ablation.json").to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let rendered = String::from_utf8_lossy(&out.stdout);
    assert!(rendered.contains("median avg err"));
    assert!(rendered.contains("tasks"));
}
