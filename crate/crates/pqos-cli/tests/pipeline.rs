//! End-to-end CLI tests over a small synthetic scenario: full pipeline smoke,
//! byte-identical replay, and stage dependency failures.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn pqos() -> Command {
    Command::new(env!("CARGO_BIN_EXE_pqos"))
}

fn write_small_config(dir: &Path) -> std::path::PathBuf {
    let config = serde_json::json!({
        // Small but long enough for lookback-30 windows in the test split.
        "workdir": dir.join("work"),
        "outdir": dir.join("out"),
        "synth": { "duration_s": 1100.0, "seed": 11 },
        "n_runs": 2,
        "base_seed": 5,
        "gbt": { "n_trees": 8, "max_depth": 3, "learning_rate": 0.2,
                 "min_samples_leaf": 5, "subsample_fraction": 0.9, "seed": 0 },
        "conv": { "lookback": 30, "conv_layers": [{"channels": 4, "kernel": 3}],
                  "head_width": 4, "epochs": 2, "learning_rate": 0.01,
                  "batch_size": 32, "optimizer": "sgd", "seed": 0 },
        "recurrent": { "lookback": 30, "hidden_size": 4, "epochs": 2,
                       "learning_rate": 0.02, "batch_size": 32,
                       "optimizer": "sgd", "seed": 0 }
    });
    let path = dir.join("config.json");
    fs::write(&path, serde_json::to_string_pretty(&config).unwrap()).unwrap();
    path
}

fn run_ok(output: &Output) {
    assert!(
        output.status.success(),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&output.stdout),
        String::from_utf8_lossy(&output.stderr)
    );
}

#[test]
fn pipeline_produces_all_stage_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_small_config(dir.path());
    let out = pqos()
        .args(["--config", config.to_str().unwrap(), "pipeline"])
        .env("PQOS_LOG", "warn")
        .output()
        .unwrap();
    run_ok(&out);

    let work = dir.path().join("work");
    for artifact in [
        "traces.csv",
        "ground_truth.json",
        "ingested.csv",
        "ingest_summary.json",
        "analysis/cross_corr.csv",
        "analysis/pairwise_corr.csv",
        "analysis/pairwise_corr.svg",
        "analysis/acf_m0.csv",
        "align/counts.json",
        "datasets/EGF.csv",
        "datasets/EGLT.json",
        "datasets/EGLS-Ratio.csv",
        "models/EGF_gbt.json",
        "models/EGLS_recurrent.json",
        "report.json",
        "manifests/synth.json",
        "manifests/ingest.json",
        "manifests/analyze.json",
        "manifests/align.json",
        "manifests/build.json",
        "manifests/train.json",
        "manifests/evaluate.json",
        "manifests/report.json",
    ] {
        assert!(work.join(artifact).exists(), "missing artifact {artifact}");
    }
    let outdir = dir.path().join("out");
    assert!(outdir.join("metrics.csv").exists());
    assert!(outdir.join("report.json").exists());
    assert!(outdir.join("plots/EGF_gbt.svg").exists());

    // Table layout: 5 dataset rows, 9 metric columns.
    let metrics = fs::read_to_string(outdir.join("metrics.csv")).unwrap();
    let lines: Vec<&str> = metrics.lines().collect();
    assert_eq!(lines.len(), 6);
    assert_eq!(lines[0].split(',').count(), 10);

    // Manifests carry the tool version and config hash.
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(work.join("manifests/evaluate.json")).unwrap())
            .unwrap();
    assert_eq!(manifest["stage"], "evaluate");
    assert!(manifest["config_hash"].as_str().unwrap().len() == 64);
    assert!(!manifest["outputs"].as_array().unwrap().is_empty());
}

#[test]
fn pipeline_replay_is_byte_identical() {
    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    let mut outputs = Vec::new();
    for dir in [&dir_a, &dir_b] {
        let config = write_small_config(dir.path());
        let out = pqos()
            .args(["--config", config.to_str().unwrap()])
            .args(["--dataset", "egf", "--dataset", "egls"])
            .args(["--model", "gbt"])
            .arg("pipeline")
            .env("PQOS_LOG", "warn")
            .output()
            .unwrap();
        run_ok(&out);
        outputs.push(fs::read(dir.path().join("out/metrics.csv")).unwrap());
    }
    assert_eq!(outputs[0], outputs[1], "metrics.csv must replay byte-identically");
}

#[test]
fn evaluate_without_build_names_missing_datasets() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_small_config(dir.path());
    let out = pqos()
        .args(["--config", config.to_str().unwrap(), "evaluate"])
        .env("PQOS_LOG", "warn")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    let record: serde_json::Value = serde_json::from_str(stderr.lines().last().unwrap()).unwrap();
    assert_eq!(record["error"], "stage_failure");
    assert_eq!(record["stage"], "evaluate");
    assert!(record["message"].as_str().unwrap().contains("EGF"));
}

#[test]
fn bad_config_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_small_config(dir.path());
    let out = pqos()
        .args(["--config", config.to_str().unwrap()])
        .args(["--dataset", "not-a-dataset", "synth"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    let record: serde_json::Value = serde_json::from_str(stderr.lines().last().unwrap()).unwrap();
    assert_eq!(record["error"], "config");
}

#[test]
fn single_stages_chain_manually() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_small_config(dir.path());
    let cfg_arg = ["--config".to_string(), config.to_str().unwrap().to_string()];
    for stage in ["synth", "ingest", "align"] {
        let out = pqos()
            .args(&cfg_arg)
            .arg(stage)
            .env("PQOS_LOG", "warn")
            .output()
            .unwrap();
        run_ok(&out);
    }
    let counts: serde_json::Value = serde_json::from_str(
        &fs::read_to_string(dir.path().join("work/align/counts.json")).unwrap(),
    )
    .unwrap();
    let m0 = &counts["0"];
    assert!(m0["temporal_pairs"].as_u64().unwrap() > 900);
    assert!(m0["spatial_bins"]["1-2min"].as_u64().unwrap() > 900);
}
