//! End-to-end checks of the `mvpc` binary: the one-shot pipeline and the
//! stage-by-stage chain over serialized artifacts.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_mvpc"))
}

fn tmp_dir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("mvpc_cli_{tag}_{}", std::process::id()));
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn write_config(dir: &Path) -> PathBuf {
    let config = r#"{
        "seed": 5,
        "dataset": {"synth": {"n_clusters": 3, "per_cluster": 14, "dims": [5, 5],
                              "separation": 8.0, "noise": 0.6, "seed": 3}},
        "similarity": {"metric": "cosine", "knn_k": 12},
        "train": {"segments": 12, "indi": 2, "indj_plus_1": 2, "lambda": 20.0, "epochs": 300},
        "fusion": {"aggregation": "formula"},
        "refine": {"passes": 1, "k": 8},
        "cluster": {"max_iter": 20}
    }"#;
    let path = dir.join("config.json");
    fs::write(&path, config).unwrap();
    path
}

#[test]
fn pipeline_command_writes_artifacts_and_metrics() {
    let dir = tmp_dir("pipeline");
    let config = write_config(&dir);
    let out = dir.join("run");
    let status = bin()
        .args(["pipeline", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert!(
        status.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&status.stderr)
    );
    let stdout = String::from_utf8_lossy(&status.stdout);
    assert!(stdout.contains("clusters:"), "missing summary: {stdout}");
    for artifact in [
        "dataset/manifest.json",
        "model.json",
        "pairs.csv",
        "knn_union.csv",
        "graph_fused.csv",
        "graph_refined.csv",
        "labels.csv",
        "metrics.json",
        "manifest.json",
    ] {
        assert!(out.join(artifact).exists(), "missing {artifact}");
    }
    let metrics: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("metrics.json")).unwrap()).unwrap();
    assert!(metrics["ari"].is_number());

    // Same config and seed reproduce the same metrics.
    let out2 = dir.join("run2");
    bin()
        .args(["pipeline", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(&out2)
        .output()
        .unwrap();
    assert_eq!(
        fs::read_to_string(out.join("metrics.json")).unwrap(),
        fs::read_to_string(out2.join("metrics.json")).unwrap()
    );
    fs::remove_dir_all(&dir).ok();
}

#[test]
fn stage_chain_matches_artifact_contracts() {
    let dir = tmp_dir("stages");
    let config = write_config(&dir);

    // synth
    let data_dir = dir.join("data");
    let status = bin()
        .args(["synth", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(&data_dir)
        .status()
        .unwrap();
    assert!(status.success());
    assert!(data_dir.join("manifest.json").exists());
    assert!(data_dir.join("labels.csv").exists());

    // train-probfn on the saved dataset
    let train_dir = dir.join("train");
    let status = bin()
        .args(["train-probfn", "--data"])
        .arg(data_dir.join("manifest.json"))
        .arg("--config")
        .arg(&config)
        .arg("--out")
        .arg(&train_dir)
        .status()
        .unwrap();
    assert!(status.success());
    for artifact in ["model.json", "pairs.csv", "knn_union.csv", "loss.csv"] {
        assert!(train_dir.join(artifact).exists(), "missing {artifact}");
    }

    // fuse
    let graph = dir.join("graph.csv");
    let status = bin()
        .args(["fuse", "--model"])
        .arg(train_dir.join("model.json"))
        .arg("--pairs")
        .arg(train_dir.join("pairs.csv"))
        .args(["--aggregation", "formula", "--out"])
        .arg(&graph)
        .status()
        .unwrap();
    assert!(status.success());

    // refine with zero passes is the identity on probabilities
    let same = dir.join("same.csv");
    let status = bin()
        .args(["refine", "--graph"])
        .arg(&graph)
        .arg("--knn")
        .arg(train_dir.join("knn_union.csv"))
        .args(["--passes", "0", "--out"])
        .arg(&same)
        .status()
        .unwrap();
    assert!(status.success());
    let strip_header = |p: &Path| {
        fs::read_to_string(p)
            .unwrap()
            .lines()
            .skip(1)
            .collect::<Vec<_>>()
            .join("\n")
    };
    assert_eq!(strip_header(&graph), strip_header(&same));

    // a real refinement pass
    let refined = dir.join("refined.csv");
    let status = bin()
        .args(["refine", "--graph"])
        .arg(&graph)
        .arg("--knn")
        .arg(train_dir.join("knn_union.csv"))
        .args(["--passes", "1", "--knn-k", "8", "--out"])
        .arg(&refined)
        .status()
        .unwrap();
    assert!(status.success());

    // cluster
    let labels = dir.join("pred.csv");
    let output = bin()
        .args(["cluster", "--graph"])
        .arg(&refined)
        .args(["--knn-k", "12", "--seed", "9", "--out"])
        .arg(&labels)
        .output()
        .unwrap();
    assert!(output.status.success());
    assert!(String::from_utf8_lossy(&output.stdout).contains("objective:"));

    // eval against the synthetic truth
    let metrics = dir.join("metrics.json");
    let output = bin()
        .args(["eval", "--pred"])
        .arg(&labels)
        .arg("--truth")
        .arg(data_dir.join("labels.csv"))
        .arg("--out")
        .arg(&metrics)
        .output()
        .unwrap();
    assert!(output.status.success());
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&metrics).unwrap()).unwrap();
    let ari = report["ari"].as_f64().unwrap();
    assert!(ari > 0.8, "stage-chain ari {ari}");
    fs::remove_dir_all(&dir).ok();
}

#[test]
fn usage_and_data_errors_use_distinct_exit_codes() {
    // Unknown flag: usage error, exit 1.
    let status = bin().args(["pipeline", "--nope"]).output().unwrap();
    assert_eq!(status.status.code(), Some(1));

    // Missing config file: data error, exit 2.
    let status = bin()
        .args(["pipeline", "--config", "/definitely/not/here.json"])
        .output()
        .unwrap();
    assert_eq!(status.status.code(), Some(2));
}
