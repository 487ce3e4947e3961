use std::path::Path;
use std::process::{Command, Output};

use tlsxai::model::{ModelKind, Tree, TreeEnsemble, TreeNode};

fn tlsxai(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tlsxai"))
        .args(args)
        .current_dir(dir)
        .env_remove("TLSXAI_CONFIG")
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = tlsxai(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn err(dir: &Path, args: &[&str]) -> String {
    let out = tlsxai(dir, args);
    assert!(!out.status.success(), "{args:?} unexpectedly succeeded");
    String::from_utf8(out.stderr).unwrap()
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn train_eval_and_metrics_report() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(d, &["synth", "-n", "60", "-o", "s.csv"]);
    let out = ok(d, &["train", "s.csv", "-o", "m.json", "--model", "rf", "--folds", "3", "--param", "n_estimators=5"]);
    assert!(out.contains("test: accuracy"));
    let report = json(&d.join("m.json.metrics.json"));
    for k in ["accuracy", "precision", "recall", "f1", "mcc"] {
        assert!(report["test"][k].is_number(), "{k}");
    }
    assert_eq!(report["cv"]["k"], 3);
    assert_eq!(report["params"]["n_estimators"], 5);
    assert_eq!(report["provenance"]["inputs"][0]["name"], "s.csv");
    let model = json(&d.join("m.json"));
    assert_eq!(model["kind"], "forest-average");
    assert_eq!(model["trees"].as_array().unwrap().len(), 5);

    ok(d, &["eval", "m.json", "s.csv", "-o", "e.json"]);
    assert!(json(&d.join("e.json"))["metrics"]["mcc"].is_number());
}

#[test]
fn schema_mismatch_is_reported() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    std::fs::write(d.join("bad.csv"), "a,b,label,flow_id\n1,2,0,x\n3,4,1,y\n").unwrap();
    let e = err(d, &["train", "bad.csv", "-o", "m.json"]);
    assert!(e.contains("bad.csv"), "{e}");
    assert!(e.to_lowercase().contains("schema"), "{e}");
    assert!(!d.join("m.json").exists());

    ok(d, &["synth", "-n", "20", "-o", "s.csv", "--n-states", "4"]);
    let e = err(d, &["train", "s.csv", "-o", "m.json"]);
    assert!(e.to_lowercase().contains("schema"), "{e}");
}

#[test]
fn unknown_hyperparameter_and_bad_grid() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(d, &["synth", "-n", "20", "-o", "s.csv"]);
    let e = err(d, &["train", "s.csv", "-o", "m.json", "--param", "depth=3"]);
    assert!(e.contains("depth"), "{e}");
    err(d, &["tune", "s.csv", "-o", "t.json", "--grid", "max_depth=a,b"]);
    assert!(!d.join("t.json").exists());
}

#[test]
fn explain_rejects_inconsistent_covers_without_writing() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(d, &["synth", "-n", "10", "-o", "s.csv"]);
    let header = std::fs::read_to_string(d.join("s.csv")).unwrap();
    let names: Vec<String> = header.lines().next().unwrap().split(',').map(String::from).collect();
    let n_features = names.len() - 2;
    // covers that do not add up break the attribution identity
    let tree = Tree {
        nodes: vec![
            TreeNode::split(0, 1.0, 1, 2, 10.0),
            TreeNode::leaf(-1.0, 1.0),
            TreeNode::leaf(2.0, 1.0),
        ],
    };
    let mut model = TreeEnsemble::new(ModelKind::Boosted, vec![tree], 0.0, 1.0, n_features);
    model.schema_version = "tlsxai-v1".into();
    model.feature_names = names[..n_features].to_vec();
    std::fs::write(d.join("broken.json"), model.to_json()).unwrap();
    // rejected while loading, before any attribution is attempted
    let e = err(d, &["explain", "broken.json", "s.csv", "--out-dir", "out"]);
    assert!(e.contains("cover"), "{e}");
    assert!(!d.join("out").exists());

    ok(d, &["train", "s.csv", "-o", "m.json", "--no-cv", "--param", "n_estimators=3"]);
    ok(d, &["explain", "m.json", "s.csv", "--out-dir", "out", "--top-k", "3"]);
    let global = json(&d.join("out/global.json"));
    assert_eq!(global["top_k"].as_array().unwrap().len(), 3);
    let local = std::fs::read_to_string(d.join("out/local.jsonl")).unwrap();
    assert_eq!(local.lines().count(), 20);
    let first: serde_json::Value = serde_json::from_str(local.lines().next().unwrap()).unwrap();
    assert_eq!(first["contributions"].as_array().unwrap().len(), 4);
    assert_eq!(first["output_space"], "margin");
}

#[test]
fn labels_from_directories_and_label_map() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    std::fs::create_dir_all(d.join("caps/malware")).unwrap();
    std::fs::create_dir_all(d.join("caps/other")).unwrap();
    ok(d, &["synth", "--profile", "malware", "-n", "3", "-o", "a.csv", "--pcap-out", "caps/malware/a.pcap"]);
    ok(d, &["synth", "--profile", "normal", "-n", "2", "-o", "b.csv", "--pcap-out", "caps/other/b.pcap"]);
    ok(d, &["synth", "--profile", "normal", "-n", "4", "-o", "c.csv", "--pcap-out", "caps/other/c.pcap"]);
    std::fs::write(d.join("labels.csv"), "path,label\nother/b.pcap,normal\n").unwrap();
    ok(d, &["extract", "caps", "-o", "x.csv", "--label-map", "labels.csv"]);
    let text = std::fs::read_to_string(d.join("x.csv")).unwrap();
    let labels: Vec<&str> = text.lines().skip(1).map(|l| l.split(',').rev().nth(1).unwrap()).collect();
    assert_eq!(labels.iter().filter(|l| **l == "1").count(), 3);
    assert_eq!(labels.iter().filter(|l| **l == "0").count(), 2);
    assert_eq!(labels.iter().filter(|l| l.is_empty()).count(), 4);
    let log = json(&d.join("x.csv.log.json"));
    assert_eq!(log["unlabeled_rows"], 4);
    assert_eq!(log["files"].as_array().unwrap().len(), 3);
    // unlabeled rows cannot be trained on
    let e = err(d, &["train", "x.csv", "-o", "m.json"]);
    assert!(e.to_lowercase().contains("label"), "{e}");
}

#[test]
fn config_file_from_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    std::fs::write(d.join("cfg.json"), r#"{"seed": 5, "cv_folds": 2, "model": "extra-average"}"#).unwrap();
    ok(d, &["synth", "-n", "20", "-o", "s.csv"]);
    let out = Command::new(env!("CARGO_BIN_EXE_tlsxai"))
        .args(["--jobs", "2", "train", "s.csv", "-o", "m.json", "--param", "n_estimators=3"])
        .current_dir(d)
        .env("TLSXAI_CONFIG", d.join("cfg.json"))
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report = json(&d.join("m.json.metrics.json"));
    assert_eq!(report["model"], "extra-average");
    assert_eq!(report["cv"]["k"], 2);
    assert_eq!(report["provenance"]["config"]["seed"], 5);

    std::fs::write(d.join("bad.json"), r#"{"sed": 5}"#).unwrap();
    err(d, &["--config", "bad.json", "synth", "-n", "2", "-o", "t.csv"]);
}

#[test]
fn truncated_capture_is_tolerated_and_garbage_is_not() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(d, &["synth", "--profile", "normal", "-n", "5", "-o", "a.csv", "--pcap-out", "a.pcap"]);
    let bytes = std::fs::read(d.join("a.pcap")).unwrap();
    std::fs::write(d.join("cut.pcap"), &bytes[..bytes.len() - 7]).unwrap();
    ok(d, &["extract", "cut.pcap", "-o", "cut.csv", "--label", "normal"]);
    assert_eq!(json(&d.join("cut.csv.log.json"))["files"][0]["decode"]["truncated"], true);

    std::fs::write(d.join("junk.pcap"), b"not a capture at all").unwrap();
    let e = err(d, &["extract", "junk.pcap", "-o", "junk.csv"]);
    assert!(e.contains("junk.pcap"), "{e}");
    assert!(!d.join("junk.csv").exists());
}
