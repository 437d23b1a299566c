//! End-to-end runs of the `tgraph` binary.

use std::path::Path;
use std::process::{Command, Output};

fn tgraph(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tgraph")).args(args).output().expect("binary runs")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn datagen(out: &Path, extra: &[&str]) {
    let mut args =
        vec!["datagen", "--out", p(out), "--count", "12", "--max-rows", "4", "--max-cols", "4", "--seed", "5"];
    args.extend_from_slice(extra);
    let o = tgraph(&args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn help_and_usage_errors() {
    assert_eq!(tgraph(&["--help"]).status.code(), Some(0));
    assert_eq!(tgraph(&["train", "--help"]).status.code(), Some(0));
    assert_eq!(tgraph(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(tgraph(&["eval", "--gt", "a.jsonl"]).status.code(), Some(1));
}

#[test]
fn missing_input_is_a_data_error() {
    let o = tgraph(&["validate", "--data", "/nonexistent/tables.jsonl"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn datagen_is_reproducible_and_valid() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.jsonl"), dir.path().join("b.jsonl"));
    datagen(&a, &["--span-prob", "0.3"]);
    datagen(&b, &["--span-prob", "0.3"]);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert_eq!(std::fs::read_to_string(&a).unwrap().lines().count(), 12);
    assert_eq!(tgraph(&["validate", "--data", p(&a)]).status.code(), Some(0));
}

#[test]
fn ground_truth_scores_perfectly_against_itself() {
    let dir = tempfile::tempdir().unwrap();
    let gt = dir.path().join("gt.jsonl");
    datagen(&gt, &["--span-prob", "0.2"]);
    let o = tgraph(&["eval", "--gt", p(&gt), "--pred", p(&gt)]);
    assert!(o.status.success());
    let report: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    for key in ["precision", "recall", "hmean", "a_all", "f_beta", "waf"] {
        assert_eq!(report[key], 1.0, "{key}");
    }
}

#[test]
fn segmaps_feed_box_extraction() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.jsonl");
    datagen(&data, &["--segmaps"]);
    let first = std::fs::read_to_string(&data).unwrap();
    let line: serde_json::Value = serde_json::from_str(first.lines().next().unwrap()).unwrap();
    let map = dir.path().join(line["segmap"].as_str().unwrap());
    let o = tgraph(&["boxes", "--segmap", p(&map)]);
    assert!(o.status.success());
    let boxes: Vec<[f64; 4]> = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(boxes.len(), line["cells"].as_array().unwrap().len());
}

#[test]
fn train_predict_convert_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.jsonl");
    let model = dir.path().join("m.json");
    let pred = dir.path().join("pred.jsonl");
    datagen(&data, &[]);
    let o = tgraph(&["train", "--data", p(&data), "--out", p(&model), "--epochs", "20", "--hidden", "8"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let o = tgraph(&["predict", "--model", p(&model), "--data", p(&data), "--out", p(&pred), "--drop-fraction", "0.2"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(tgraph(&["eval", "--gt", p(&data), "--pred", p(&pred)]).status.code(), Some(0));

    let out_dir = dir.path().join("csv");
    let o = tgraph(&["convert", "--in", p(&data), "--format", "csv", "--out-dir", p(&out_dir)]);
    assert!(o.status.success());
    assert_eq!(std::fs::read_dir(&out_dir).unwrap().count(), 12);
    let o = tgraph(&["convert", "--in", p(&data), "--format", "adjacency"]);
    assert!(o.status.success());
    assert_eq!(String::from_utf8(o.stdout).unwrap().lines().count(), 12);
}

#[test]
fn overlapping_cells_fail_conversion() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("bad.jsonl");
    std::fs::write(
        &data,
        concat!(
            r#"{"id":"t7","width":100,"height":100,"cells":["#,
            r#"{"id":1,"bbox":[20,20,10,10],"logical":[0,1,0,0]},"#,
            r#"{"id":2,"bbox":[60,60,10,10],"logical":[1,1,0,1]}]}"#,
            "\n"
        ),
    )
    .unwrap();
    let o = tgraph(&["convert", "--in", p(&data), "--format", "html"]);
    assert_eq!(o.status.code(), Some(3));
    let msg = String::from_utf8_lossy(&o.stderr);
    assert!(msg.contains("t7") && msg.contains('1') && msg.contains('2'), "{msg}");
    assert_eq!(tgraph(&["validate", "--data", p(&data)]).status.code(), Some(3));
}

#[test]
fn settings_file_supplies_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.json");
    std::fs::write(&cfg, r#"{"count": 3, "max-rows": 2, "seed": 1}"#).unwrap();
    let out = dir.path().join("d.jsonl");
    let o = tgraph(&["datagen", "--config", p(&cfg), "--out", p(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(std::fs::read_to_string(&out).unwrap().lines().count(), 3);
}
