//! End-to-end checks of the `candlenet` binary.

mod common;

use std::path::{Path, PathBuf};
use std::process::Output;

use common::synthetic_csv;

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_candlenet")
}

fn run(dir: &Path, args: &[&str]) -> Output {
    std::process::Command::new(bin())
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn write_csv(dir: &Path, name: &str, rows: usize, seed: u64) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, synthetic_csv(rows, seed)).unwrap();
    path
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn small_config(csv: &Path, out_dir: &Path, epochs: usize) -> String {
    format!(
        "{{\"input_csv\": [\"{}\"], \"output_dir\": \"{}\", \"window_len\": 16, \
          \"arch_scale\": 16, \"batch_size\": 8, \"epochs\": {epochs}, \"seed\": 3, \
          \"train_frac\": 0.6, \"val_frac\": 0.2}}",
        csv.display(),
        out_dir.display()
    )
}

#[test]
fn prepare_reports_window_counts() {
    let dir = tempfile::tempdir().unwrap();
    let csv = write_csv(dir.path(), "tick.csv", 300, 11);
    let out = run(
        dir.path(),
        &[
            "prepare",
            "--input", csv.to_str().unwrap(),
            "--window", "256",
            "--horizon", "5",
            "--stride", "5",
            "--out", "prep",
        ],
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = stdout(&out);
    assert!(text.contains("TICK: 300 bars read, 0 rows rejected, 8 windows"), "{text}");
    assert!(text.contains("total: 8 windows"), "{text}");
    let manifest = std::fs::read_to_string(dir.path().join("prep/manifest.csv")).unwrap();
    let lines: Vec<&str> = manifest.lines().collect();
    assert_eq!(lines[0], "symbol,start_date,end_date,label_date,label");
    assert_eq!(lines.len(), 9);
    for line in &lines[1..] {
        assert!(line.starts_with("TICK,2015-"), "{line}");
        assert!(line.ends_with(",0") || line.ends_with(",1"), "{line}");
    }
}

#[test]
fn prepare_rejects_short_series() {
    let dir = tempfile::tempdir().unwrap();
    let csv = write_csv(dir.path(), "tick.csv", 10, 11);
    let out = run(
        dir.path(),
        &["prepare", "--input", csv.to_str().unwrap(), "--window", "64", "--out", "prep"],
    );
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
}

#[test]
fn train_writes_curves_checkpoint_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let csv = write_csv(dir.path(), "tick.csv", 80, 12);
    for run_dir in ["a", "b"] {
        let cfg = dir.path().join(format!("{run_dir}.json"));
        std::fs::write(&cfg, small_config(&csv, &dir.path().join(run_dir), 3)).unwrap();
        let out = run(dir.path(), &["train", "--config", cfg.to_str().unwrap()]);
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
        assert!(stdout(&out).contains("test: "));
    }

    let curves = std::fs::read_to_string(dir.path().join("a/curves.csv")).unwrap();
    let lines: Vec<&str> = curves.lines().collect();
    assert_eq!(lines[0], "epoch,iteration,train_loss,train_acc,val_acc");
    assert_eq!(lines.len(), 1 + 3, "one row per epoch");
    assert!(lines[1].starts_with("1,"));
    assert!(lines[3].starts_with("3,"));

    // identical config and inputs must reproduce every artifact byte for byte
    for artifact in ["curves.csv", "checkpoint.json", "report.json"] {
        let a = std::fs::read(dir.path().join("a").join(artifact)).unwrap();
        let b = std::fs::read(dir.path().join("b").join(artifact)).unwrap();
        assert_eq!(a, b, "{artifact} differs between reruns");
    }

    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("a/report.json")).unwrap())
            .unwrap();
    assert_eq!(report["config"]["epochs"], 3);
    assert_eq!(report["report"]["rows"].as_array().unwrap().len(), 3);
    assert!(report["report"]["test"]["accuracy"].is_number());
}

#[test]
fn train_rejects_unknown_config_key() {
    let dir = tempfile::tempdir().unwrap();
    let csv = write_csv(dir.path(), "tick.csv", 80, 12);
    let cfg = dir.path().join("cfg.json");
    let mut text = small_config(&csv, &dir.path().join("out"), 2);
    text.insert_str(text.len() - 1, ", \"learning_rte\": 0.1");
    std::fs::write(&cfg, text).unwrap();
    let out = run(dir.path(), &["train", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("learning_rte"));
}

#[test]
fn train_rejects_malformed_rows_when_strict() {
    let dir = tempfile::tempdir().unwrap();
    let mut csv = synthetic_csv(80, 12);
    // swap one row's high and low
    let bad = csv.lines().nth(40).unwrap().to_string();
    let mut fields: Vec<&str> = bad.split(',').collect();
    fields.swap(2, 3);
    let swapped = fields.join(",");
    csv = csv.replace(&bad, &swapped);
    let path = dir.path().join("tick.csv");
    std::fs::write(&path, csv).unwrap();

    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, small_config(&path, &dir.path().join("out"), 2)).unwrap();
    let strict = run(dir.path(), &["train", "--config", cfg.to_str().unwrap()]);
    assert_eq!(strict.status.code(), Some(3));

    let mut text = small_config(&path, &dir.path().join("out"), 2);
    text.insert_str(text.len() - 1, ", \"lenient\": true");
    std::fs::write(&cfg, text).unwrap();
    let lenient = run(dir.path(), &["train", "--config", cfg.to_str().unwrap()]);
    assert_eq!(lenient.status.code(), Some(0), "{}", String::from_utf8_lossy(&lenient.stderr));
}

#[test]
fn evaluate_and_predict_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let csv = write_csv(dir.path(), "tick.csv", 80, 13);
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, small_config(&csv, &dir.path().join("out"), 2)).unwrap();
    let trained = run(dir.path(), &["train", "--config", cfg.to_str().unwrap()]);
    assert_eq!(trained.status.code(), Some(0), "{}", String::from_utf8_lossy(&trained.stderr));
    let ckpt = dir.path().join("out/checkpoint.json");

    let eval = run(
        dir.path(),
        &[
            "evaluate",
            "--model", ckpt.to_str().unwrap(),
            "--input", csv.to_str().unwrap(),
            "--out", "eval.json",
        ],
    );
    assert_eq!(eval.status.code(), Some(0), "{}", String::from_utf8_lossy(&eval.stderr));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("eval.json")).unwrap())
            .unwrap();
    assert_eq!(report["samples"], 64); // 80 - 16 - 1 + 1
    let acc = report["metrics"]["accuracy"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&acc));

    let predict = run(
        dir.path(),
        &["predict", "--model", ckpt.to_str().unwrap(), "--input", csv.to_str().unwrap()],
    );
    assert_eq!(predict.status.code(), Some(0), "{}", String::from_utf8_lossy(&predict.stderr));
    let line = stdout(&predict);
    let fields: Vec<&str> = line.trim().split(',').collect();
    assert_eq!(fields.len(), 4, "{line}");
    assert_eq!(fields[0], "TICK");
    assert!(fields[1] == "BUY" || fields[1] == "SELL");
    let bull: f64 = fields[2].parse().unwrap();
    let bear: f64 = fields[3].parse().unwrap();
    assert!((bull + bear - 1.0).abs() < 1e-9);

    let as_json = run(
        dir.path(),
        &["predict", "--model", ckpt.to_str().unwrap(), "--input", csv.to_str().unwrap(), "--json"],
    );
    assert_eq!(as_json.status.code(), Some(0));
    let parsed: serde_json::Value = serde_json::from_str(stdout(&as_json).trim()).unwrap();
    assert_eq!(parsed["symbol"], "TICK");
    assert_eq!(parsed["signal"], fields[1]);

    let short = write_csv(dir.path(), "short.csv", 5, 13);
    let too_short = run(
        dir.path(),
        &["predict", "--model", ckpt.to_str().unwrap(), "--input", short.to_str().unwrap()],
    );
    assert_eq!(too_short.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&too_short.stderr).contains("too short"));
}

#[test]
fn resume_matches_uninterrupted_run() {
    let dir = tempfile::tempdir().unwrap();
    let csv = write_csv(dir.path(), "tick.csv", 80, 14);

    let full_cfg = dir.path().join("full.json");
    std::fs::write(&full_cfg, small_config(&csv, &dir.path().join("full"), 4)).unwrap();
    let full = run(dir.path(), &["train", "--config", full_cfg.to_str().unwrap()]);
    assert_eq!(full.status.code(), Some(0), "{}", String::from_utf8_lossy(&full.stderr));

    let half_cfg = dir.path().join("half.json");
    std::fs::write(&half_cfg, small_config(&csv, &dir.path().join("half"), 2)).unwrap();
    let half = run(dir.path(), &["train", "--config", half_cfg.to_str().unwrap()]);
    assert_eq!(half.status.code(), Some(0), "{}", String::from_utf8_lossy(&half.stderr));

    let rest_cfg = dir.path().join("rest.json");
    std::fs::write(&rest_cfg, small_config(&csv, &dir.path().join("rest"), 4)).unwrap();
    let rest = run(
        dir.path(),
        &[
            "train",
            "--config", rest_cfg.to_str().unwrap(),
            "--resume", dir.path().join("half/checkpoint.json").to_str().unwrap(),
        ],
    );
    assert_eq!(rest.status.code(), Some(0), "{}", String::from_utf8_lossy(&rest.stderr));

    let full_curves = std::fs::read_to_string(dir.path().join("full/curves.csv")).unwrap();
    let rest_curves = std::fs::read_to_string(dir.path().join("rest/curves.csv")).unwrap();
    let full_tail: Vec<&str> = full_curves.lines().skip(3).collect();
    let rest_rows: Vec<&str> = rest_curves.lines().skip(1).collect();
    assert_eq!(rest_rows, full_tail, "resumed epochs must match the uninterrupted run");

    let full_ckpt = std::fs::read(dir.path().join("full/checkpoint.json")).unwrap();
    let rest_ckpt = std::fs::read(dir.path().join("rest/checkpoint.json")).unwrap();
    assert_eq!(full_ckpt, rest_ckpt, "final checkpoints must be identical");
}
