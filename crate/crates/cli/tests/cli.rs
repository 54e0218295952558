use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

const BIN: &str = env!("CARGO_BIN_EXE_gcndance");

const CONFIG: &str = r#"{
  "seed": 3,
  "paths": {"manifest": "corpus/manifest.json", "out_dir": "run"},
  "synthetic": {"train_per_style": 10, "eval_per_style": 4},
  "classifier": {"epochs": 1},
  "train": {"steps": 4, "batch": 3, "checkpoint_every": 2,
            "net": {"latent_channels": 8, "channels": [4, 4, 4, 4]}},
  "evaluation": {"repeats": 2, "generated_per_style": 2,
                 "classifier": {"epochs": 1, "feature_dim": 8, "channels": [4, 4, 4]}}
}"#;

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(BIN).current_dir(dir).env("RUST_LOG", "warn").args(args).output().expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = run(dir, args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

/// Workspace with a config and a written fixture corpus.
fn workspace() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("cfg.json"), CONFIG).unwrap();
    ok(dir.path(), &["--config", "cfg.json", "--out", "corpus", "synth-corpus"]);
    dir
}

/// Workspace with a trained (tiny) classifier and generator.
fn trained() -> tempfile::TempDir {
    let dir = workspace();
    ok(dir.path(), &["--config", "cfg.json", "train-classifier"]);
    ok(dir.path(), &["--config", "cfg.json", "train-gan"]);
    dir
}

fn read_json(p: PathBuf) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

fn frames(motion: &Value) -> Vec<Vec<f64>> {
    motion["frames"]
        .as_array()
        .unwrap()
        .iter()
        .map(|f| f.as_array().unwrap().iter().flat_map(|j| j.as_array().unwrap()[..2].to_vec()).map(|v| v.as_f64().unwrap()).collect())
        .collect()
}

#[test]
fn classifier_report_has_one_accuracy_per_fold_and_is_seeded() {
    let dir = workspace();
    let d = dir.path();
    ok(d, &["--config", "cfg.json", "train-classifier"]);
    let first = std::fs::read_to_string(d.join("run/classifier_report.json")).unwrap();
    let report: Value = serde_json::from_str(&first).unwrap();
    assert_eq!(report["folds"], 10);
    assert_eq!(report["fold_accuracies"].as_array().unwrap().len(), 10);
    ok(d, &["--config", "cfg.json", "train-classifier"]);
    assert_eq!(std::fs::read_to_string(d.join("run/classifier_report.json")).unwrap(), first);
}

#[test]
fn bad_schema_exits_2_with_field_path() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.json"), r#"{"classifier": {"folds": -1}}"#).unwrap();
    let out = run(dir.path(), &["--config", "bad.json", "train-classifier"]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("classifier.folds"));
    std::fs::write(dir.path().join("bad.json"), r#"{"train": {"lambda_rec": -1}}"#).unwrap();
    assert_eq!(code(&run(dir.path(), &["--config", "bad.json", "augment"])), 2);
}

#[test]
fn missing_manifest_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("cfg.json"), CONFIG).unwrap();
    let out = run(dir.path(), &["--config", "cfg.json", "train-gan"]);
    assert_eq!(code(&out), 3);
}

#[test]
fn training_logs_one_row_per_step_and_resumes() {
    let dir = trained();
    let d = dir.path();
    let csv = std::fs::read_to_string(d.join("run/metrics.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 4);
    assert!(d.join("run/checkpoints/step-000002.ckpt").exists());

    let straight = csv.lines().nth(4).unwrap().split(',').take(4).collect::<Vec<_>>().join(",");
    ok(d, &["--config", "cfg.json", "train-gan", "--resume", "run/checkpoints/step-000002.ckpt"]);
    let csv = std::fs::read_to_string(d.join("run/metrics.csv")).unwrap();
    let steps: Vec<&str> = csv.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(steps, ["1", "2", "3", "4"]);
    let resumed = csv.lines().nth(4).unwrap().split(',').take(4).collect::<Vec<_>>().join(",");
    assert_eq!(straight, resumed);
}

#[test]
fn generate_style_and_audio() {
    let dir = trained();
    let d = dir.path();
    ok(d, &["--config", "cfg.json", "--seed", "11", "generate", "--style", "ballet", "--length", "64"]);
    let a = read_json(d.join("run/motion.json"));
    assert_eq!(a["fps"], 24);
    assert_eq!(frames(&a).len(), 64);

    ok(d, &["--config", "cfg.json", "--seed", "12", "generate", "--style", "ballet", "--length", "64"]);
    let b = read_json(d.join("run/motion.json"));
    assert_ne!(frames(&a), frames(&b));

    ok(d, &["--config", "cfg.json", "--seed", "11", "generate", "--style", "ballet", "--length", "64"]);
    assert_eq!(frames(&a), frames(&read_json(d.join("run/motion.json"))));

    let wav = std::fs::read_dir(d.join("corpus/audio")).unwrap().next().unwrap().unwrap().path();
    let stdout = ok(d, &["--config", "cfg.json", "generate", "--audio", wav.to_str().unwrap(), "--length", "48"]);
    assert!(stdout.contains("styles "));
    let record = read_json(d.join("run/generation.json"));
    assert_eq!(record["styles"].as_array().unwrap().len(), 3);
    assert!(record["classification"]["windows"].as_array().is_some());
}

#[test]
fn generate_rejects_bad_length_and_missing_checkpoint() {
    let dir = workspace();
    let d = dir.path();
    assert_eq!(code(&run(d, &["--config", "cfg.json", "generate", "--style", "mj", "--length", "40"])), 2);
    assert_eq!(code(&run(d, &["--config", "cfg.json", "generate", "--style", "mj"])), 3);
}

#[test]
fn render_writes_one_svg_per_frame() {
    let dir = trained();
    let d = dir.path();
    ok(d, &["--config", "cfg.json", "generate", "--style", "salsa", "--length", "64"]);
    ok(d, &["render", "run/motion.json", "--out", "frames"]);
    let svgs: Vec<PathBuf> = std::fs::read_dir(d.join("frames"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "svg"))
        .collect();
    assert_eq!(svgs.len(), 64);
    for p in &svgs {
        assert_eq!(std::fs::read_to_string(p).unwrap().matches("<line").count(), 24);
    }
    let gif = std::fs::read(d.join("frames/motion.gif")).unwrap();
    assert_eq!(&gif[..6], b"GIF89a");
}

#[test]
fn render_rejects_degenerate_and_malformed_motion() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let point: Vec<[f64; 3]> = vec![[5.0, 5.0, 1.0]; 25];
    let doc = serde_json::json!({"fps": 24, "style": null, "frames": [point]});
    std::fs::write(d.join("point.json"), doc.to_string()).unwrap();
    let out = run(d, &["render", "point.json", "--out", "o"]);
    assert_eq!(code(&out), 3);
    assert!(String::from_utf8_lossy(&out.stderr).contains("degenerate"));
    std::fs::write(d.join("junk.json"), "{\"fps\": 24").unwrap();
    assert_eq!(code(&run(d, &["render", "junk.json", "--out", "o"])), 3);
}

#[test]
fn evaluate_identical_sets_and_report_shape() {
    let dir = trained();
    let d = dir.path();
    let cfg: Value = serde_json::from_str(CONFIG).unwrap();
    let mut same = cfg.clone();
    same["paths"]["generated"] = Value::from("corpus/manifest.json");
    std::fs::write(d.join("same.json"), same.to_string()).unwrap();
    ok(d, &["--config", "same.json", "evaluate"]);
    let report = read_json(d.join("run/report.json"));
    assert!(report["average"]["fid"]["mean"].as_f64().unwrap().abs() < 1e-6);

    ok(d, &["--config", "cfg.json", "evaluate"]);
    let report = read_json(d.join("run/report.json"));
    assert_eq!(report["repeats"], 2);
    let rows = report["per_style"].as_array().unwrap();
    assert_eq!(rows.len(), 3);
    for row in rows.iter().chain(std::iter::once(&report["average"])) {
        for metric in ["fid", "gan_train", "gan_test"] {
            assert!(row[metric]["mean"].as_f64().unwrap().is_finite());
            assert!(row[metric]["std"].as_f64().unwrap() >= 0.0);
        }
    }
}

#[test]
fn augment_matches_dataset_table() {
    let dir = workspace();
    let d = dir.path();
    ok(d, &["--config", "cfg.json", "augment"]);
    let stats = read_json(d.join("run/dataset_stats.json"));
    let total: u64 = stats["train_samples"].as_array().unwrap().iter().map(|v| v.as_u64().unwrap()).sum();
    assert_eq!(std::fs::read_dir(d.join("run/augmented")).unwrap().count() as u64, total);
}
