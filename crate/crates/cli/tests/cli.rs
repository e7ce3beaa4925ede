use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const TINY: &str = r#"
schema_version = 1
seed = 3
train_scenes = 2
test_scenes = 1
repetitions = 1
max_train_windows = 200
max_test_windows = 50

[predictor]
z_dim = 2
hidden = 8
map_features = 2
max_epochs = 2
batch_size = 32
"#;

fn trackcast(dir: &Path, args: &[&str]) -> Output {
    let out = Command::new(env!("CARGO_BIN_EXE_trackcast"))
        .arg("--config")
        .arg(dir.join("tiny.toml"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("spawn trackcast");
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn setup() -> (tempfile::TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("tiny.toml"), TINY).unwrap();
    let root = dir.path().to_path_buf();
    (dir, root)
}

fn p(dir: &Path, rel: &str) -> String {
    dir.join(rel).to_string_lossy().into_owned()
}

#[test]
fn default_config_round_trips() {
    let out = Command::new(env!("CARGO_BIN_EXE_trackcast")).arg("default-config").output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let cfg = trackcast::experiment::ExperimentConfig::from_toml_str(&text).unwrap();
    assert_eq!(cfg, trackcast::experiment::ExperimentConfig::default());
}

#[test]
fn perception_stages_chain() {
    let (_guard, d) = setup();
    trackcast(&d, &["--out", &p(&d, "sim"), "simulate"]);
    trackcast(&d, &["--out", &p(&d, "det"), "detect", "--input", &p(&d, "sim/gt.ndjson")]);
    trackcast(&d, &["--out", &p(&d, "trk"), "track", "--input", &p(&d, "det/detections.ndjson"), "--gt", &p(&d, "sim/gt.ndjson")]);
    let tracks: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.join("trk/tracks.json")).unwrap()).unwrap();
    assert!(tracks["frames"].as_array().is_some_and(|f| !f.is_empty()));
    for stage in ["sim", "det", "trk"] {
        assert!(d.join(stage).join("manifest.json").exists(), "{stage}");
    }
}

#[test]
fn prediction_stages_chain() {
    let (_guard, d) = setup();
    trackcast(&d, &["--out", &p(&d, "train"), "build-dataset", "--source", "gt", "--split", "train"]);
    trackcast(&d, &["--out", &p(&d, "test"), "build-dataset", "--source", "mot", "--split", "test"]);
    trackcast(&d, &["--out", &p(&d, "model"), "train", "--dataset", &p(&d, "train/dataset.ndjson")]);
    let ckpt = p(&d, "model/checkpoint.json");
    trackcast(&d, &["--out", &p(&d, "pred"), "predict", "--checkpoint", &ckpt, "--dataset", &p(&d, "test/dataset.ndjson"), "--k", "3"]);
    let preds = std::fs::read_to_string(d.join("pred/predictions.ndjson")).unwrap();
    let windows = std::fs::read_to_string(d.join("test/dataset.ndjson")).unwrap().lines().count();
    assert_eq!(preds.lines().count(), windows);

    trackcast(&d, &["--out", &p(&d, "eval"), "evaluate", "--checkpoint", &ckpt, "--dataset", &p(&d, "test/dataset.ndjson")]);
    let scores: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.join("eval/prediction_scores.json")).unwrap()).unwrap();
    let ade: Vec<f64> = scores["min_ade"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    assert!(ade[2] <= ade[1] && ade[1] <= ade[0], "{ade:?}");

    trackcast(&d, &["--out", &p(&d, "render"), "render", "--checkpoint", &ckpt, "--frame", "8", "--k", "2"]);
    let svg = std::fs::read_to_string(d.join("render/birdseye.svg")).unwrap();
    assert!(svg.starts_with("<svg") && svg.contains("class=\"prediction\""));
}

#[test]
fn tracker_evaluation_reports_amota() {
    let (_guard, d) = setup();
    trackcast(&d, &["--out", &p(&d, "eval"), "evaluate"]);
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.join("eval/tracking_scores.json")).unwrap()).unwrap();
    let amota = report["amota"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&amota));
}

#[test]
fn bad_config_is_rejected() {
    let (_guard, d) = setup();
    std::fs::write(d.join("tiny.toml"), "schema_version = 99\n").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_trackcast"))
        .arg("--config")
        .arg(d.join("tiny.toml"))
        .args(["--out", &p(&d, "x"), "simulate"])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(!d.join("x/gt.ndjson").exists());
}
