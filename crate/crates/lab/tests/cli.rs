use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use shadingnet_core::Map;
use shadingnet_lab::dataset::{layer_path, Manifest};
use shadingnet_lab::error::exit;
use shadingnet_lab::f32map;
use shadingnet_lab::train::{checkpoint_path, TrainingLogRecord, LOG_FILE};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_shadingnet")).args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn synth(n: usize, res: &str, out: &Path) {
    let o = run(&["synth", "--n", &n.to_string(), "--seed", "3", "--res", res, "--out", s(out)]);
    assert_eq!(code(&o), exit::SUCCESS, "{}", stderr(&o));
}

#[test]
fn usage_errors() {
    assert_eq!(code(&run(&[])), exit::USAGE);
    assert_eq!(code(&run(&["bogus"])), exit::USAGE);
    assert_eq!(code(&run(&["synth", "--n", "x", "--out", "d"])), exit::USAGE);
    assert_eq!(code(&run(&["--help"])), exit::SUCCESS);
    let bad_res = run(&["train", "--dataset", "d", "--res", "33"]);
    assert_eq!(code(&bad_res), exit::USAGE, "{}", stderr(&bad_res));
    let bad_lr = run(&["train", "--dataset", "d", "--lr", "-1"]);
    assert_eq!(code(&bad_lr), exit::USAGE);
}

#[test]
fn synth_empty_and_missing_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("empty");
    synth(0, "64", &data);
    assert!(Manifest::read(&data).unwrap().samples.is_empty());

    let o = run(&["train", "--dataset", s(&data), "--out", s(&dir.path().join("run")), "--epochs", "1"]);
    assert_eq!(code(&o), exit::DATA, "{}", stderr(&o));

    let o = run(&["train", "--dataset", s(&dir.path().join("nowhere")), "--out", s(&dir.path().join("run"))]);
    assert_eq!(code(&o), exit::DATA);
    assert!(stderr(&o).contains("nowhere"));

    let o = run(&["decompose", "--image", "missing.png", "--checkpoint", "missing.shdn", "--out", s(dir.path())]);
    assert_eq!(code(&o), exit::DATA);
}

#[test]
fn resolution_mismatch_rejected_before_training() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    synth(3, "32", &data);
    let run_dir = dir.path().join("run");
    let o = run(&["train", "--dataset", s(&data), "--out", s(&run_dir), "--res", "64", "--epochs", "1"]);
    assert_eq!(code(&o), exit::DATA);
    assert!(!run_dir.join(LOG_FILE).exists());
}

#[test]
fn divergence_exits_numeric() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    synth(5, "32", &data);
    let o = run(&[
        "train", "--dataset", s(&data), "--out", s(&dir.path().join("run")),
        "--res", "32", "--batch-size", "2", "--lr", "1e38", "--epochs", "2",
    ]);
    assert_eq!(code(&o), exit::NUMERIC, "{}", stderr(&o));
    assert!(stderr(&o).contains("non-finite"));
}

#[test]
fn train_eval_decompose_round() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    synth(5, "32", &data);
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, r#"{"epochs": 5, "batch_size": 4, "resolution": [32, 32], "seed": 9}"#).unwrap();
    let run_dir = dir.path().join("run");
    let o = run(&[
        "train", "--config", s(&cfg), "--dataset", s(&data), "--out", s(&run_dir), "--epochs", "1",
    ]);
    assert_eq!(code(&o), exit::SUCCESS, "{}", stderr(&o));

    let log = fs::read_to_string(run_dir.join(LOG_FILE)).unwrap();
    let records: Vec<TrainingLogRecord> = log.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(records.len(), 1, "flag overrides the file's epoch count");
    assert_eq!(records[0].is_ground_truth, 0.0);
    let saved: serde_json::Value = serde_json::from_str(&fs::read_to_string(run_dir.join("config.json")).unwrap()).unwrap();
    assert_eq!(saved["seed"], 9);
    assert_eq!(saved["epochs"], 1);

    let ckpt = checkpoint_path(&run_dir, 1);
    let eval_dir = dir.path().join("eval");
    let o = run(&["eval", "--dataset", s(&data), "--checkpoint", s(&ckpt), "--split", "test", "--out", s(&eval_dir)]);
    assert_eq!(code(&o), exit::SUCCESS, "{}", stderr(&o));
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(eval_dir.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["metrics"]["n_images"], 1);
    assert!(report["metrics"]["components"]["rho_final"]["smse"].as_f64().unwrap().is_finite());
    let table = String::from_utf8(o.stdout).unwrap();
    assert!(table.contains("rho_final") && table.contains("SMSE"));

    let o = run(&["eval", "--dataset", s(&data), "--checkpoint", s(&ckpt), "--split", "train"]);
    assert_eq!(code(&o), exit::SUCCESS);
    assert!(run_dir.join("eval_train").join("report.txt").is_file());

    let png = data.join("sample_000000").join("composite.png");
    let out = dir.path().join("dec");
    let o = run(&["decompose", "--image", s(&png), "--checkpoint", s(&ckpt), "--out", s(&out)]);
    assert_eq!(code(&o), exit::SUCCESS, "{}", stderr(&o));
    assert_eq!(f32map::read(&out.join("rho_final.f32")).unwrap().dims(), (3, 32, 32));

    let mut bad = fs::read(&ckpt).unwrap();
    bad.truncate(bad.len() - 3);
    let bad_path = dir.path().join("bad.shdn");
    fs::write(&bad_path, bad).unwrap();
    let o = run(&["eval", "--dataset", s(&data), "--checkpoint", s(&bad_path)]);
    assert_eq!(code(&o), exit::DATA);
    assert!(stderr(&o).contains("truncated"), "{}", stderr(&o));
}

fn copy_layers(from: &Path, to: &Path, scale: f32) {
    for name in ["reflectance", "shading_unified", "ambient", "shadow"] {
        let m = f32map::read(&layer_path(from, name)).unwrap();
        fs::create_dir_all(to).unwrap();
        f32map::write(&layer_path(to, name), &m.map(|v| v * scale)).unwrap();
    }
}

fn smse_of(report: &serde_json::Value, component: &str) -> (f64, f64) {
    let c = &report["components"][component];
    (c["mse"].as_f64().unwrap(), c["smse"].as_f64().unwrap())
}

#[test]
fn metrics_command() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    synth(2, "32", &data);
    let (gt, pred) = (dir.path().join("gt"), dir.path().join("pred"));
    for i in 0..2 {
        let sample = data.join(format!("sample_{i:06}"));
        copy_layers(&sample, &gt.join(format!("img{i}")), 1.0);
        copy_layers(&sample, &pred.join(format!("img{i}")), 2.0);
    }
    fs::write(gt.join("img0").join("mask.f32"), f32map::encode(&Map::zeros(1, 1, 1))).unwrap();

    let same = dir.path().join("same");
    let o = run(&["metrics", "--pred", s(&gt), "--gt", s(&gt), "--out", s(&same)]);
    assert_eq!(code(&o), exit::SUCCESS, "{}", stderr(&o));
    let r: serde_json::Value = serde_json::from_str(&fs::read_to_string(same.join("report.json")).unwrap()).unwrap();
    assert_eq!(r["n_images"], 2);
    for c in ["reflectance", "shading_unified", "ambient", "shadow"] {
        assert_eq!(smse_of(&r, c), (0.0, 0.0), "{c}");
    }

    let o = run(&["metrics", "--pred", s(&pred), "--gt", s(&gt)]);
    assert_eq!(code(&o), exit::SUCCESS, "{}", stderr(&o));
    let r: serde_json::Value = serde_json::from_str(&fs::read_to_string(pred.join("report.json")).unwrap()).unwrap();
    let (mse, smse) = smse_of(&r, "reflectance");
    assert!(mse > 0.0);
    assert!(smse < 1e-12, "{smse}");

    fs::remove_file(layer_path(&pred.join("img1"), "ambient")).unwrap();
    let o = run(&["metrics", "--pred", s(&pred), "--gt", s(&gt)]);
    assert_eq!(code(&o), exit::DATA);
    let err = stderr(&o);
    assert!(err.contains("only in ground truth") && err.contains("ambient.f32"), "{err}");
}
