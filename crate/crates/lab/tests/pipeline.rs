use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use shadingnet_core::net::ShadingNet;
use shadingnet_core::Map;
use shadingnet_lab::dataset::{self, layer_path, Split, TrainingSample};
use shadingnet_lab::decompose::{decompose_image, OUTPUTS};
use shadingnet_lab::eval::{self, COMPONENTS};
use shadingnet_lab::train::{self, checkpoint_path, load_network, TrainingLogRecord, LOG_FILE};
use shadingnet_lab::{checkpoint, f32map, imageio, RunConfig};

fn snapshot(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.insert(path.clone(), fs::read(&path).unwrap());
            }
        }
    }
    out
}

fn config(data: &Path, out: &Path, epochs: usize) -> RunConfig {
    RunConfig {
        dataset_dir: data.to_path_buf(),
        output_dir: out.to_path_buf(),
        resolution: [32, 32],
        batch_size: 2,
        epochs,
        seed: 4,
        ..RunConfig::default()
    }
}

#[test]
fn identity_scores_are_zero() {
    let dir = tempfile::tempdir().unwrap();
    dataset::generate(3, 8, [32, 32], dir.path()).unwrap();
    for i in 0..3 {
        let s = TrainingSample::load(&dir.path().join(dataset::sample_dir_name(i))).unwrap();
        let scores = eval::identity_scores(&s).unwrap();
        assert_eq!(scores.keys().map(String::as_str).collect::<Vec<_>>().len(), COMPONENTS.len());
        for (name, sc) in scores {
            for v in [sc.mse, sc.smse, sc.lmse, sc.dssim] {
                assert!(v.abs() < 1e-9, "{name}: {v}");
            }
        }
    }
}

#[test]
fn training_log_checkpoints_and_eval() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    dataset::generate(7, 1, [32, 32], &data).unwrap();
    let run = dir.path().join("run");
    let cfg = config(&data, &run, 4);
    let mut seen = Vec::new();
    let (mut net, summary) = train::train(&cfg, |e| seen.push(e.epoch)).unwrap();
    assert_eq!(seen, [0, 1, 2, 3]);
    assert_eq!(summary.max_is_ground_truth, 0.0);

    // 6 training samples in batches of 2: three steps per epoch.
    let log = fs::read_to_string(run.join(LOG_FILE)).unwrap();
    let records: Vec<TrainingLogRecord> = log.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(records.len(), 12);
    assert_eq!(records.iter().map(|r| r.step).collect::<Vec<_>>(), (0..12).collect::<Vec<_>>());
    assert!(records.iter().all(|r| r.lr == cfg.lr_at(r.epoch) && r.loss.total.is_finite()));
    assert_eq!(records[0].loss.total, summary.first_step_total);

    // Only the first and latest checkpoints survive.
    assert!(checkpoint_path(&run, 1).is_file());
    assert!(!checkpoint_path(&run, 2).exists() && !checkpoint_path(&run, 3).exists());
    assert_eq!(summary.final_checkpoint, checkpoint_path(&run, 4));

    let bytes = fs::read(&summary.final_checkpoint).unwrap();
    assert_eq!(checkpoint::encode(net.params()), bytes);
    let mut loaded = load_network(&summary.final_checkpoint).unwrap();
    assert_eq!(loaded.params(), net.params());
    assert!(loaded.params().params().iter().all(|p| p.step_count == 12));

    let before = snapshot(dir.path());
    let report = eval::evaluate(&mut loaded, &data, Split::Train).unwrap();
    assert_eq!(snapshot(dir.path()), before, "evaluation must not write");
    assert_eq!(report.metrics.n_images, 6);
    assert_eq!(report.samples.len(), 6);
    for name in COMPONENTS {
        let per: Vec<_> = report.samples.iter().map(|s| s.components[name]).collect();
        let mean = |f: fn(&shadingnet_core::metrics::ImageScores) -> f64| per.iter().map(f).sum::<f64>() / per.len() as f64;
        let c = report.metrics.components[name];
        assert!((c.mse - mean(|s| s.mse)).abs() < 1e-9);
        assert!((c.smse - mean(|s| s.smse)).abs() < 1e-9);
        assert!((c.lmse - mean(|s| s.lmse)).abs() < 1e-9);
        assert!((c.dssim - mean(|s| s.dssim)).abs() < 1e-9);
    }
    let again = eval::evaluate(&mut net, &data, Split::Train).unwrap();
    assert_eq!(again, report, "evaluation is deterministic and matches the in-memory network");

    fs::remove_file(layer_path(&data.join(dataset::sample_dir_name(0)), "ambient")).unwrap();
    let partial = eval::evaluate(&mut loaded, &data, Split::Train).unwrap();
    assert_eq!((partial.skipped, partial.metrics.n_images), (1, 5));
}

#[test]
fn training_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    dataset::generate(3, 2, [32, 32], &data).unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let (_, sa) = train::train(&config(&data, &a, 1), |_| {}).unwrap();
    let (_, sb) = train::train(&config(&data, &b, 1), |_| {}).unwrap();
    assert_eq!(sa.first_step_total, sb.first_step_total);
    assert_eq!(fs::read(checkpoint_path(&a, 1)).unwrap(), fs::read(checkpoint_path(&b, 1)).unwrap());
}

#[test]
fn decompose_odd_extent() {
    let dir = tempfile::tempdir().unwrap();
    let img_path = dir.path().join("in.png");
    let img = Map::from_fn(3, 65, 65, |c, y, x| ((c * 31 + y * 7 + x * 3) % 97) as f32 / 96.0);
    imageio::write_rgb(&img_path, &img).unwrap();
    let mut net = ShadingNet::build(6);
    let out = dir.path().join("out");
    let written = decompose_image(&mut net, &img_path, &out).unwrap();
    assert_eq!(written.len(), OUTPUTS.len());
    for name in OUTPUTS {
        let m = f32map::read(&out.join(format!("{name}.f32"))).unwrap();
        let channels = if name == "rho_final" { 3 } else { 1 };
        assert_eq!(m.dims(), (channels, 65, 65), "{name}");
        assert!(m.all_finite());
        match name {
            "shadow" => assert!(m.data().iter().all(|&v| v <= 0.0)),
            "shading_direct" => {}
            _ => assert!(m.data().iter().all(|&v| v >= 0.0), "{name}"),
        }
        let preview = imageio::read_rgb(&out.join(format!("{name}.png"))).unwrap();
        assert_eq!((preview.height(), preview.width()), (65, 65));
    }
    let s_u = f32map::read(&out.join("s_u.f32")).unwrap();
    let amb = f32map::read(&out.join("ambient.f32")).unwrap();
    let shadow = f32map::read(&out.join("shadow.f32")).unwrap();
    let direct = f32map::read(&out.join("shading_direct.f32")).unwrap();
    for i in 0..s_u.data().len() {
        let want = s_u.data()[i] - amb.data()[i] - shadow.data()[i];
        assert!((direct.data()[i] - want).abs() < 1e-6);
    }
}
