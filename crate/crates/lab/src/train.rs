//! The training driver.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use shadingnet_core::loss::{is_loss, training_loss, LossBreakdown, Targets};
use shadingnet_core::net::{ForwardConfig, ShadingNet};
use shadingnet_core::optim::Adam;
use shadingnet_core::rng::{chacha, derive};
use shadingnet_core::{Map, Shape, Tape, Tensor};

use crate::checkpoint;
use crate::config::RunConfig;
use crate::dataset::{Manifest, Split, TrainingSample};
use crate::error::{LabError, Result};

pub const LOG_FILE: &str = "train_log.jsonl";
pub const CONFIG_FILE: &str = "config.json";
const SHUFFLE_STREAM: u64 = 0x5348_5546;
const INIT_STREAM: u64 = 0x494e_4954;

/// One line of the JSON-lines training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingLogRecord {
    pub epoch: usize,
    pub step: usize,
    pub lr: f64,
    #[serde(flatten)]
    pub loss: LossBreakdown,
    /// The IS term evaluated on ground-truth components.
    pub is_ground_truth: f64,
    pub wall_ms: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochSummary {
    pub epoch: usize,
    pub lr: f64,
    pub steps: usize,
    pub mean_total: f64,
    pub checkpoint: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub epochs: Vec<EpochSummary>,
    pub first_step_total: f64,
    /// Largest IS term on ground truth over every step.
    pub max_is_ground_truth: f64,
    pub final_checkpoint: PathBuf,
}

/// Checkpoint written after `epochs_done` complete epochs.
pub fn checkpoint_path(output_dir: &Path, epochs_done: usize) -> PathBuf {
    output_dir.join(format!("epoch_{epochs_done:04}.shdn"))
}

/// Deterministic permutation of `0..n` for (seed, epoch).
pub fn epoch_order(seed: u64, epoch: usize, n: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut chacha(derive(derive(seed, SHUFFLE_STREAM), epoch as u64)));
    order
}

/// Splits `order` into batches; a short final batch of one sample is dropped
/// because train-mode normalization needs two.
pub fn batches(order: &[usize], batch_size: usize) -> Vec<&[usize]> {
    order.chunks(batch_size).filter(|b| b.len() == batch_size || b.len() >= 2).collect()
}

pub fn network_seed(seed: u64) -> u64 {
    derive(seed, INIT_STREAM)
}

pub fn stack(maps: &[&Map]) -> Tensor {
    let first = maps[0];
    let (c, h, w) = first.dims();
    let mut data = Vec::with_capacity(maps.len() * first.data().len());
    for m in maps {
        data.extend_from_slice(m.data());
    }
    Tensor::from_vec(Shape::new(maps.len(), c, h, w), data).expect("uniform extents")
}

/// Ground-truth tensors for a batch, bound as constants.
pub fn targets(tape: &mut Tape, batch: &[&TrainingSample]) -> Targets {
    let mut bind = |f: fn(&TrainingSample) -> &Map| {
        let maps: Vec<&Map> = batch.iter().map(|s| f(s)).collect();
        tape.constant(stack(&maps))
    };
    Targets {
        image: bind(|s| &s.image),
        reflectance: bind(|s| &s.reflectance),
        shading_unified: bind(|s| &s.shading_unified),
        ambient: bind(|s| &s.ambient),
        shadow_mag: bind(|s| &s.shadow_mag),
        shading_direct: bind(|s| &s.shading_direct),
    }
}

/// Loads the training split and checks it against the configured extent.
pub fn load_split(cfg: &RunConfig, split: Split) -> Result<Vec<TrainingSample>> {
    let manifest = Manifest::read(&cfg.dataset_dir)?;
    if manifest.resolution != cfg.resolution {
        return Err(LabError::Data(format!(
            "dataset resolution {:?} differs from configured {:?}",
            manifest.resolution, cfg.resolution
        )));
    }
    let mut out = Vec::new();
    for entry in manifest.split(split) {
        let s = TrainingSample::load(&cfg.dataset_dir.join(&entry.dir))?;
        if s.resolution() != cfg.resolution {
            return Err(LabError::Data(format!("{}: extent {:?} differs from manifest", entry.dir, s.resolution())));
        }
        out.push(s);
    }
    Ok(out)
}

struct Log {
    out: BufWriter<File>,
    path: PathBuf,
}

impl Log {
    fn create(path: PathBuf) -> Result<Log> {
        let f = File::create(&path).map_err(|e| LabError::io(&path, e))?;
        Ok(Log { out: BufWriter::new(f), path })
    }

    fn record(&mut self, r: &TrainingLogRecord) -> Result<()> {
        let line = serde_json::to_string(r).expect("record serializes");
        writeln!(self.out, "{line}").and_then(|_| self.out.flush()).map_err(|e| LabError::io(&self.path, e))
    }
}

/// Runs the configured number of epochs from a fresh network, writing the
/// log, the resolved config and a checkpoint per epoch to `output_dir`.
/// `on_epoch` sees each epoch as it completes.
pub fn train(cfg: &RunConfig, mut on_epoch: impl FnMut(&EpochSummary)) -> Result<(ShadingNet, TrainSummary)> {
    cfg.validate()?;
    let samples = load_split(cfg, Split::Train)?;
    if samples.is_empty() {
        return Err(LabError::Data("training split is empty".into()));
    }
    if batches(&(0..samples.len()).collect::<Vec<_>>(), cfg.batch_size).is_empty() {
        return Err(LabError::Data(format!("{} training samples form no batch of at least two", samples.len())));
    }
    let out = &cfg.output_dir;
    fs::create_dir_all(out).map_err(|e| LabError::io(out, e))?;
    let cfg_path = out.join(CONFIG_FILE);
    fs::write(&cfg_path, serde_json::to_string_pretty(cfg).expect("config serializes") + "\n")
        .map_err(|e| LabError::io(&cfg_path, e))?;
    let mut log = Log::create(out.join(LOG_FILE))?;

    let mut net = ShadingNet::build(network_seed(cfg.seed));
    let start = Instant::now();
    let mut step = 0usize;
    let mut summary =
        TrainSummary { epochs: Vec::new(), first_step_total: f64::NAN, max_is_ground_truth: 0.0, final_checkpoint: PathBuf::new() };
    for epoch in 0..cfg.epochs {
        let lr = cfg.lr_at(epoch);
        let adam = Adam::new(lr as f32);
        let order = epoch_order(cfg.seed, epoch, samples.len());
        let mut total = 0.0;
        let epoch_batches = batches(&order, cfg.batch_size);
        for batch in &epoch_batches {
            let batch: Vec<&TrainingSample> = batch.iter().map(|&i| &samples[i]).collect();
            let mut tape = Tape::new();
            let t = targets(&mut tape, &batch);
            let gt_is = is_loss(&mut tape, t.shading_unified, t.ambient, t.shadow_mag, t.shading_direct)?;
            let is_ground_truth = tape.value(gt_is).item() as f64;
            let out = net.forward(&mut tape, t.image, ForwardConfig::train())?;
            let (loss, breakdown) = training_loss(&mut tape, &out.predictions(), out.rho_final, &t, &cfg.loss_weights)?;
            if !breakdown.total.is_finite() {
                return Err(LabError::NonFinite { epoch, step });
            }
            tape.backward(loss)?;
            net.params_mut().absorb_grads(&mut tape);
            drop(tape);
            adam.step(net.params_mut());
            if step == 0 {
                summary.first_step_total = breakdown.total;
            }
            summary.max_is_ground_truth = summary.max_is_ground_truth.max(is_ground_truth);
            total += breakdown.total;
            log.record(&TrainingLogRecord {
                epoch,
                step,
                lr,
                loss: breakdown,
                is_ground_truth,
                wall_ms: start.elapsed().as_secs_f64() * 1e3,
            })?;
            step += 1;
        }
        let path = checkpoint_path(out, epoch + 1);
        checkpoint::save(&path, net.params())?;
        if !cfg.keep_checkpoints && epoch >= 2 {
            let stale = checkpoint_path(out, epoch);
            fs::remove_file(&stale).map_err(|e| LabError::io(&stale, e))?;
        }
        let e = EpochSummary {
            epoch,
            lr,
            steps: epoch_batches.len(),
            mean_total: total / epoch_batches.len() as f64,
            checkpoint: path.clone(),
        };
        on_epoch(&e);
        summary.epochs.push(e);
        summary.final_checkpoint = path;
    }
    Ok((net, summary))
}

/// A network with the parameters and statistics of `path`.
pub fn load_network(path: &Path) -> Result<ShadingNet> {
    let mut net = ShadingNet::build(0);
    checkpoint::load_into(path, net.params_mut())?;
    Ok(net)
}
