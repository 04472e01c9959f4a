//! Dataset evaluation of a trained network.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use shadingnet_core::metrics::{score, ImageScores, MetricReport, ReportBuilder};
use shadingnet_core::net::{ForwardConfig, ShadingNet};
use shadingnet_core::{Map, Tape};

use crate::dataset::{Manifest, Split, TrainingSample};
use crate::error::{LabError, Result};
use crate::train::stack;

/// Report keys, in evaluation order. `shadow` compares magnitudes and
/// `direct` is `s_u − ambient + |shadow|` from the predicted components.
pub const COMPONENTS: [&str; 8] = ["rho_final", "rho_u", "rho_amb", "rho_shad", "s_u", "ambient", "shadow", "direct"];
/// Samples per forward pass; eval-mode outputs do not depend on it.
const EVAL_BATCH: usize = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleScores {
    pub dir: String,
    pub components: BTreeMap<String, ImageScores>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub split: Split,
    pub checkpoint: Option<PathBuf>,
    pub metrics: MetricReport,
    /// Samples skipped because a layer was missing or unreadable.
    pub skipped: usize,
    pub samples: Vec<SampleScores>,
}

/// Predicted maps for one sample, all at input resolution.
#[derive(Clone, Debug, PartialEq)]
pub struct Decomposition {
    pub rho_final: Map,
    pub rho_u: Map,
    pub rho_amb: Map,
    pub rho_shad: Map,
    pub s_u: Map,
    pub ambient: Map,
    pub shadow_mag: Map,
}

impl Decomposition {
    /// `s_u − ambient + |shadow|`.
    pub fn direct(&self) -> Map {
        let d = self
            .s_u
            .data()
            .iter()
            .zip(self.ambient.data())
            .zip(self.shadow_mag.data())
            .map(|((u, a), s)| u - a + s)
            .collect();
        Map::from_vec(1, self.s_u.height(), self.s_u.width(), d).expect("same extent")
    }

    fn component(&self, name: &str) -> Map {
        match name {
            "rho_final" => self.rho_final.clone(),
            "rho_u" => self.rho_u.clone(),
            "rho_amb" => self.rho_amb.clone(),
            "rho_shad" => self.rho_shad.clone(),
            "s_u" => self.s_u.clone(),
            "ambient" => self.ambient.clone(),
            "shadow" => self.shadow_mag.clone(),
            "direct" => self.direct(),
            _ => unreachable!("unknown component {name}"),
        }
    }
}

/// Eval-mode forward of a batch of 3-channel images.
pub fn decompose_batch(net: &mut ShadingNet, images: &[&Map]) -> Result<Vec<Decomposition>> {
    let mut tape = Tape::new();
    let x = tape.constant(stack(images));
    let out = net.forward(&mut tape, x, ForwardConfig::eval())?;
    let get = |v, i| Map::from_tensor(tape.value(v), i);
    Ok((0..images.len())
        .map(|i| Decomposition {
            rho_final: get(out.rho_final, i),
            rho_u: get(out.rho_u, i),
            rho_amb: get(out.rho_amb, i),
            rho_shad: get(out.rho_shad, i),
            s_u: get(out.s_u, i),
            ambient: get(out.ambient, i),
            shadow_mag: get(out.shadow_mag, i),
        })
        .collect())
}

fn truth(s: &TrainingSample, name: &str) -> Map {
    match name {
        "rho_final" | "rho_u" | "rho_amb" | "rho_shad" => s.reflectance.clone(),
        "s_u" => s.shading_unified.clone(),
        "ambient" => s.ambient.clone(),
        "shadow" => s.shadow_mag.clone(),
        "direct" => s.shading_direct.clone(),
        _ => unreachable!("unknown component {name}"),
    }
}

/// Scores every component of one prediction.
pub fn score_sample(pred: &Decomposition, gt: &TrainingSample) -> Result<BTreeMap<String, ImageScores>> {
    let mut out = BTreeMap::new();
    for name in COMPONENTS {
        out.insert(name.to_string(), score(&pred.component(name), &truth(gt, name))?);
    }
    Ok(out)
}

/// Evaluates `net` on the given samples in order. Per-image scores are
/// averaged in that same order, so the report is reproducible.
pub fn evaluate_samples(net: &mut ShadingNet, samples: &[(String, TrainingSample)]) -> Result<(MetricReport, Vec<SampleScores>)> {
    let mut builder = ReportBuilder::new();
    let mut per_sample = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(EVAL_BATCH) {
        let images: Vec<&Map> = chunk.iter().map(|(_, s)| &s.image).collect();
        for (pred, (dir, gt)) in decompose_batch(net, &images)?.iter().zip(chunk) {
            let scores = score_sample(pred, gt)?;
            for (name, s) in &scores {
                builder.add(name, *s);
            }
            builder.finish_image();
            per_sample.push(SampleScores { dir: dir.clone(), components: scores });
        }
    }
    Ok((builder.build(), per_sample))
}

/// Loads a split, skipping samples whose layers are missing or unreadable.
pub fn load_for_eval(dataset_dir: &Path, split: Split) -> Result<(Vec<(String, TrainingSample)>, usize)> {
    let manifest = Manifest::read(dataset_dir)?;
    let mut samples = Vec::new();
    let mut skipped = 0;
    for entry in manifest.split(split) {
        match TrainingSample::load(&dataset_dir.join(&entry.dir)) {
            Ok(s) => samples.push((entry.dir.clone(), s)),
            Err(LabError::Io { .. } | LabError::Format { .. } | LabError::Image { .. }) => skipped += 1,
            Err(e) => return Err(e),
        }
    }
    Ok((samples, skipped))
}

/// Read-only evaluation of `net` on one split of the dataset at `dataset_dir`.
pub fn evaluate(net: &mut ShadingNet, dataset_dir: &Path, split: Split) -> Result<EvalReport> {
    let (samples, skipped) = load_for_eval(dataset_dir, split)?;
    if samples.is_empty() {
        return Err(LabError::Data(format!("no readable samples in the {split:?} split")));
    }
    let (metrics, samples) = evaluate_samples(net, &samples)?;
    Ok(EvalReport { split, checkpoint: None, metrics, skipped, samples })
}

/// Ground truth scored against itself through the same pipeline; every
/// metric is zero. Used to check the evaluation path without a network.
pub fn identity_scores(gt: &TrainingSample) -> Result<BTreeMap<String, ImageScores>> {
    let pred = Decomposition {
        rho_final: gt.reflectance.clone(),
        rho_u: gt.reflectance.clone(),
        rho_amb: gt.reflectance.clone(),
        rho_shad: gt.reflectance.clone(),
        s_u: gt.shading_unified.clone(),
        ambient: gt.ambient.clone(),
        shadow_mag: gt.shadow_mag.clone(),
    };
    score_sample(&pred, gt)
}
