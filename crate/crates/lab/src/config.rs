use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use shadingnet_core::loss::LossWeights;
use shadingnet_core::net::DOWNSAMPLE;

use crate::error::{LabError, Result};

/// Everything a training run depends on. JSON keys mirror the field names;
/// absent keys take the defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub dataset_dir: PathBuf,
    pub output_dir: PathBuf,
    /// (height, width)
    pub resolution: [usize; 2],
    pub batch_size: usize,
    pub lr: f64,
    pub lr_halve_every: usize,
    pub epochs: usize,
    pub seed: u64,
    pub loss_weights: LossWeights,
    /// Keep every per-epoch checkpoint instead of only the first and latest.
    pub keep_checkpoints: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            dataset_dir: PathBuf::from("data"),
            output_dir: PathBuf::from("run"),
            resolution: [64, 64],
            batch_size: 10,
            lr: 0.00128,
            lr_halve_every: 4,
            epochs: 200,
            seed: 0,
            loss_weights: LossWeights::default(),
            keep_checkpoints: false,
        }
    }
}

impl RunConfig {
    pub fn from_json_file(path: &Path) -> Result<RunConfig> {
        let text = fs::read_to_string(path).map_err(|e| LabError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| LabError::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(LabError::Config(m));
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if self.lr_halve_every == 0 {
            return bad("lr_halve_every must be at least 1".into());
        }
        let [h, w] = self.resolution;
        if h == 0 || w == 0 || h % DOWNSAMPLE != 0 || w % DOWNSAMPLE != 0 {
            return bad(format!("resolution {h}x{w} is not a positive multiple of {DOWNSAMPLE}"));
        }
        Ok(())
    }

    /// `lr · 0.5^floor(epoch / lr_halve_every)` for 0-based `epoch`.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let halvings = (epoch / self.lr_halve_every).min(i32::MAX as usize) as i32;
        self.lr * 0.5f64.powi(halvings)
    }
}
