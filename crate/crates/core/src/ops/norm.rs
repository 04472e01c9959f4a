//! Per-channel batch normalization.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tape::{BackwardCtx, Grads, Op, Tape, Var};
use crate::tensor::Tensor;

/// Train mode normalizes with batch statistics; eval mode with running ones.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BatchNormConfig {
    pub momentum: f32,
    pub eps: f32,
}

impl Default for BatchNormConfig {
    fn default() -> Self {
        BatchNormConfig { momentum: 0.1, eps: 1e-5 }
    }
}

/// Running mean and (unbiased) variance per channel.
#[derive(Clone, Debug, PartialEq)]
pub struct RunningStats {
    pub mean: Vec<f32>,
    pub var: Vec<f32>,
}

impl RunningStats {
    pub fn new(channels: usize) -> Self {
        RunningStats { mean: vec![0.0; channels], var: vec![1.0; channels] }
    }
}

pub(crate) struct BatchNormRecord {
    x: Var,
    gamma: Var,
    beta: Var,
    xhat: Vec<f32>,
    inv_std: Vec<f32>,
    mode: Mode,
}

impl Tape {
    pub fn batchnorm2d(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        stats: &mut RunningStats,
        mode: Mode,
        cfg: BatchNormConfig,
    ) -> Result<Var> {
        let s = self.shape(x);
        let (c, plane) = (s.c, s.plane());
        for (name, v) in [("gamma", gamma), ("beta", beta)] {
            let len = self.shape(v).numel();
            if len != c {
                return Err(Error::shape("batchnorm2d", format!("{name} has {len} values for {c} channels")));
            }
        }
        if stats.mean.len() != c || stats.var.len() != c {
            return Err(Error::shape("batchnorm2d", format!("running stats sized for {} channels, input has {c}", stats.mean.len())));
        }
        if !(cfg.eps > 0.0) {
            return Err(Error::invalid("batchnorm2d", "eps must be positive"));
        }
        let xv = self.value(x).data();
        let gv = self.value(gamma).data();
        let bv = self.value(beta).data();
        let count = s.n * plane;
        let mut mean = vec![0.0f32; c];
        let mut inv_std = vec![0.0f32; c];
        match mode {
            Mode::Train => {
                for ch in 0..c {
                    let mut sum = 0.0f64;
                    for n in 0..s.n {
                        let base = (n * c + ch) * plane;
                        sum += xv[base..base + plane].iter().map(|&v| v as f64).sum::<f64>();
                    }
                    let mu = sum / count as f64;
                    let mut sq = 0.0f64;
                    for n in 0..s.n {
                        let base = (n * c + ch) * plane;
                        sq += xv[base..base + plane].iter().map(|&v| {
                            let d = v as f64 - mu;
                            d * d
                        }).sum::<f64>();
                    }
                    let var = sq / count as f64;
                    mean[ch] = mu as f32;
                    inv_std[ch] = (1.0 / libm::sqrt(var + cfg.eps as f64)) as f32;
                    let unbiased = if count > 1 { sq / (count - 1) as f64 } else { var };
                    let m = cfg.momentum;
                    stats.mean[ch] = (1.0 - m) * stats.mean[ch] + m * mu as f32;
                    stats.var[ch] = (1.0 - m) * stats.var[ch] + m * unbiased as f32;
                }
            }
            Mode::Eval => {
                for ch in 0..c {
                    mean[ch] = stats.mean[ch];
                    inv_std[ch] = 1.0 / libm::sqrtf(stats.var[ch] + cfg.eps);
                }
            }
        }
        let mut xhat = vec![0.0f32; s.numel()];
        let mut out = vec![0.0f32; s.numel()];
        for n in 0..s.n {
            for ch in 0..c {
                let base = (n * c + ch) * plane;
                let (mu, is, g, b) = (mean[ch], inv_std[ch], gv[ch], bv[ch]);
                for i in base..base + plane {
                    let h = (xv[i] - mu) * is;
                    xhat[i] = h;
                    out[i] = g * h + b;
                }
            }
        }
        let value = Tensor::from_vec(s, out)?;
        Ok(self.push(value, &[x, gamma, beta], || {
            Op::BatchNorm(BatchNormRecord { x, gamma, beta, xhat, inv_std, mode })
        }))
    }
}

impl BatchNormRecord {
    pub(crate) fn backward(&self, ctx: &BackwardCtx<'_>, g: &[f32], grads: &mut Grads) {
        let s = ctx.value(self.x).shape();
        let (c, plane) = (s.c, s.plane());
        let count = (s.n * plane) as f64;
        let gamma = ctx.value(self.gamma).data();
        let mut sum_g = vec![0.0f64; c];
        let mut sum_gx = vec![0.0f64; c];
        for n in 0..s.n {
            for ch in 0..c {
                let base = (n * c + ch) * plane;
                for i in base..base + plane {
                    sum_g[ch] += g[i] as f64;
                    sum_gx[ch] += (g[i] * self.xhat[i]) as f64;
                }
            }
        }
        grads.accumulate(self.beta, |db| db.iter_mut().zip(&sum_g).for_each(|(d, s)| *d += *s as f32));
        grads.accumulate(self.gamma, |dg| dg.iter_mut().zip(&sum_gx).for_each(|(d, s)| *d += *s as f32));
        let mode = self.mode;
        grads.accumulate(self.x, |dx| {
            for n in 0..s.n {
                for ch in 0..c {
                    let base = (n * c + ch) * plane;
                    let scale = gamma[ch] * self.inv_std[ch];
                    match mode {
                        Mode::Eval => {
                            for i in base..base + plane {
                                dx[i] += g[i] * scale;
                            }
                        }
                        Mode::Train => {
                            let mg = (sum_g[ch] / count) as f32;
                            let mgx = (sum_gx[ch] / count) as f32;
                            for i in base..base + plane {
                                dx[i] += scale * (g[i] - mg - self.xhat[i] * mgx);
                            }
                        }
                    }
                }
            }
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;

    fn setup(tape: &mut Tape, x: Tensor, g: f32, b: f32) -> (Var, Var, Var) {
        let c = x.shape().c;
        let xv = tape.leaf(x);
        let gv = tape.leaf(Tensor::full(Shape::vector(c), g));
        let bv = tape.leaf(Tensor::full(Shape::vector(c), b));
        (xv, gv, bv)
    }

    #[test]
    fn constant_input_normalizes_to_zero() {
        let mut tape = Tape::new();
        let (x, g, b) = setup(&mut tape, Tensor::full(Shape::new(2, 3, 4, 4), 2.5), 1.0, 0.0);
        let mut stats = RunningStats::new(3);
        let y = tape.batchnorm2d(x, g, b, &mut stats, Mode::Train, BatchNormConfig::default()).unwrap();
        assert!(tape.value(y).data().iter().all(|v| v.abs() < 1e-6));
    }

    #[test]
    fn zero_gamma_yields_beta() {
        let mut tape = Tape::new();
        let x = Tensor::from_vec(Shape::new(2, 2, 2, 2), (0..16).map(|i| i as f32 * 0.3 - 1.0).collect()).unwrap();
        let (x, g, b) = setup(&mut tape, x, 0.0, 0.7);
        for mode in [Mode::Train, Mode::Eval] {
            let mut stats = RunningStats::new(2);
            let y = tape.batchnorm2d(x, g, b, &mut stats, mode, BatchNormConfig::default()).unwrap();
            assert!(tape.value(y).data().iter().all(|&v| v == 0.7));
        }
    }

    #[test]
    fn single_pixel_batch_is_finite() {
        let mut tape = Tape::new();
        let (x, g, b) = setup(&mut tape, Tensor::full(Shape::new(1, 4, 1, 1), 3.0), 1.0, 0.0);
        let mut stats = RunningStats::new(4);
        let y = tape.batchnorm2d(x, g, b, &mut stats, Mode::Train, BatchNormConfig::default()).unwrap();
        assert!(tape.value(y).all_finite());
        assert!(stats.var.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn train_output_is_standardized() {
        // statistics recomputed independently in f64
        let data: Vec<f32> = (0..16).map(|i| libm::sinf(i as f32 * 1.7) * 3.0 + 0.5).collect();
        let mut tape = Tape::new();
        let (x, g, b) = setup(&mut tape, Tensor::from_vec(Shape::new(2, 2, 2, 2), data).unwrap(), 1.0, 0.0);
        let mut stats = RunningStats::new(2);
        let y = tape.batchnorm2d(x, g, b, &mut stats, Mode::Train, BatchNormConfig::default()).unwrap();
        let out = tape.value(y);
        for ch in 0..2 {
            let vals: Vec<f64> = (0..2)
                .flat_map(|n| (0..4).map(move |i| (n, i)))
                .map(|(n, i)| out.at(n, ch, i / 2, i % 2) as f64)
                .collect();
            let mean = vals.iter().sum::<f64>() / 8.0;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 8.0;
            assert!(mean.abs() < 1e-4, "mean {mean}");
            assert!((var - 1.0).abs() < 1e-4, "var {var}");
        }
    }

    #[test]
    fn running_stats_follow_momentum() {
        let mut tape = Tape::new();
        let (x, g, b) = setup(&mut tape, Tensor::full(Shape::new(2, 1, 2, 2), 4.0), 1.0, 0.0);
        let mut stats = RunningStats::new(1);
        tape.batchnorm2d(x, g, b, &mut stats, Mode::Train, BatchNormConfig::default()).unwrap();
        assert!((stats.mean[0] - 0.4).abs() < 1e-6);
        assert!((stats.var[0] - 0.9).abs() < 1e-6);
    }
}
