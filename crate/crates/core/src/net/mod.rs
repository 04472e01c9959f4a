//! ShadingNet: a shared residual encoder, three attention-gated decoders
//! that each pair a reflectance head with one shading component, a 1×1
//! fusion of the three reflectances, and a dilated residual refinement stack.
//!
//! Shapes for an N×3×H×W input (H, W multiples of 32):
//!
//! ```text
//! stem        3 → 16            H        skip 0
//! stage 1..4  16 → 32 → 64 → 128 → 256   H/2 .. H/16   skips 1..4
//! stage 5     256 → 256         H/32     bottleneck
//! decoder k   5 × [up 2×, concat skip, conv 3×3 → BN → LeakyReLU] at 128
//!             heads: 3×3 → 3 (reflectance), 3×3 → 1 (component), ReLU
//! fusion      1×1, 9 → 24
//! refinement  27 → 32, 6 dilated blocks (2, 2, 4, 8, 8, 1), BN → ReLU,
//!             32 → 3, ReLU
//! ```
//!
//! Decoder 0 predicts unified shading, 1 ambient light, 2 shadow magnitude.

mod layers;

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::ops::{Mode, RunningStats};
use crate::param::ParamStore;
use crate::tape::{Tape, Var};
use crate::tensor::Shape;

use layers::{BatchNorm, Builder, Conv, ResBlock};

pub const ENCODER_CHANNELS: [usize; 6] = [16, 32, 64, 128, 256, 256];
pub const DECODER_CHANNELS: usize = 128;
pub const BLOCKS_PER_STAGE: usize = 4;
pub const ECA_KERNEL: usize = 5;
pub const FUSION_CHANNELS: usize = 24;
pub const REFINE_CHANNELS: usize = 32;
pub const REFINE_DILATIONS: [usize; 6] = [2, 2, 4, 8, 8, 1];
pub const LEAKY_SLOPE: f32 = 0.01;
/// Input extents must be multiples of this.
pub const DOWNSAMPLE: usize = 32;
pub const BRANCHES: usize = 3;
/// Initial bias of every ReLU-terminated output convolution; keeps the
/// outputs inside the active region at the start of training.
pub const HEAD_BIAS: f32 = 0.5;

struct Stage {
    down: Conv,
    blocks: Vec<ResBlock>,
}

struct UpStage {
    conv: Conv,
    bn: BatchNorm,
}

struct Decoder {
    ups: Vec<UpStage>,
    rho_head: Conv,
    component_head: Conv,
}

/// Whether decoders see the gated or the raw bottleneck.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum GateMode {
    #[default]
    Live,
    Bypass,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ForwardConfig {
    pub mode: Mode,
    pub gates: GateMode,
    /// Record parameter gradients.
    pub train_params: bool,
}

impl ForwardConfig {
    pub fn train() -> Self {
        ForwardConfig { mode: Mode::Train, gates: GateMode::Live, train_params: true }
    }

    pub fn eval() -> Self {
        ForwardConfig { mode: Mode::Eval, gates: GateMode::Live, train_params: false }
    }
}

/// All seven outputs; each is non-negative and at input resolution.
#[derive(Clone, Copy, Debug)]
pub struct ForwardOutputs {
    pub rho_u: Var,
    pub rho_amb: Var,
    pub rho_shad: Var,
    pub s_u: Var,
    pub ambient: Var,
    pub shadow_mag: Var,
    pub rho_final: Var,
}

impl ForwardOutputs {
    pub fn predictions(&self) -> crate::loss::Predictions {
        crate::loss::Predictions {
            rho_u: self.rho_u,
            rho_amb: self.rho_amb,
            rho_shad: self.rho_shad,
            s_u: self.s_u,
            ambient: self.ambient,
            shadow_mag: self.shadow_mag,
        }
    }
}

pub struct Encoded {
    pub bottleneck: Var,
    /// Stem output followed by stages 1–4, from full to 1/16 resolution.
    pub skips: Vec<Var>,
}

pub struct ShadingNet {
    store: ParamStore,
    stem: Conv,
    stages: Vec<Stage>,
    gates: Vec<crate::param::ParamId>,
    decoders: Vec<Decoder>,
    fusion: Conv,
    refine_entry: Conv,
    refine_blocks: Vec<ResBlock>,
    refine_norm: BatchNorm,
    refine_exit: Conv,
}

/// Error unless both extents are positive multiples of 32; reports the
/// padding that would fix them.
pub fn check_resolution(height: usize, width: usize) -> Result<()> {
    let pad = |v: usize| (DOWNSAMPLE - v % DOWNSAMPLE) % DOWNSAMPLE;
    if height == 0 || width == 0 || height % DOWNSAMPLE != 0 || width % DOWNSAMPLE != 0 {
        return Err(Error::Resolution { height, width, multiple: DOWNSAMPLE, pad_h: pad(height), pad_w: pad(width) });
    }
    Ok(())
}

impl ShadingNet {
    /// He-initialized network; identical for identical seeds.
    pub fn build(seed: u64) -> Self {
        let mut b = Builder::new(seed);
        let stem = b.conv("encoder.stem", 3, ENCODER_CHANNELS[0], 3, 1, 1, true);
        let mut stages = Vec::new();
        for s in 1..ENCODER_CHANNELS.len() {
            let name = format!("encoder.stage{s}");
            let (cin, cout) = (ENCODER_CHANNELS[s - 1], ENCODER_CHANNELS[s]);
            let down = b.conv(&format!("{name}.down"), cin, cout, 3, 2, 1, true);
            let blocks = (0..BLOCKS_PER_STAGE).map(|i| b.res_block(&format!("{name}.block{i}"), cout, 1)).collect();
            stages.push(Stage { down, blocks });
        }
        let gates = (0..BRANCHES).map(|k| b.eca(&format!("gate{k}"), ECA_KERNEL)).collect();
        let decoders = (0..BRANCHES)
            .map(|k| {
                let name = format!("decoder{k}");
                let mut cin = ENCODER_CHANNELS[5];
                let ups = (0..5)
                    .map(|u| {
                        let skip = ENCODER_CHANNELS[4 - u];
                        let conv = b.conv(&format!("{name}.up{u}.conv"), cin + skip, DECODER_CHANNELS, 3, 1, 1, false);
                        let bn = b.batchnorm(&format!("{name}.up{u}.bn"), DECODER_CHANNELS);
                        cin = DECODER_CHANNELS;
                        UpStage { conv, bn }
                    })
                    .collect();
                Decoder {
                    ups,
                    rho_head: b.head(&format!("{name}.rho_head"), DECODER_CHANNELS, 3, HEAD_BIAS),
                    component_head: b.head(&format!("{name}.component_head"), DECODER_CHANNELS, 1, HEAD_BIAS),
                }
            })
            .collect();
        let fusion = b.conv("fusion", 3 * BRANCHES, FUSION_CHANNELS, 1, 1, 0, true);
        let refine_entry = b.conv("refine.entry", FUSION_CHANNELS + BRANCHES, REFINE_CHANNELS, 3, 1, 1, true);
        let refine_blocks = REFINE_DILATIONS
            .iter()
            .enumerate()
            .map(|(i, &d)| b.res_block(&format!("refine.block{i}"), REFINE_CHANNELS, d))
            .collect();
        let refine_norm = b.batchnorm("refine.norm", REFINE_CHANNELS);
        let refine_exit = b.head("refine.exit", REFINE_CHANNELS, 3, HEAD_BIAS);
        ShadingNet {
            store: b.finish(),
            stem,
            stages,
            gates,
            decoders,
            fusion,
            refine_entry,
            refine_blocks,
            refine_norm,
            refine_exit,
        }
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    fn encode_bound(&mut self, tape: &mut Tape, p: &[Var], image: Var, mode: Mode) -> Result<Encoded> {
        let s = tape.shape(image);
        if s.c != 3 {
            return Err(Error::shape("encode", format!("image has {} channels, expected 3", s.c)));
        }
        check_resolution(s.h, s.w)?;
        let stats = self.store.all_stats_mut();
        let mut x = self.stem.apply(tape, p, image)?;
        let mut skips = Vec::with_capacity(5);
        skips.push(x);
        for (i, stage) in self.stages.iter().enumerate() {
            x = stage.down.apply(tape, p, x)?;
            for block in &stage.blocks {
                x = block.apply(tape, p, stats, x, mode)?;
            }
            if i + 1 < self.stages.len() {
                skips.push(x);
            }
        }
        Ok(Encoded { bottleneck: x, skips })
    }

    /// Runs the encoder alone without recording parameter gradients.
    pub fn encode(&mut self, tape: &mut Tape, image: Var, mode: Mode) -> Result<Encoded> {
        let p = tape.bind_params(&self.store, false);
        self.encode_bound(tape, &p, image, mode)
    }

    pub fn forward(&mut self, tape: &mut Tape, image: Var, cfg: ForwardConfig) -> Result<ForwardOutputs> {
        let p = tape.bind_params(&self.store, cfg.train_params);
        let enc = self.encode_bound(tape, &p, image, cfg.mode)?;
        let stats = self.store.all_stats_mut();
        let mut rhos = Vec::with_capacity(BRANCHES);
        let mut components = Vec::with_capacity(BRANCHES);
        for (gate, dec) in self.gates.iter().zip(&self.decoders) {
            let mut x = match cfg.gates {
                GateMode::Live => tape.eca_gate(enc.bottleneck, p[gate.index()])?,
                GateMode::Bypass => enc.bottleneck,
            };
            for (u, up) in dec.ups.iter().enumerate() {
                let upsampled = tape.upsample_bilinear2x(x);
                let cat = tape.concat_channels(&[upsampled, enc.skips[4 - u]])?;
                let y = up.conv.apply(tape, p.as_slice(), cat)?;
                let y = up.bn.apply(tape, &p, stats, y, cfg.mode)?;
                x = tape.leaky_relu(y, LEAKY_SLOPE);
            }
            let rho = dec.rho_head.apply(tape, &p, x)?;
            rhos.push(tape.relu(rho));
            let comp = dec.component_head.apply(tape, &p, x)?;
            components.push(tape.relu(comp));
        }
        let cat = tape.concat_channels(&rhos)?;
        let fused = self.fusion.apply(tape, &p, cat)?;
        let refine_in = tape.concat_channels(&[fused, components[0], components[1], components[2]])?;
        let mut x = self.refine_entry.apply(tape, &p, refine_in)?;
        for block in &self.refine_blocks {
            x = block.apply(tape, &p, stats, x, cfg.mode)?;
        }
        let x = self.refine_norm.apply(tape, &p, stats, x, cfg.mode)?;
        let x = tape.relu(x);
        let out = self.refine_exit.apply(tape, &p, x)?;
        let rho_final = tape.relu(out);
        Ok(ForwardOutputs {
            rho_u: rhos[0],
            rho_amb: rhos[1],
            rho_shad: rhos[2],
            s_u: components[0],
            ambient: components[1],
            shadow_mag: components[2],
            rho_final,
        })
    }

    /// Declared shape of every parameter, in registration order.
    pub fn parameter_shapes(&self) -> Vec<(&str, Shape)> {
        self.store.params().iter().map(|p| (p.name.as_str(), p.tensor.shape())).collect()
    }

    /// Running statistics of every normalization layer.
    pub fn running_stats(&self) -> impl Iterator<Item = (&str, &RunningStats)> {
        self.store.all_stats().iter().map(|s| (s.name.as_str(), &s.stats))
    }
}
