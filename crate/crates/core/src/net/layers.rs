use alloc::format;

use crate::error::Result;
use crate::init::he_init;
use crate::ops::{BatchNormConfig, Conv2dConfig, Mode};
use crate::param::{NamedStats, ParamId, ParamStore, StatsId};
use crate::rng::derive;
use crate::tape::{Tape, Var};
use crate::tensor::{Shape, Tensor};

pub(super) struct Conv {
    weight: ParamId,
    bias: Option<ParamId>,
    cfg: Conv2dConfig,
}

impl Conv {
    pub(super) fn apply(&self, tape: &mut Tape, p: &[Var], x: Var) -> Result<Var> {
        tape.conv2d(x, p[self.weight.index()], self.bias.map(|b| p[b.index()]), self.cfg)
    }
}

pub(super) struct BatchNorm {
    gamma: ParamId,
    beta: ParamId,
    stats: StatsId,
}

impl BatchNorm {
    pub(super) fn apply(&self, tape: &mut Tape, p: &[Var], stats: &mut [NamedStats], x: Var, mode: Mode) -> Result<Var> {
        let s = &mut stats[self.stats.0].stats;
        tape.batchnorm2d(x, p[self.gamma.index()], p[self.beta.index()], s, mode, BatchNormConfig::default())
    }
}

/// Pre-activation residual block: `x + conv(relu(bn(conv(relu(bn(x))))))`.
/// Convolutions are 3×3 without bias and keep the extent.
pub(super) struct ResBlock {
    bn1: BatchNorm,
    conv1: Conv,
    bn2: BatchNorm,
    conv2: Conv,
}

impl ResBlock {
    pub(super) fn apply(&self, tape: &mut Tape, p: &[Var], stats: &mut [NamedStats], x: Var, mode: Mode) -> Result<Var> {
        let h = self.bn1.apply(tape, p, stats, x, mode)?;
        let h = tape.relu(h);
        let h = self.conv1.apply(tape, p, h)?;
        let h = self.bn2.apply(tape, p, stats, h, mode)?;
        let h = tape.relu(h);
        let h = self.conv2.apply(tape, p, h)?;
        tape.add(x, h)
    }
}

/// Registers parameters in order, seeding each from (seed, index).
pub(super) struct Builder {
    store: ParamStore,
    seed: u64,
}

impl Builder {
    pub(super) fn new(seed: u64) -> Self {
        Builder { store: ParamStore::new(), seed }
    }

    fn he(&mut self, name: &str, shape: Shape, fan_in: usize) -> ParamId {
        let seed = derive(self.seed, self.store.len() as u64);
        let t = he_init(shape, fan_in, seed).expect("positive fan-in");
        self.store.add(name, t).expect("unique parameter names")
    }

    fn constant(&mut self, name: &str, len: usize, value: f32) -> ParamId {
        self.store.add(name, Tensor::full(Shape::vector(len), value)).expect("unique parameter names")
    }

    #[allow(clippy::too_many_arguments)]
    pub(super) fn conv(&mut self, name: &str, cin: usize, cout: usize, k: usize, stride: usize, pad: usize, bias: bool) -> Conv {
        self.dilated_conv(name, cin, cout, k, Conv2dConfig { stride, padding: pad, dilation: 1 }, bias)
    }

    fn dilated_conv(&mut self, name: &str, cin: usize, cout: usize, k: usize, cfg: Conv2dConfig, bias: bool) -> Conv {
        let weight = self.he(&format!("{name}.weight"), Shape::new(cout, cin, k, k), cin * k * k);
        let bias = bias.then(|| self.constant(&format!("{name}.bias"), cout, 0.0));
        Conv { weight, bias, cfg }
    }

    /// 3×3 output convolution whose bias starts at `bias`.
    pub(super) fn head(&mut self, name: &str, cin: usize, cout: usize, bias: f32) -> Conv {
        let weight = self.he(&format!("{name}.weight"), Shape::new(cout, cin, 3, 3), cin * 9);
        let bias = Some(self.constant(&format!("{name}.bias"), cout, bias));
        Conv { weight, bias, cfg: Conv2dConfig::same(3, 1) }
    }

    pub(super) fn batchnorm(&mut self, name: &str, channels: usize) -> BatchNorm {
        BatchNorm {
            gamma: self.constant(&format!("{name}.gamma"), channels, 1.0),
            beta: self.constant(&format!("{name}.beta"), channels, 0.0),
            stats: self.store.add_stats(name, channels),
        }
    }

    pub(super) fn res_block(&mut self, name: &str, channels: usize, dilation: usize) -> ResBlock {
        let cfg = Conv2dConfig::same(3, dilation);
        ResBlock {
            bn1: self.batchnorm(&format!("{name}.bn1"), channels),
            conv1: self.dilated_conv(&format!("{name}.conv1"), channels, channels, 3, cfg, false),
            bn2: self.batchnorm(&format!("{name}.bn2"), channels),
            conv2: self.dilated_conv(&format!("{name}.conv2"), channels, channels, 3, cfg, false),
        }
    }

    pub(super) fn eca(&mut self, name: &str, k: usize) -> ParamId {
        self.he(&format!("{name}.kernel"), Shape::vector(k), k)
    }

    pub(super) fn finish(self) -> ParamStore {
        self.store
    }
}
