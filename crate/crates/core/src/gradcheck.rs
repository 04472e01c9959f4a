//! Central finite-difference verification of the tape's gradients.
//!
//! A case maps input tensors to an output through tape operations. The
//! output is reduced to a scalar `L = Σ wᵢ·yᵢ` with fixed pseudo-random
//! weights, evaluated in f64 for the numeric side. The reported error of an
//! input is `max |analytic − numeric|` over its entries divided by the
//! largest analytic or numeric entry over all inputs of the case, so the
//! f32 rounding of a scalar loss does not swamp inputs with small weights.
//!
//! [`suite`] covers every differentiable operation and every loss with
//! inputs kept at least 0.1 away from the kinks of ReLU, |·| and division.

use alloc::boxed::Box;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::Result;
use crate::loss::{
    combined_loss, generator_loss, imf_loss, is_loss, mse, refinement_loss, smse, training_loss, LossWeights,
    Predictions, Targets,
};
use crate::ops::elementwise::Axis;
use crate::ops::{Activation, BatchNormConfig, Conv2dConfig, Mode, RunningStats};
use crate::rng::{chacha, derive};
use crate::tape::{Tape, Var};
use crate::tensor::{Shape, Tensor};

pub const STEP: f64 = 1e-3;
pub const TOLERANCE: f64 = 1e-3;

type Build = Box<dyn Fn(&mut Tape, &[Var]) -> Result<Var>>;

pub struct Case {
    pub name: &'static str,
    pub inputs: Vec<Tensor>,
    build: Build,
}

impl Case {
    pub fn new(name: &'static str, inputs: Vec<Tensor>, build: impl Fn(&mut Tape, &[Var]) -> Result<Var> + 'static) -> Self {
        Case { name, inputs, build: Box::new(build) }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Outcome {
    pub case: String,
    pub input: usize,
    pub rel_err: f64,
}

impl Outcome {
    pub fn passed(&self) -> bool {
        self.rel_err < TOLERANCE
    }
}

fn reduce_weights(n: usize, seed: u64) -> Vec<f32> {
    let mut rng = chacha(seed);
    (0..n).map(|_| rng.gen_range(0.5f32..1.5) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 }).collect()
}

fn forward(case: &Case, inputs: &[Tensor]) -> Result<Tensor> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
    let y = (case.build)(&mut tape, &vars)?;
    Ok(tape.value(y).clone())
}

fn weighted(y: &Tensor, w: &[f32]) -> f64 {
    y.data().iter().zip(w).map(|(&a, &b)| a as f64 * b as f64).sum()
}

/// Checks every input of `case` at step `h`.
pub fn check(case: &Case, h: f64, seed: u64) -> Result<Vec<Outcome>> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = case.inputs.iter().map(|t| tape.leaf(t.clone().with_grad())).collect();
    let y = (case.build)(&mut tape, &vars)?;
    let shape = tape.shape(y);
    let w = reduce_weights(shape.numel(), seed);
    let wv = tape.constant(Tensor::from_vec(shape, w.clone())?);
    let prod = tape.mul(y, wv)?;
    let loss = tape.sum(prod);
    tape.backward(loss)?;

    let mut pairs = Vec::with_capacity(vars.len());
    for (i, &v) in vars.iter().enumerate() {
        let analytic: Vec<f64> = match tape.grad(v) {
            Some(g) => g.iter().map(|&x| x as f64).collect(),
            None => vec![0.0; case.inputs[i].shape().numel()],
        };
        let mut inputs = case.inputs.clone();
        let mut numeric = Vec::with_capacity(analytic.len());
        for j in 0..analytic.len() {
            let x0 = case.inputs[i].data()[j];
            let (hi, lo) = ((x0 as f64 + h) as f32, (x0 as f64 - h) as f32);
            inputs[i].data_mut()[j] = hi;
            let lp = weighted(&forward(case, &inputs)?, &w);
            inputs[i].data_mut()[j] = lo;
            let lm = weighted(&forward(case, &inputs)?, &w);
            inputs[i].data_mut()[j] = x0;
            numeric.push((lp - lm) / (hi as f64 - lo as f64));
        }
        pairs.push((analytic, numeric));
    }
    let scale = pairs
        .iter()
        .flat_map(|(a, n)| a.iter().chain(n))
        .fold(0.0f64, |m, x| m.max(x.abs()));
    let out = pairs
        .iter()
        .enumerate()
        .map(|(i, (a, n))| {
            let err = a.iter().zip(n).fold(0.0f64, |m, (a, n)| m.max((a - n).abs()));
            Outcome { case: String::from(case.name), input: i, rel_err: if scale == 0.0 { 0.0 } else { err / scale } }
        })
        .collect();
    Ok(out)
}

struct Gen(rand_chacha::ChaCha8Rng);

impl Gen {
    fn normal(&mut self, shape: Shape) -> Tensor {
        let d = (0..shape.numel()).map(|_| StandardNormal.sample(&mut self.0)).collect();
        Tensor::from_vec(shape, d).expect("sized")
    }

    /// Magnitudes in [0.1, 1] with random sign.
    fn signed(&mut self, shape: Shape) -> Tensor {
        let d = (0..shape.numel())
            .map(|_| self.0.gen_range(0.1f32..1.0) * if self.0.gen_bool(0.5) { 1.0 } else { -1.0 })
            .collect();
        Tensor::from_vec(shape, d).expect("sized")
    }

    fn uniform(&mut self, shape: Shape, lo: f32, hi: f32) -> Tensor {
        let d = (0..shape.numel()).map(|_| self.0.gen_range(lo..hi)).collect();
        Tensor::from_vec(shape, d).expect("sized")
    }

    /// `base + offset` where every entry of `offset` is ≥ 0.1 in magnitude.
    fn apart(&mut self, base: &Tensor) -> Tensor {
        let off = self.signed(base.shape());
        let d = base.data().iter().zip(off.data()).map(|(a, b)| a + b).collect();
        Tensor::from_vec(base.shape(), d).expect("sized")
    }
}

fn bn(train: bool) -> impl Fn(&mut Tape, &[Var]) -> Result<Var> {
    move |t, v| {
        let c = t.shape(v[0]).c;
        let mut stats = RunningStats::new(c);
        for (i, (m, s)) in stats.mean.iter_mut().zip(stats.var.iter_mut()).enumerate() {
            *m = 0.1 * i as f32 - 0.05;
            *s = 0.5 + 0.25 * i as f32;
        }
        let mode = if train { Mode::Train } else { Mode::Eval };
        t.batchnorm2d(v[0], v[1], v[2], &mut stats, mode, BatchNormConfig::default())
    }
}

/// One case per operation and per loss, with inputs drawn from `seed`.
pub fn suite(seed: u64) -> Vec<Case> {
    let mut g = Gen(chacha(derive(seed, 0x4752_4144)));
    let s = Shape::new;
    let mut cases = Vec::new();

    let conv = |cfg: Conv2dConfig, bias: bool| {
        move |t: &mut Tape, v: &[Var]| t.conv2d(v[0], v[1], bias.then(|| v[2]), cfg)
    };
    cases.push(Case::new(
        "conv2d 3x3 stride 1 pad 1 bias",
        vec![g.normal(s(2, 3, 8, 8)), g.normal(s(4, 3, 3, 3)), g.normal(Shape::vector(4))],
        conv(Conv2dConfig::same(3, 1), true),
    ));
    cases.push(Case::new(
        "conv2d 3x3 stride 2 pad 1",
        vec![g.normal(s(2, 3, 8, 8)), g.normal(s(4, 3, 3, 3))],
        conv(Conv2dConfig::down(3), false),
    ));
    cases.push(Case::new(
        "conv2d 3x3 dilation 2",
        vec![g.normal(s(1, 2, 8, 8)), g.normal(s(3, 2, 3, 3))],
        conv(Conv2dConfig::same(3, 2), false),
    ));
    cases.push(Case::new(
        "conv2d 1x1 bias",
        vec![g.normal(s(2, 3, 4, 4)), g.normal(s(5, 3, 1, 1)), g.normal(Shape::vector(5))],
        conv(Conv2dConfig { stride: 1, padding: 0, dilation: 1 }, true),
    ));
    for (name, train) in [("batchnorm2d train", true), ("batchnorm2d eval", false)] {
        cases.push(Case::new(
            name,
            vec![g.normal(s(2, 3, 4, 4)), g.uniform(Shape::vector(3), 0.5, 1.5), g.normal(Shape::vector(3))],
            bn(train),
        ));
    }
    for (name, kind) in [
        ("relu", Activation::Relu),
        ("leaky_relu", Activation::LeakyRelu(0.01)),
        ("sigmoid", Activation::Sigmoid),
    ] {
        cases.push(Case::new(name, vec![g.signed(s(2, 2, 3, 3))], move |t, v| Ok(t.activation(v[0], kind))));
    }
    cases.push(Case::new("upsample_bilinear2x", vec![g.normal(s(1, 2, 3, 4))], |t, v| Ok(t.upsample_bilinear2x(v[0]))));
    cases.push(Case::new("concat_channels", vec![g.normal(s(2, 1, 2, 3)), g.normal(s(2, 2, 2, 3))], |t, v| {
        t.concat_channels(v)
    }));
    cases.push(Case::new("eca_gate", vec![g.normal(s(2, 8, 3, 3)), g.normal(Shape::vector(5))], |t, v| {
        t.eca_gate(v[0], v[1])
    }));
    let pair = |g: &mut Gen| vec![g.normal(s(2, 2, 3, 3)), g.normal(s(2, 2, 3, 3))];
    cases.push(Case::new("add", pair(&mut g), |t, v| t.add(v[0], v[1])));
    cases.push(Case::new("sub", pair(&mut g), |t, v| t.sub(v[0], v[1])));
    cases.push(Case::new("mul", pair(&mut g), |t, v| t.mul(v[0], v[1])));
    cases.push(Case::new(
        "safe_div",
        vec![g.normal(s(2, 2, 3, 3)), g.uniform(s(2, 2, 3, 3), 0.5, 1.5)],
        |t, v| t.safe_div(v[0], v[1]),
    ));
    cases.push(Case::new("mul_channels", vec![g.normal(s(2, 3, 3, 3)), g.normal(s(2, 1, 3, 3))], |t, v| {
        t.mul_channels(v[0], v[1])
    }));
    cases.push(Case::new("scale", vec![g.normal(s(2, 2, 3, 3))], |t, v| Ok(t.scale(v[0], -1.7))));
    cases.push(Case::new("neg", vec![g.normal(s(2, 2, 3, 3))], |t, v| Ok(t.neg(v[0]))));
    cases.push(Case::new("sum", vec![g.normal(s(2, 2, 3, 3))], |t, v| Ok(t.sum(v[0]))));
    cases.push(Case::new("mean", vec![g.normal(s(2, 2, 3, 3))], |t, v| Ok(t.mean(v[0]))));
    cases.push(Case::new("sum_per_sample", vec![g.normal(s(3, 2, 2, 2))], |t, v| Ok(t.sum_per_sample(v[0]))));
    cases.push(Case::new("scale_per_sample", vec![g.normal(Shape::vector(3)), g.normal(s(3, 2, 2, 2))], |t, v| {
        t.scale_per_sample(v[0], v[1])
    }));
    cases.push(Case::new("abs", vec![g.signed(s(2, 2, 3, 3))], |t, v| Ok(t.abs(v[0]))));
    cases.push(Case::new("diff width", vec![g.normal(s(2, 2, 3, 4))], |t, v| Ok(t.diff(v[0], Axis::Width))));
    cases.push(Case::new("diff height", vec![g.normal(s(2, 2, 4, 3))], |t, v| Ok(t.diff(v[0], Axis::Height))));

    let w = LossWeights::default();
    let rgb = s(2, 3, 2, 3);
    let gray = s(2, 1, 2, 3);
    let pos = |g: &mut Gen, shape| g.uniform(shape, 0.1, 1.0);
    cases.push(Case::new("loss smse", vec![pos(&mut g, rgb), pos(&mut g, rgb)], |t, v| smse(t, v[0], v[1])));
    cases.push(Case::new("loss mse", vec![pos(&mut g, rgb), pos(&mut g, rgb)], |t, v| mse(t, v[0], v[1])));
    cases.push(Case::new("loss combined", vec![pos(&mut g, rgb), pos(&mut g, rgb)], move |t, v| {
        combined_loss(t, v[0], v[1], &w)
    }));
    cases.push(Case::new("loss imf", vec![pos(&mut g, rgb), pos(&mut g, gray), pos(&mut g, rgb)], |t, v| {
        imf_loss(t, v[0], v[1], v[2])
    }));
    cases.push(Case::new(
        "loss is",
        vec![pos(&mut g, gray), pos(&mut g, gray), pos(&mut g, gray), pos(&mut g, gray)],
        |t, v| is_loss(t, v[0], v[1], v[2], v[3]),
    ));
    let gt = pos(&mut g, rgb);
    let pred = g.apart(&gt);
    cases.push(Case::new("loss refinement", vec![pred.clone(), gt.clone()], |t, v| {
        refinement_loss(t, v[0], v[1]).map(|r| r.0)
    }));

    let predictions = |v: &[Var]| Predictions { rho_u: v[0], rho_amb: v[1], rho_shad: v[2], s_u: v[3], ambient: v[4], shadow_mag: v[5] };
    let targets = |v: &[Var], o: usize| Targets {
        image: v[o],
        reflectance: v[o + 1],
        shading_unified: v[o + 2],
        ambient: v[o + 3],
        shadow_mag: v[o + 4],
        shading_direct: v[o + 5],
    };
    let generator_inputs = |g: &mut Gen| {
        let mut v = vec![pos(g, rgb), pos(g, rgb), pos(g, rgb), pos(g, gray), pos(g, gray), pos(g, gray)];
        v.extend([pos(g, rgb), gt.clone(), pos(g, gray), pos(g, gray), pos(g, gray), pos(g, gray)]);
        v
    };
    cases.push(Case::new("loss generator", generator_inputs(&mut g), move |t, v| {
        generator_loss(t, &predictions(v), &targets(v, 6), &w).map(|r| r.0)
    }));
    let mut inputs = generator_inputs(&mut g);
    inputs.push(pred);
    cases.push(Case::new("loss training", inputs, move |t, v| {
        training_loss(t, &predictions(v), v[12], &targets(v, 6), &w).map(|r| r.0)
    }));
    cases
}

/// Runs [`suite`] for `seed` and returns every outcome.
pub fn run_suite(seed: u64) -> Result<Vec<Outcome>> {
    let mut out = Vec::new();
    for (i, case) in suite(seed).iter().enumerate() {
        out.extend(check(case, STEP, derive(seed, i as u64))?);
    }
    Ok(out)
}
