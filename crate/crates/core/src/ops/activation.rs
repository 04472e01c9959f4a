//! Elementwise nonlinearities.

use alloc::vec::Vec;

use crate::tape::{BackwardCtx, Grads, Op, Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Activation {
    Relu,
    LeakyRelu(f32),
    Sigmoid,
}

impl Activation {
    /// NaN passes through so divergence reaches the loss.
    pub fn apply(self, x: f32) -> f32 {
        match self {
            Activation::Relu => {
                if x <= 0.0 {
                    0.0
                } else {
                    x
                }
            }
            Activation::LeakyRelu(slope) => {
                if x < 0.0 {
                    slope * x
                } else {
                    x
                }
            }
            Activation::Sigmoid => sigmoid(x),
        }
    }

    /// Derivative given the input `x` and output `y`. The ReLU kink takes
    /// slope 0 and the leaky kink takes the positive-side slope 1.
    fn derivative(self, x: f32, y: f32) -> f32 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::LeakyRelu(slope) => {
                if x >= 0.0 {
                    1.0
                } else {
                    slope
                }
            }
            Activation::Sigmoid => y * (1.0 - y),
        }
    }
}

pub(crate) fn sigmoid(x: f32) -> f32 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::expf(-x))
    } else {
        let e = libm::expf(x);
        e / (1.0 + e)
    }
}

pub(crate) struct ActivationRecord {
    x: Var,
    kind: Activation,
}

impl Tape {
    pub fn activation(&mut self, x: Var, kind: Activation) -> Var {
        let xt = self.value(x);
        let data: Vec<f32> = xt.data().iter().map(|&v| kind.apply(v)).collect();
        let value = Tensor::from_vec(xt.shape(), data).expect("shape preserved");
        self.push(value, &[x], || Op::Activation(ActivationRecord { x, kind }))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.activation(x, Activation::Relu)
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f32) -> Var {
        self.activation(x, Activation::LeakyRelu(slope))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.activation(x, Activation::Sigmoid)
    }
}

impl ActivationRecord {
    pub(crate) fn backward(&self, ctx: &BackwardCtx<'_>, out: &Tensor, g: &[f32], grads: &mut Grads) {
        let xv = ctx.value(self.x).data();
        let yv = out.data();
        let kind = self.kind;
        grads.accumulate(self.x, |dx| {
            for i in 0..dx.len() {
                dx[i] += g[i] * kind.derivative(xv[i], yv[i]);
            }
        });
    }
}
