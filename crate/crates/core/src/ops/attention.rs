//! Efficient channel attention: a sigmoid gate per channel computed from a
//! short 1-D convolution across the globally pooled channel descriptor.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::activation::sigmoid;
use crate::error::{Error, Result};
use crate::tape::{BackwardCtx, Grads, Op, Tape, Var};
use crate::tensor::Tensor;

pub(crate) struct EcaRecord {
    x: Var,
    kernel: Var,
    pooled: Vec<f32>,
    gate: Vec<f32>,
}

/// Zero-padded cross-correlation of each row of `pooled` (N×C) with `kernel`.
fn channel_conv(pooled: &[f32], channels: usize, kernel: &[f32]) -> Vec<f32> {
    let r = (kernel.len() / 2) as isize;
    let mut out = vec![0.0f32; pooled.len()];
    for (row, dst) in pooled.chunks_exact(channels).zip(out.chunks_exact_mut(channels)) {
        for (c, d) in dst.iter_mut().enumerate() {
            let mut acc = 0.0f32;
            for (j, &k) in kernel.iter().enumerate() {
                let src = c as isize + j as isize - r;
                if src >= 0 && (src as usize) < channels {
                    acc += k * row[src as usize];
                }
            }
            *d = acc;
        }
    }
    out
}

impl Tape {
    /// Gates `x` channel-wise by `sigmoid(conv1d(avgpool(x), kernel))`. The
    /// kernel length must be odd; padding keeps the channel count.
    pub fn eca_gate(&mut self, x: Var, kernel: Var) -> Result<Var> {
        let k = self.shape(kernel).numel();
        if k % 2 == 0 {
            return Err(Error::invalid("eca_gate", format!("kernel size {k} is not odd")));
        }
        let xt = self.value(x);
        let s = xt.shape();
        let plane = s.plane();
        let pooled: Vec<f32> = xt
            .data()
            .chunks_exact(plane)
            .map(|p| (p.iter().map(|&v| v as f64).sum::<f64>() / plane as f64) as f32)
            .collect();
        let gate: Vec<f32> = channel_conv(&pooled, s.c, self.value(kernel).data()).into_iter().map(sigmoid).collect();
        let mut out = xt.data().to_vec();
        for (p, &gv) in out.chunks_exact_mut(plane).zip(&gate) {
            p.iter_mut().for_each(|v| *v *= gv);
        }
        let value = Tensor::from_vec(s, out)?;
        Ok(self.push(value, &[x, kernel], || Op::EcaGate(EcaRecord { x, kernel, pooled, gate })))
    }
}

impl EcaRecord {
    pub(crate) fn backward(&self, ctx: &BackwardCtx<'_>, g: &[f32], grads: &mut Grads) {
        let xt = ctx.value(self.x);
        let s = xt.shape();
        let plane = s.plane();
        let kernel = ctx.value(self.kernel).data();
        let r = (kernel.len() / 2) as isize;
        // d(loss)/d(pre-sigmoid logit) per (n, c)
        let dz: Vec<f32> = g
            .chunks_exact(plane)
            .zip(xt.data().chunks_exact(plane))
            .zip(&self.gate)
            .map(|((gp, xp), &gv)| {
                let dg: f32 = gp.iter().zip(xp).map(|(a, b)| a * b).sum();
                dg * gv * (1.0 - gv)
            })
            .collect();
        let c = s.c as isize;
        grads.accumulate(self.kernel, |dk| {
            for (dzr, pr) in dz.chunks_exact(s.c).zip(self.pooled.chunks_exact(s.c)) {
                for (j, d) in dk.iter_mut().enumerate() {
                    let mut acc = 0.0f32;
                    for ch in 0..c {
                        let src = ch + j as isize - r;
                        if src >= 0 && src < c {
                            acc += dzr[ch as usize] * pr[src as usize];
                        }
                    }
                    *d += acc;
                }
            }
        });
        grads.accumulate(self.x, |dx| {
            let inv = 1.0 / plane as f32;
            for (row, dzr) in dz.chunks_exact(s.c).enumerate() {
                // adjoint of the channel convolution, then of the mean
                let mut dpooled = vec![0.0f32; s.c];
                for ch in 0..c {
                    for (j, &k) in kernel.iter().enumerate() {
                        let src = ch + j as isize - r;
                        if src >= 0 && src < c {
                            dpooled[src as usize] += dzr[ch as usize] * k;
                        }
                    }
                }
                for ch in 0..s.c {
                    let p = row * s.c + ch;
                    let gv = self.gate[p];
                    let extra = dpooled[ch] * inv;
                    let (dst, gp) = (&mut dx[p * plane..(p + 1) * plane], &g[p * plane..(p + 1) * plane]);
                    for (d, &gi) in dst.iter_mut().zip(gp) {
                        *d += gi * gv + extra;
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

    #[test]
    fn zero_kernel_halves_input() {
        let mut tape = Tape::new();
        let data: Vec<f32> = (0..32).map(|i| i as f32 * 0.1 - 1.0).collect();
        let x = tape.leaf(Tensor::from_vec(Shape::new(2, 4, 2, 2), data.clone()).unwrap());
        let k = tape.leaf(Tensor::zeros(Shape::vector(5)));
        let y = tape.eca_gate(x, k).unwrap();
        for (a, b) in tape.value(y).data().iter().zip(&data) {
            assert_eq!(*a, 0.5 * b);
        }
    }

    #[test]
    fn constant_input_gates_interior_uniformly() {
        // pooled vector is constant 2; interior channels see the full kernel
        // sum, edge channels lose the taps that fall in the zero padding
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::full(Shape::new(1, 8, 3, 3), 2.0));
        let kv = [0.1f32, -0.2, 0.3, 0.05, 0.15];
        let k = tape.leaf(Tensor::from_vec(Shape::vector(5), kv.to_vec()).unwrap());
        let y = tape.eca_gate(x, k).unwrap();
        let out = tape.value(y);
        let interior = 2.0 * sigmoid(2.0 * kv.iter().sum::<f32>());
        for ch in 2..6 {
            assert!((out.at(0, ch, 1, 1) - interior).abs() < 1e-6);
        }
        let first = 2.0 * sigmoid(2.0 * (kv[2] + kv[3] + kv[4]));
        assert!((out.at(0, 0, 0, 0) - first).abs() < 1e-6);
        let last = 2.0 * sigmoid(2.0 * (kv[0] + kv[1] + kv[2]));
        assert!((out.at(0, 7, 2, 2) - last).abs() < 1e-6);
    }

    #[test]
    fn even_kernel_rejected() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::zeros(Shape::new(1, 4, 2, 2)));
        let k = tape.leaf(Tensor::zeros(Shape::vector(4)));
        assert!(tape.eca_gate(x, k).is_err());
    }
}
