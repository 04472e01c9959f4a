//! Channel concatenation, arithmetic, reductions and finite differences.
//!
//! These are the pieces the loss functions are assembled from.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tape::{BackwardCtx, Grads, Op, Tape, Var};
use crate::tensor::{Shape, Tensor};

/// Spatial axis for forward differences.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    /// Horizontal neighbours, `x[.., j+1] - x[.., j]`.
    Width,
    /// Vertical neighbours, `x[i+1, ..] - x[i, ..]`.
    Height,
}

pub(crate) struct ConcatRecord {
    xs: Vec<Var>,
}

pub(crate) enum PointwiseRecord {
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    /// `a` (N×C×H×W) times `s` (N×1×H×W) broadcast over channels.
    MulChannels(Var, Var),
    Scale(Var, f32),
    Sum(Var),
    /// Sum of each batch item, giving N×1×1×1.
    SumPerSample(Var),
    /// `s` (N×1×1×1) times every element of item n of `x`.
    ScalePerSample(Var, Var),
    /// `a / b`, defined as 0 where `b == 0`.
    SafeDiv(Var, Var),
    Abs(Var),
    Diff(Var, Axis),
}

impl Tape {
    /// Concatenates along the channel axis.
    pub fn concat_channels(&mut self, xs: &[Var]) -> Result<Var> {
        let first = *xs.first().ok_or_else(|| Error::invalid("concat_channels", "no inputs"))?;
        let s0 = self.shape(first);
        let mut c = 0;
        for &x in xs {
            let s = self.shape(x);
            if (s.n, s.h, s.w) != (s0.n, s0.h, s0.w) {
                return Err(Error::shape("concat_channels", format!("{s} does not match {s0}")));
            }
            c += s.c;
        }
        let out_shape = Shape::new(s0.n, c, s0.h, s0.w);
        let mut out = Vec::with_capacity(out_shape.numel());
        for n in 0..s0.n {
            for &x in xs {
                out.extend_from_slice(self.value(x).item_slice(n));
            }
        }
        let value = Tensor::from_vec(out_shape, out)?;
        let xs = xs.to_vec();
        let inputs = xs.clone();
        Ok(self.push(value, &inputs, || Op::Concat(ConcatRecord { xs })))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<Shape> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::shape(op, format!("{sa} vs {sb}")));
        }
        Ok(sa)
    }

    fn zip_map(&mut self, op: &'static str, a: Var, b: Var, f: impl Fn(f32, f32) -> f32, rec: PointwiseRecord) -> Result<Var> {
        let s = self.same_shape(op, a, b)?;
        let data = self.value(a).data().iter().zip(self.value(b).data()).map(|(&x, &y)| f(x, y)).collect();
        let value = Tensor::from_vec(s, data)?;
        Ok(self.push(value, &[a, b], || Op::Pointwise(rec)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_map("add", a, b, |x, y| x + y, PointwiseRecord::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_map("sub", a, b, |x, y| x - y, PointwiseRecord::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_map("mul", a, b, |x, y| x * y, PointwiseRecord::Mul(a, b))
    }

    pub fn safe_div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_map("safe_div", a, b, |x, y| if y == 0.0 { 0.0 } else { x / y }, PointwiseRecord::SafeDiv(a, b))
    }

    /// Multiplies every channel of `a` by the single-channel map `s`.
    pub fn mul_channels(&mut self, a: Var, s: Var) -> Result<Var> {
        let (sa, ss) = (self.shape(a), self.shape(s));
        if ss.c != 1 || (sa.n, sa.h, sa.w) != (ss.n, ss.h, ss.w) {
            return Err(Error::shape("mul_channels", format!("{ss} cannot broadcast over {sa}")));
        }
        let (av, sv) = (self.value(a).data(), self.value(s).data());
        let plane = sa.plane();
        let mut out = av.to_vec();
        for n in 0..sa.n {
            let m = &sv[n * plane..(n + 1) * plane];
            for c in 0..sa.c {
                let base = (n * sa.c + c) * plane;
                out[base..base + plane].iter_mut().zip(m).for_each(|(v, &k)| *v *= k);
            }
        }
        let value = Tensor::from_vec(sa, out)?;
        Ok(self.push(value, &[a, s], || Op::Pointwise(PointwiseRecord::MulChannels(a, s))))
    }

    pub fn scale(&mut self, x: Var, c: f32) -> Var {
        let xt = self.value(x);
        let value = Tensor::from_vec(xt.shape(), xt.data().iter().map(|v| v * c).collect()).expect("shape preserved");
        self.push(value, &[x], || Op::Pointwise(PointwiseRecord::Scale(x, c)))
    }

    pub fn neg(&mut self, x: Var) -> Var {
        self.scale(x, -1.0)
    }

    /// Sum of all elements as a scalar.
    pub fn sum(&mut self, x: Var) -> Var {
        let total = self.value(x).data().iter().map(|&v| v as f64).sum::<f64>();
        self.push(Tensor::scalar(total as f32), &[x], || Op::Pointwise(PointwiseRecord::Sum(x)))
    }

    /// Mean of all elements as a scalar.
    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.shape(x).numel();
        let s = self.sum(x);
        if n == 0 {
            return s;
        }
        self.scale(s, 1.0 / n as f32)
    }

    pub fn sum_per_sample(&mut self, x: Var) -> Var {
        let xt = self.value(x);
        let s = xt.shape();
        let data = (0..s.n).map(|n| xt.item_slice(n).iter().map(|&v| v as f64).sum::<f64>() as f32).collect();
        let value = Tensor::from_vec(Shape::vector(s.n), data).expect("one value per item");
        self.push(value, &[x], || Op::Pointwise(PointwiseRecord::SumPerSample(x)))
    }

    pub fn scale_per_sample(&mut self, s: Var, x: Var) -> Result<Var> {
        let (ss, xs) = (self.shape(s), self.shape(x));
        if ss.numel() != xs.n {
            return Err(Error::shape("scale_per_sample", format!("{ss} scales for batch of {}", xs.n)));
        }
        let sv = self.value(s).data();
        let item = xs.item();
        let data = self.value(x).data().iter().enumerate().map(|(i, v)| v * sv[i / item]).collect();
        let value = Tensor::from_vec(xs, data)?;
        Ok(self.push(value, &[s, x], || Op::Pointwise(PointwiseRecord::ScalePerSample(s, x))))
    }

    pub fn abs(&mut self, x: Var) -> Var {
        let xt = self.value(x);
        let value = Tensor::from_vec(xt.shape(), xt.data().iter().map(|v| libm::fabsf(*v)).collect()).expect("shape preserved");
        self.push(value, &[x], || Op::Pointwise(PointwiseRecord::Abs(x)))
    }

    /// Forward differences between neighbouring pixels; the chosen axis
    /// shrinks by one.
    pub fn diff(&mut self, x: Var, axis: Axis) -> Var {
        let xt = self.value(x);
        let s = xt.shape();
        let (oh, ow) = match axis {
            Axis::Width => (s.h, s.w.saturating_sub(1)),
            Axis::Height => (s.h.saturating_sub(1), s.w),
        };
        let out_shape = Shape::new(s.n, s.c, oh, ow);
        let src = xt.data();
        let mut out = Vec::with_capacity(out_shape.numel());
        for p in 0..s.n * s.c {
            let plane = &src[p * s.plane()..(p + 1) * s.plane()];
            for y in 0..oh {
                for xx in 0..ow {
                    let (a, b) = match axis {
                        Axis::Width => (plane[y * s.w + xx + 1], plane[y * s.w + xx]),
                        Axis::Height => (plane[(y + 1) * s.w + xx], plane[y * s.w + xx]),
                    };
                    out.push(a - b);
                }
            }
        }
        let value = Tensor::from_vec(out_shape, out).expect("shape computed");
        self.push(value, &[x], || Op::Pointwise(PointwiseRecord::Diff(x, axis)))
    }
}

impl ConcatRecord {
    pub(crate) fn backward(&self, ctx: &BackwardCtx<'_>, g: &[f32], grads: &mut Grads) {
        let batch = ctx.value(self.xs[0]).shape().n;
        let total: usize = self.xs.iter().map(|&x| ctx.value(x).shape().item()).sum();
        let mut offset = 0;
        for &x in &self.xs {
            let item = ctx.value(x).shape().item();
            grads.accumulate(x, |dx| {
                for n in 0..batch {
                    let src = &g[n * total + offset..n * total + offset + item];
                    dx[n * item..(n + 1) * item].iter_mut().zip(src).for_each(|(d, s)| *d += s);
                }
            });
            offset += item;
        }
    }
}

impl PointwiseRecord {
    pub(crate) fn backward(&self, ctx: &BackwardCtx<'_>, out: &Tensor, g: &[f32], grads: &mut Grads) {
        match *self {
            PointwiseRecord::Add(a, b) => {
                grads.add(a, g);
                grads.add(b, g);
            }
            PointwiseRecord::Sub(a, b) => {
                grads.add(a, g);
                grads.accumulate(b, |d| d.iter_mut().zip(g).for_each(|(d, g)| *d -= g));
            }
            PointwiseRecord::Mul(a, b) => {
                let (av, bv) = (ctx.value(a).data(), ctx.value(b).data());
                grads.accumulate(a, |d| {
                    for i in 0..d.len() {
                        d[i] += g[i] * bv[i];
                    }
                });
                grads.accumulate(b, |d| {
                    for i in 0..d.len() {
                        d[i] += g[i] * av[i];
                    }
                });
            }
            PointwiseRecord::MulChannels(a, s) => {
                let (at, sv) = (ctx.value(a), ctx.value(s).data());
                let sa = at.shape();
                let plane = sa.plane();
                let av = at.data();
                grads.accumulate(a, |d| {
                    for n in 0..sa.n {
                        for c in 0..sa.c {
                            let base = (n * sa.c + c) * plane;
                            for i in 0..plane {
                                d[base + i] += g[base + i] * sv[n * plane + i];
                            }
                        }
                    }
                });
                grads.accumulate(s, |d| {
                    for n in 0..sa.n {
                        for c in 0..sa.c {
                            let base = (n * sa.c + c) * plane;
                            for i in 0..plane {
                                d[n * plane + i] += g[base + i] * av[base + i];
                            }
                        }
                    }
                });
            }
            PointwiseRecord::Scale(x, c) => {
                grads.accumulate(x, |d| d.iter_mut().zip(g).for_each(|(d, g)| *d += g * c));
            }
            PointwiseRecord::Sum(x) => {
                let g0 = g[0];
                grads.accumulate(x, |d| d.iter_mut().for_each(|d| *d += g0));
            }
            PointwiseRecord::SumPerSample(x) => {
                let item = ctx.value(x).shape().item();
                grads.accumulate(x, |d| {
                    for (i, v) in d.iter_mut().enumerate() {
                        *v += g[i / item];
                    }
                });
            }
            PointwiseRecord::ScalePerSample(s, x) => {
                let (sv, xv) = (ctx.value(s).data(), ctx.value(x).data());
                let item = ctx.value(x).shape().item();
                grads.accumulate(s, |d| {
                    for (n, dn) in d.iter_mut().enumerate() {
                        let lo = n * item;
                        *dn += g[lo..lo + item].iter().zip(&xv[lo..lo + item]).map(|(a, b)| a * b).sum::<f32>();
                    }
                });
                grads.accumulate(x, |d| {
                    for (i, v) in d.iter_mut().enumerate() {
                        *v += g[i] * sv[i / item];
                    }
                });
            }
            PointwiseRecord::SafeDiv(a, b) => {
                let bv = ctx.value(b).data();
                let q = out.data();
                grads.accumulate(a, |d| {
                    for i in 0..d.len() {
                        if bv[i] != 0.0 {
                            d[i] += g[i] / bv[i];
                        }
                    }
                });
                grads.accumulate(b, |d| {
                    for i in 0..d.len() {
                        if bv[i] != 0.0 {
                            d[i] -= g[i] * q[i] / bv[i];
                        }
                    }
                });
            }
            PointwiseRecord::Abs(x) => {
                let xv = ctx.value(x).data();
                grads.accumulate(x, |d| {
                    for i in 0..d.len() {
                        if xv[i] > 0.0 {
                            d[i] += g[i];
                        } else if xv[i] < 0.0 {
                            d[i] -= g[i];
                        }
                    }
                });
            }
            PointwiseRecord::Diff(x, axis) => {
                let s = ctx.value(x).shape();
                let os = out.shape();
                grads.accumulate(x, |d| {
                    for p in 0..s.n * s.c {
                        let base = p * s.plane();
                        let gp = &g[p * os.plane()..(p + 1) * os.plane()];
                        for y in 0..os.h {
                            for xx in 0..os.w {
                                let v = gp[y * os.w + xx];
                                let (hi, lo) = match axis {
                                    Axis::Width => (y * s.w + xx + 1, y * s.w + xx),
                                    Axis::Height => ((y + 1) * s.w + xx, y * s.w + xx),
                                };
                                d[base + hi] += v;
                                d[base + lo] -= v;
                            }
                        }
                    }
                });
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ones(shape: Shape) -> Vec<f32> {
        vec![1.0; shape.numel()]
    }

    #[test]
    fn concat_of_one_is_identity() {
        let mut tape = Tape::new();
        let t = Tensor::from_vec(Shape::new(2, 2, 1, 2), (0..8).map(|v| v as f32).collect()).unwrap();
        let x = tape.leaf(t.clone());
        let y = tape.concat_channels(&[x]).unwrap();
        assert_eq!(tape.value(y).data(), t.data());
    }

    #[test]
    fn concat_layout_and_grads() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::full(Shape::new(1, 1, 2, 2), 7.0).with_grad());
        let b = tape.leaf(Tensor::full(Shape::new(1, 3, 2, 2), 1.0).with_grad());
        let y = tape.concat_channels(&[a, b]).unwrap();
        assert_eq!(tape.shape(y), Shape::new(1, 4, 2, 2));
        assert_eq!(&tape.value(y).data()[..4], &[7.0; 4]);
        let loss = tape.sum(y);
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(a).unwrap(), &ones(Shape::new(1, 1, 2, 2))[..]);
        assert_eq!(tape.grad(b).unwrap(), &ones(Shape::new(1, 3, 2, 2))[..]);
    }

    #[test]
    fn concat_spatial_mismatch() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::zeros(Shape::new(1, 1, 2, 2)));
        let b = tape.leaf(Tensor::zeros(Shape::new(1, 1, 2, 3)));
        assert!(matches!(tape.concat_channels(&[a, b]), Err(Error::Shape { .. })));
    }

    #[test]
    fn safe_div_zero_denominator() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::from_vec(Shape::vector(2), vec![3.0, 1.0]).unwrap().with_grad());
        let b = tape.leaf(Tensor::from_vec(Shape::vector(2), vec![0.0, 2.0]).unwrap().with_grad());
        let q = tape.safe_div(a, b).unwrap();
        assert_eq!(tape.value(q).data(), &[0.0, 0.5]);
        let loss = tape.sum(q);
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(a).unwrap(), &[0.0, 0.5]);
        assert_eq!(tape.grad(b).unwrap(), &[0.0, -0.25]);
    }

    #[test]
    fn diff_shapes() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::from_vec(Shape::new(1, 1, 1, 3), vec![0.0, 1.0, 0.0]).unwrap());
        let dw = tape.diff(x, Axis::Width);
        let dh = tape.diff(x, Axis::Height);
        assert_eq!(tape.value(dw).data(), &[1.0, -1.0]);
        assert_eq!(tape.shape(dh).numel(), 0);
    }
}
