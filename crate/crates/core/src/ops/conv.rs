//! 2-D convolution (cross-correlation) with zero padding, stride and dilation.
//!
//! Lowered to matrix products per batch item. Pointwise kernels multiply
//! the input directly. Other unit-stride kernels use one product per kernel
//! tap against a shifted view of the zero-padded input, computing a "wide"
//! output whose rows have the padded width; the surplus columns are dropped.
//! Strided kernels go through an im2col buffer.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::gemm::{gemm, Mat};
use crate::error::{Error, Result};
use crate::tape::{BackwardCtx, Grads, Op, Tape, Var};
use crate::tensor::{Shape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv2dConfig {
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
}

impl Default for Conv2dConfig {
    fn default() -> Self {
        Conv2dConfig { stride: 1, padding: 0, dilation: 1 }
    }
}

impl Conv2dConfig {
    /// Unit stride with the padding that preserves spatial extent for an odd
    /// kernel of size `k`.
    pub fn same(k: usize, dilation: usize) -> Self {
        Conv2dConfig { stride: 1, padding: dilation * (k - 1) / 2, dilation }
    }

    /// Stride-2 downsampling with "same"-style padding.
    pub fn down(k: usize) -> Self {
        Conv2dConfig { stride: 2, padding: (k - 1) / 2, dilation: 1 }
    }

    /// Output extent along one axis, or `None` when the kernel does not fit.
    pub fn out_extent(&self, input: usize, k: usize) -> Option<usize> {
        let span = self.dilation * (k - 1) + 1;
        let padded = input + 2 * self.padding;
        (padded >= span).then(|| (padded - span) / self.stride + 1)
    }
}

#[derive(Clone, Copy, Debug)]
struct Geom {
    in_c: usize,
    in_h: usize,
    in_w: usize,
    out_c: usize,
    kh: usize,
    kw: usize,
    out_h: usize,
    out_w: usize,
    cfg: Conv2dConfig,
}

impl Geom {
    fn rows(&self) -> usize {
        self.in_c * self.kh * self.kw
    }

    fn cols(&self) -> usize {
        self.out_h * self.out_w
    }

    fn pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.cfg.stride == 1 && self.cfg.padding == 0
    }

    fn shifted(&self) -> bool {
        self.cfg.stride == 1 && !self.pointwise()
    }

    fn padded(&self) -> (usize, usize) {
        (self.in_h + 2 * self.cfg.padding, self.in_w + 2 * self.cfg.padding)
    }

    /// Columns of the wide output: `out_h` rows of padded width, minus the
    /// unused tail of the last row so every tap view stays inside its plane.
    fn wide_cols(&self) -> usize {
        (self.out_h - 1) * self.padded().1 + self.out_w
    }

    fn taps(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let (d, wp) = (self.cfg.dilation, self.padded().1);
        (0..self.kh).flat_map(move |ky| (0..self.kw).map(move |kx| (ky * self.kw + kx, ky * d * wp + kx * d)))
    }

    /// Range of output positions whose tap `offset` lands inside `[0, len)`.
    fn valid(&self, out_len: usize, in_len: usize, offset: usize) -> (usize, usize) {
        let (s, p) = (self.cfg.stride as isize, self.cfg.padding as isize);
        let off = offset as isize - p;
        // smallest o with o*s + off >= 0
        let lo = if off >= 0 { 0 } else { ((-off) + s - 1) / s };
        // largest o with o*s + off <= in_len - 1
        let top = in_len as isize - 1 - off;
        let hi = if top < 0 { 0 } else { (top / s + 1).min(out_len as isize) };
        let lo = lo.min(out_len as isize);
        (lo as usize, hi.max(lo) as usize)
    }
}

/// Writes `x` into the interior of `xpad`; the border must already be zero.
fn pad_into(x: &[f32], g: &Geom, xpad: &mut [f32]) {
    let (hp, wp) = g.padded();
    let p = g.cfg.padding;
    for (src, dst) in x.chunks_exact(g.in_h * g.in_w).zip(xpad.chunks_exact_mut(hp * wp)) {
        for (y, line) in src.chunks_exact(g.in_w).enumerate() {
            let at = (y + p) * wp + p;
            dst[at..at + g.in_w].copy_from_slice(line);
        }
    }
}

/// Reorders `w` (outC×inC×kH×kW) into one contiguous outC×inC matrix per tap.
fn tap_major(w: &[f32], g: &Geom) -> Vec<f32> {
    let kk = g.kh * g.kw;
    let per_tap = g.out_c * g.in_c;
    let mut out = vec![0.0f32; kk * per_tap];
    for (oc_ic, taps) in w.chunks_exact(kk).enumerate() {
        for (tap, &v) in taps.iter().enumerate() {
            out[tap * per_tap + oc_ic] = v;
        }
    }
    out
}

/// `wide = Σ_taps W_tap · shift_tap(xpad)`.
fn shifted_forward(xpad: &[f32], wt: &[f32], g: &Geom, wide: &mut [f32]) {
    let (hp, wp) = g.padded();
    let (per_tap, nw) = (g.out_c * g.in_c, g.wide_cols());
    for (i, (tap, off)) in g.taps().enumerate() {
        let a = Mat::new(&wt[tap * per_tap..(tap + 1) * per_tap], g.in_c);
        let b = Mat::new(&xpad[off..], hp * wp);
        gemm(g.out_c, g.in_c, nw, a, b, if i == 0 { 0.0 } else { 1.0 }, wide, nw);
    }
}

/// Fills `cols` (rows × out_h·out_w) with the receptive fields of `x`.
fn im2col(x: &[f32], g: &Geom, cols: &mut [f32]) {
    let (s, d) = (g.cfg.stride, g.cfg.dilation);
    let p = g.cfg.padding as isize;
    let ncols = g.cols();
    let plane = g.in_h * g.in_w;
    for ci in 0..g.in_c {
        let src = &x[ci * plane..(ci + 1) * plane];
        for ky in 0..g.kh {
            let (oy_lo, oy_hi) = g.valid(g.out_h, g.in_h, ky * d);
            for kx in 0..g.kw {
                let row = (ci * g.kh + ky) * g.kw + kx;
                let dst = &mut cols[row * ncols..(row + 1) * ncols];
                let (ox_lo, ox_hi) = g.valid(g.out_w, g.in_w, kx * d);
                for oy in 0..g.out_h {
                    let line = &mut dst[oy * g.out_w..(oy + 1) * g.out_w];
                    if oy < oy_lo || oy >= oy_hi {
                        line.fill(0.0);
                        continue;
                    }
                    let iy = (oy * s) as isize - p + (ky * d) as isize;
                    let base = iy as usize * g.in_w;
                    line[..ox_lo].fill(0.0);
                    line[ox_hi..].fill(0.0);
                    let ix0 = (ox_lo * s) as isize - p + (kx * d) as isize;
                    let mut ix = ix0 as usize;
                    for v in &mut line[ox_lo..ox_hi] {
                        *v = src[base + ix];
                        ix += s;
                    }
                }
            }
        }
    }
}

/// Scatter-adds `cols` back onto the input layout; the adjoint of [`im2col`].
fn col2im_add(cols: &[f32], g: &Geom, dx: &mut [f32]) {
    let (s, d) = (g.cfg.stride, g.cfg.dilation);
    let p = g.cfg.padding as isize;
    let ncols = g.cols();
    let plane = g.in_h * g.in_w;
    for ci in 0..g.in_c {
        let dst = &mut dx[ci * plane..(ci + 1) * plane];
        for ky in 0..g.kh {
            let (oy_lo, oy_hi) = g.valid(g.out_h, g.in_h, ky * d);
            for kx in 0..g.kw {
                let row = (ci * g.kh + ky) * g.kw + kx;
                let src = &cols[row * ncols..(row + 1) * ncols];
                let (ox_lo, ox_hi) = g.valid(g.out_w, g.in_w, kx * d);
                for oy in oy_lo..oy_hi {
                    let iy = (oy * s) as isize - p + (ky * d) as isize;
                    let base = iy as usize * g.in_w;
                    let ix0 = (ox_lo * s) as isize - p + (kx * d) as isize;
                    let mut ix = ix0 as usize;
                    for v in &src[oy * g.out_w + ox_lo..oy * g.out_w + ox_hi] {
                        dst[base + ix] += v;
                        ix += s;
                    }
                }
            }
        }
    }
}

pub(crate) struct ConvRecord {
    x: Var,
    w: Var,
    b: Option<Var>,
    geom: Geom,
}

impl Tape {
    /// Convolves `x` (N×inC×H×W) with `w` (outC×inC×kH×kW) plus an optional
    /// per-output-channel bias.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, cfg: Conv2dConfig) -> Result<Var> {
        if cfg.stride == 0 || cfg.dilation == 0 {
            return Err(Error::invalid("conv2d", "stride and dilation must be at least 1"));
        }
        let xs = self.shape(x);
        let ws = self.shape(w);
        if xs.c != ws.c {
            return Err(Error::shape(
                "conv2d",
                format!("input has {} channels but kernel expects inC = {} (input {xs}, kernel {ws})", xs.c, ws.c),
            ));
        }
        if let Some(b) = b {
            let bn = self.shape(b).numel();
            if bn != ws.n {
                return Err(Error::shape("conv2d", format!("bias has {bn} values for {} output channels", ws.n)));
            }
        }
        let (out_h, out_w) = match (cfg.out_extent(xs.h, ws.h), cfg.out_extent(xs.w, ws.w)) {
            (Some(h), Some(w)) => (h, w),
            _ => return Err(Error::shape("conv2d", format!("kernel {ws} does not fit input {xs} under {cfg:?}"))),
        };
        let geom = Geom {
            in_c: xs.c,
            in_h: xs.h,
            in_w: xs.w,
            out_c: ws.n,
            kh: ws.h,
            kw: ws.w,
            out_h,
            out_w,
            cfg,
        };
        let out_shape = Shape::new(xs.n, ws.n, out_h, out_w);
        let mut out = vec![0.0f32; out_shape.numel()];
        {
            let xv = self.value(x).data();
            let wv = self.value(w).data();
            let bv = b.map(|b| self.value(b).data());
            let (rows, ncols) = (geom.rows(), geom.cols());
            let shifted = geom.shifted();
            let im2col_len = if geom.pointwise() || shifted { 0 } else { rows * ncols };
            let mut cols = vec![0.0f32; im2col_len];
            let (hp, wp) = geom.padded();
            let mut xpad = if shifted { vec![0.0f32; geom.in_c * hp * wp] } else { Vec::new() };
            let mut wide = if shifted { vec![0.0f32; geom.out_c * geom.wide_cols()] } else { Vec::new() };
            let wt = if shifted { tap_major(wv, &geom) } else { Vec::new() };
            for n in 0..xs.n {
                let xi = &xv[n * xs.item()..(n + 1) * xs.item()];
                let oi = &mut out[n * out_shape.item()..(n + 1) * out_shape.item()];
                if shifted {
                    pad_into(xi, &geom, &mut xpad);
                    shifted_forward(&xpad, &wt, &geom, &mut wide);
                    let nw = geom.wide_cols();
                    for (dst, src) in oi.chunks_exact_mut(ncols).zip(wide.chunks_exact(nw)) {
                        for (y, line) in dst.chunks_exact_mut(geom.out_w).enumerate() {
                            line.copy_from_slice(&src[y * wp..y * wp + geom.out_w]);
                        }
                    }
                } else {
                    let src: &[f32] = if geom.pointwise() {
                        xi
                    } else {
                        im2col(xi, &geom, &mut cols);
                        &cols
                    };
                    gemm(geom.out_c, rows, ncols, Mat::new(wv, rows), Mat::new(src, ncols), 0.0, oi, ncols);
                }
                if let Some(bv) = bv {
                    for (o, chunk) in oi.chunks_exact_mut(ncols).enumerate() {
                        let bias = bv[o];
                        chunk.iter_mut().for_each(|v| *v += bias);
                    }
                }
            }
        }
        let value = Tensor::from_vec(out_shape, out)?;
        let mut inputs = vec![x, w];
        inputs.extend(b);
        Ok(self.push(value, &inputs, || Op::Conv2d(ConvRecord { x, w, b, geom })))
    }
}

impl ConvRecord {
    pub(crate) fn backward(&self, ctx: &BackwardCtx<'_>, g: &[f32], grads: &mut Grads) {
        let geom = &self.geom;
        let xt = ctx.value(self.x);
        let xv = xt.data();
        let wv = ctx.value(self.w).data();
        let batch = xt.shape().n;
        let (rows, ncols) = (geom.rows(), geom.cols());
        let in_item = geom.in_c * geom.in_h * geom.in_w;
        let out_item = geom.out_c * ncols;
        let want_w = grads.wants(self.w);
        let want_x = grads.wants(self.x);

        if let Some(b) = self.b {
            grads.accumulate(b, |db| {
                for n in 0..batch {
                    let gi = &g[n * out_item..(n + 1) * out_item];
                    for (o, chunk) in gi.chunks_exact(ncols).enumerate() {
                        db[o] += chunk.iter().sum::<f32>();
                    }
                }
            });
        }

        if geom.shifted() {
            self.shifted_backward(ctx, g, grads);
            return;
        }
        let mut cols = if geom.pointwise() || !want_w { Vec::new() } else { vec![0.0f32; rows * ncols] };
        let mut dcols = if geom.pointwise() || !want_x { Vec::new() } else { vec![0.0f32; rows * ncols] };
        let mut dw = if want_w { vec![0.0f32; geom.out_c * rows] } else { Vec::new() };
        for n in 0..batch {
            let gi = &g[n * out_item..(n + 1) * out_item];
            if want_w {
                let xi = &xv[n * in_item..(n + 1) * in_item];
                let src: &[f32] = if geom.pointwise() {
                    xi
                } else {
                    im2col(xi, geom, &mut cols);
                    &cols
                };
                // dW += dY · colsᵀ
                gemm(geom.out_c, ncols, rows, Mat::new(gi, ncols), Mat::new(src, ncols).t(), 1.0, &mut dw, rows);
            }
            if want_x {
                grads.accumulate(self.x, |dx| {
                    let dxi = &mut dx[n * in_item..(n + 1) * in_item];
                    // dcols = Wᵀ · dY
                    let wt = Mat::new(wv, rows).t();
                    if geom.pointwise() {
                        gemm(rows, geom.out_c, ncols, wt, Mat::new(gi, ncols), 1.0, dxi, ncols);
                    } else {
                        gemm(rows, geom.out_c, ncols, wt, Mat::new(gi, ncols), 0.0, &mut dcols, ncols);
                        col2im_add(&dcols, geom, dxi);
                    }
                });
            }
        }
        if want_w {
            grads.add(self.w, &dw);
        }
    }
}

impl ConvRecord {
    fn shifted_backward(&self, ctx: &BackwardCtx<'_>, g: &[f32], grads: &mut Grads) {
        let geom = &self.geom;
        let xv = ctx.value(self.x).data();
        let wv = ctx.value(self.w).data();
        let (hp, wp) = geom.padded();
        let (kk, nw, ncols) = (geom.kh * geom.kw, geom.wide_cols(), geom.cols());
        let in_item = geom.in_c * geom.in_h * geom.in_w;
        let out_item = geom.out_c * ncols;
        let batch = g.len() / out_item;
        let (want_w, want_x) = (grads.wants(self.w), grads.wants(self.x));
        let mut gwide = vec![0.0f32; geom.out_c * nw];
        let mut xpad = if want_w { vec![0.0f32; geom.in_c * hp * wp] } else { Vec::new() };
        let mut dxpad = if want_x { vec![0.0f32; geom.in_c * hp * wp] } else { Vec::new() };
        let per_tap = geom.out_c * geom.in_c;
        let mut dwt = if want_w { vec![0.0f32; kk * per_tap] } else { Vec::new() };
        let wt = if want_x { tap_major(wv, geom) } else { Vec::new() };
        let plane = hp * wp;
        for n in 0..batch {
            let gi = &g[n * out_item..(n + 1) * out_item];
            // garbage columns of gwide stay zero
            for (dst, src) in gwide.chunks_exact_mut(nw).zip(gi.chunks_exact(ncols)) {
                for (y, line) in src.chunks_exact(geom.out_w).enumerate() {
                    dst[y * wp..y * wp + geom.out_w].copy_from_slice(line);
                }
            }
            if want_w {
                pad_into(&xv[n * in_item..(n + 1) * in_item], geom, &mut xpad);
                for (tap, off) in geom.taps() {
                    // dW_tap += dY · shift(xpad)ᵀ
                    let b = Mat::new(&xpad[off..], plane).t();
                    let c = &mut dwt[tap * per_tap..(tap + 1) * per_tap];
                    gemm(geom.out_c, nw, geom.in_c, Mat::new(&gwide, nw), b, 1.0, c, geom.in_c);
                }
            }
            if want_x {
                dxpad.fill(0.0);
                for (tap, off) in geom.taps() {
                    // shift(dxpad) += W_tapᵀ · dY
                    let a = Mat::new(&wt[tap * per_tap..(tap + 1) * per_tap], geom.in_c).t();
                    gemm(geom.in_c, geom.out_c, nw, a, Mat::new(&gwide, nw), 1.0, &mut dxpad[off..], plane);
                }
                let p = geom.cfg.padding;
                grads.accumulate(self.x, |dx| {
                    let dxi = &mut dx[n * in_item..(n + 1) * in_item];
                    for (dst, src) in dxi.chunks_exact_mut(geom.in_h * geom.in_w).zip(dxpad.chunks_exact(hp * wp)) {
                        for (y, line) in dst.chunks_exact_mut(geom.in_w).enumerate() {
                            let at = (y + p) * wp + p;
                            line.iter_mut().zip(&src[at..at + geom.in_w]).for_each(|(d, s)| *d += s);
                        }
                    }
                });
            }
        }
        if want_w {
            grads.accumulate(self.w, |dw| {
                for (oc_ic, taps) in dw.chunks_exact_mut(kk).enumerate() {
                    for (tap, d) in taps.iter_mut().enumerate() {
                        *d += dwt[tap * per_tap + oc_ic];
                    }
                }
            });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(x: &Tensor, w: &Tensor, cfg: Conv2dConfig) -> Tensor {
        let (xs, ws) = (x.shape(), w.shape());
        let oh = cfg.out_extent(xs.h, ws.h).unwrap();
        let ow = cfg.out_extent(xs.w, ws.w).unwrap();
        let mut out = Vec::new();
        for n in 0..xs.n {
            for o in 0..ws.n {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = 0.0f64;
                        for c in 0..xs.c {
                            for ky in 0..ws.h {
                                for kx in 0..ws.w {
                                    let iy = (oy * cfg.stride + ky * cfg.dilation) as isize - cfg.padding as isize;
                                    let ix = (ox * cfg.stride + kx * cfg.dilation) as isize - cfg.padding as isize;
                                    if iy < 0 || ix < 0 || iy >= xs.h as isize || ix >= xs.w as isize {
                                        continue;
                                    }
                                    acc += (x.at(n, c, iy as usize, ix as usize) * w.at(o, c, ky, kx)) as f64;
                                }
                            }
                        }
                        out.push(acc as f32);
                    }
                }
            }
        }
        Tensor::from_vec(Shape::new(xs.n, ws.n, oh, ow), out).unwrap()
    }

    fn ramp(shape: Shape, scale: f32) -> Tensor {
        let data = (0..shape.numel()).map(|i| ((i * 37 % 101) as f32 / 101.0 - 0.5) * scale).collect();
        Tensor::from_vec(shape, data).unwrap()
    }

    #[test]
    fn identity_kernel() {
        let mut tape = Tape::new();
        let x = ramp(Shape::new(1, 1, 3, 3), 1.0);
        let xv = tape.leaf(x.clone());
        let w = tape.leaf(Tensor::full(Shape::new(1, 1, 1, 1), 1.0));
        let y = tape.conv2d(xv, w, None, Conv2dConfig::default()).unwrap();
        assert_eq!(tape.value(y).data(), x.data());
    }

    #[test]
    fn overlap_counts() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::full(Shape::new(1, 1, 4, 4), 1.0));
        let w = tape.leaf(Tensor::full(Shape::new(1, 1, 3, 3), 1.0));
        let cfg = Conv2dConfig { stride: 2, padding: 1, dilation: 1 };
        let y = tape.conv2d(x, w, None, cfg).unwrap();
        assert_eq!(tape.shape(y), Shape::new(1, 1, 2, 2));
        assert_eq!(tape.value(y).data(), &[4.0, 6.0, 6.0, 9.0]);
    }

    #[test]
    fn matches_naive_reference() {
        let configs = [
            Conv2dConfig::default(),
            Conv2dConfig::same(3, 1),
            Conv2dConfig::down(3),
            Conv2dConfig::same(3, 2),
            Conv2dConfig::same(3, 8),
            Conv2dConfig { stride: 3, padding: 2, dilation: 2 },
        ];
        for cfg in configs {
            let k = if cfg == Conv2dConfig::default() { 1 } else { 3 };
            let x = ramp(Shape::new(2, 3, 9, 7), 2.0);
            let w = ramp(Shape::new(4, 3, k, k), 1.0);
            let mut tape = Tape::new();
            let (xv, wv) = (tape.leaf(x.clone()), tape.leaf(w.clone()));
            let y = tape.conv2d(xv, wv, None, cfg).unwrap();
            let expect = naive(&x, &w, cfg);
            assert_eq!(tape.shape(y), expect.shape(), "{cfg:?}");
            for (a, b) in tape.value(y).data().iter().zip(expect.data()) {
                assert!((a - b).abs() < 1e-5, "{cfg:?}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn channel_mismatch_names_both() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::zeros(Shape::new(1, 2, 4, 4)));
        let w = tape.leaf(Tensor::zeros(Shape::new(1, 3, 3, 3)));
        let err = tape.conv2d(x, w, None, Conv2dConfig::same(3, 1)).unwrap_err();
        let msg = alloc::string::ToString::to_string(&err);
        assert!(msg.contains("2 channels") && msg.contains("inC = 3"), "{msg}");
    }

    #[test]
    fn same_padding_preserves_extent() {
        for k in [1, 3, 5, 7] {
            let cfg = Conv2dConfig::same(k, 1);
            assert_eq!(cfg.out_extent(13, k), Some(13));
        }
    }
}
