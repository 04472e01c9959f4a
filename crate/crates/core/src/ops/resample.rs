//! Bilinear 2× upsampling (half-pixel centers, edge clamped).

use alloc::vec;
use alloc::vec::Vec;

use crate::tape::{BackwardCtx, Grads, Op, Tape, Var};
use crate::tensor::{Shape, Tensor};

/// Source taps for each output position along one axis: `(i0, i1, w1)` with
/// value `(1 - w1)·src[i0] + w1·src[i1]`.
fn taps(len: usize) -> Vec<(usize, usize, f32)> {
    (0..2 * len)
        .map(|o| {
            let src = ((o as f32 + 0.5) * 0.5 - 0.5).max(0.0);
            let i0 = (libm::floorf(src) as usize).min(len - 1);
            let i1 = (i0 + 1).min(len - 1);
            (i0, i1, src - i0 as f32)
        })
        .collect()
}

pub(crate) struct UpsampleRecord {
    x: Var,
}

impl Tape {
    pub fn upsample_bilinear2x(&mut self, x: Var) -> Var {
        let xt = self.value(x);
        let s = xt.shape();
        let out_shape = Shape::new(s.n, s.c, 2 * s.h, 2 * s.w);
        let (ty, tx) = (taps(s.h), taps(s.w));
        let src = xt.data();
        let mut out = vec![0.0f32; out_shape.numel()];
        let (ow, oplane) = (out_shape.w, out_shape.plane());
        for p in 0..s.n * s.c {
            let sp = &src[p * s.plane()..(p + 1) * s.plane()];
            let dp = &mut out[p * oplane..(p + 1) * oplane];
            for (oy, &(y0, y1, wy)) in ty.iter().enumerate() {
                let (r0, r1) = (&sp[y0 * s.w..(y0 + 1) * s.w], &sp[y1 * s.w..(y1 + 1) * s.w]);
                for (ox, &(x0, x1, wx)) in tx.iter().enumerate() {
                    let top = r0[x0] + wx * (r0[x1] - r0[x0]);
                    let bot = r1[x0] + wx * (r1[x1] - r1[x0]);
                    dp[oy * ow + ox] = top + wy * (bot - top);
                }
            }
        }
        let value = Tensor::from_vec(out_shape, out).expect("shape computed");
        self.push(value, &[x], || Op::Upsample2x(UpsampleRecord { x }))
    }
}

impl UpsampleRecord {
    pub(crate) fn backward(&self, ctx: &BackwardCtx<'_>, g: &[f32], grads: &mut Grads) {
        let s = ctx.value(self.x).shape();
        let (ty, tx) = (taps(s.h), taps(s.w));
        let (ow, oplane) = (2 * s.w, 4 * s.plane());
        grads.accumulate(self.x, |dx| {
            for p in 0..s.n * s.c {
                let gp = &g[p * oplane..(p + 1) * oplane];
                let dp = &mut dx[p * s.plane()..(p + 1) * s.plane()];
                for (oy, &(y0, y1, wy)) in ty.iter().enumerate() {
                    for (ox, &(x0, x1, wx)) in tx.iter().enumerate() {
                        let v = gp[oy * ow + ox];
                        let (top, bot) = (v * (1.0 - wy), v * wy);
                        dp[y0 * s.w + x0] += top * (1.0 - wx);
                        dp[y0 * s.w + x1] += top * wx;
                        dp[y1 * s.w + x0] += bot * (1.0 - wx);
                        dp[y1 * s.w + x1] += bot * wx;
                    }
                }
            }
        });
    }
}
