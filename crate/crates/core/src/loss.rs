//! Training objective built on the tape.
//!
//! Shadow is handled as a non-negative magnitude `|e⁻|` everywhere here,
//! matching the network's ReLU outputs.

use crate::error::Result;
use crate::ops::elementwise::Axis;
use crate::tape::{Tape, Var};

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct LossWeights {
    pub gamma_smse: f32,
    pub gamma_mse: f32,
    pub w_rho: f32,
    pub w_imf: f32,
    pub w_is: f32,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { gamma_smse: 0.95, gamma_mse: 0.05, w_rho: 1.0 / 3.0, w_imf: 0.01, w_is: 0.1 }
    }
}

/// Unweighted term values of one evaluation of the objective.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LossBreakdown {
    pub rho_u: f64,
    pub rho_amb: f64,
    pub rho_shad: f64,
    pub su: f64,
    pub amb: f64,
    pub shad: f64,
    pub imf: f64,
    pub is: f64,
    pub refine_l1: f64,
    pub refine_grad: f64,
    pub total: f64,
}

impl LossBreakdown {
    /// Recomputes the total from the individual terms.
    pub fn weighted_total(&self, w: &LossWeights) -> f64 {
        w.w_rho as f64 * (self.rho_u + self.rho_amb + self.rho_shad)
            + self.su
            + self.amb
            + self.shad
            + w.w_imf as f64 * self.imf
            + w.w_is as f64 * self.is
            + self.refine_l1
            + self.refine_grad
    }
}

fn squared_error(tape: &mut Tape, a: Var, b: Var) -> Result<Var> {
    let d = tape.sub(a, b)?;
    let sq = tape.mul(d, d)?;
    Ok(tape.mean(sq))
}

/// Per-image least-squares scaled MSE, averaged over the batch. The scale
/// `α = Σ pred·gt / Σ pred²` is differentiated through; α is 0 for an
/// all-zero prediction.
pub fn smse(tape: &mut Tape, pred: Var, gt: Var) -> Result<Var> {
    let pp = tape.mul(pred, pred)?;
    let pg = tape.mul(pred, gt)?;
    let den = tape.sum_per_sample(pp);
    let num = tape.sum_per_sample(pg);
    let alpha = tape.safe_div(num, den)?;
    let scaled = tape.scale_per_sample(alpha, pred)?;
    squared_error(tape, scaled, gt)
}

pub fn mse(tape: &mut Tape, pred: Var, gt: Var) -> Result<Var> {
    squared_error(tape, pred, gt)
}

fn weighted_sum(tape: &mut Tape, terms: &[(Var, f32)]) -> Result<Var> {
    let mut acc: Option<Var> = None;
    for &(v, w) in terms {
        let t = tape.scale(v, w);
        acc = Some(match acc {
            Some(a) => tape.add(a, t)?,
            None => t,
        });
    }
    Ok(acc.expect("at least one term"))
}

/// `γ_SMSE·SMSE + γ_MSE·MSE`.
pub fn combined_loss(tape: &mut Tape, pred: Var, gt: Var, w: &LossWeights) -> Result<Var> {
    let s = smse(tape, pred, gt)?;
    let m = mse(tape, pred, gt)?;
    weighted_sum(tape, &[(s, w.gamma_smse), (m, w.gamma_mse)])
}

/// `MSE(ρ ⊙ s_u, I)` with 1-channel shading broadcast over color.
pub fn imf_loss(tape: &mut Tape, rho: Var, s_u: Var, image: Var) -> Result<Var> {
    let recon = tape.mul_channels(rho, s_u)?;
    squared_error(tape, recon, image)
}

/// `MSE(s_u − e⁺ + |e⁻|, s_d)`.
pub fn is_loss(tape: &mut Tape, s_u: Var, ambient: Var, shadow_mag: Var, gt_direct: Var) -> Result<Var> {
    let t = tape.sub(s_u, ambient)?;
    let direct = tape.add(t, shadow_mag)?;
    squared_error(tape, direct, gt_direct)
}

/// Network predictions consumed by [`generator_loss`].
#[derive(Clone, Copy, Debug)]
pub struct Predictions {
    pub rho_u: Var,
    pub rho_amb: Var,
    pub rho_shad: Var,
    pub s_u: Var,
    pub ambient: Var,
    pub shadow_mag: Var,
}

/// Ground-truth layers; `shadow_mag` is `|e⁻|`.
#[derive(Clone, Copy, Debug)]
pub struct Targets {
    pub image: Var,
    pub reflectance: Var,
    pub shading_unified: Var,
    pub ambient: Var,
    pub shadow_mag: Var,
    pub shading_direct: Var,
}

/// Weighted sum of the branch reflectance, shading-component, IMF and IS
/// terms. The IMF term pairs the unified-branch reflectance with `s_u`.
pub fn generator_loss(tape: &mut Tape, p: &Predictions, t: &Targets, w: &LossWeights) -> Result<(Var, LossBreakdown)> {
    let rho_u = combined_loss(tape, p.rho_u, t.reflectance, w)?;
    let rho_amb = combined_loss(tape, p.rho_amb, t.reflectance, w)?;
    let rho_shad = combined_loss(tape, p.rho_shad, t.reflectance, w)?;
    let su = combined_loss(tape, p.s_u, t.shading_unified, w)?;
    let amb = combined_loss(tape, p.ambient, t.ambient, w)?;
    let shad = combined_loss(tape, p.shadow_mag, t.shadow_mag, w)?;
    let imf = imf_loss(tape, p.rho_u, p.s_u, t.image)?;
    let is = is_loss(tape, p.s_u, p.ambient, p.shadow_mag, t.shading_direct)?;
    let total = weighted_sum(
        tape,
        &[
            (rho_u, w.w_rho),
            (rho_amb, w.w_rho),
            (rho_shad, w.w_rho),
            (su, 1.0),
            (amb, 1.0),
            (shad, 1.0),
            (imf, w.w_imf),
            (is, w.w_is),
        ],
    )?;
    let v = |v: Var| tape.value(v).item() as f64;
    let breakdown = LossBreakdown {
        rho_u: v(rho_u),
        rho_amb: v(rho_amb),
        rho_shad: v(rho_shad),
        su: v(su),
        amb: v(amb),
        shad: v(shad),
        imf: v(imf),
        is: v(is),
        refine_l1: 0.0,
        refine_grad: 0.0,
        total: v(total),
    };
    Ok((total, breakdown))
}

/// Mean absolute error plus mean squared error of horizontal and vertical
/// forward differences. Returns `(total, l1, gradient term)`.
pub fn refinement_loss(tape: &mut Tape, rho_final: Var, rho_gt: Var) -> Result<(Var, Var, Var)> {
    let d = tape.sub(rho_final, rho_gt)?;
    let ad = tape.abs(d);
    let l1 = tape.mean(ad);
    let mut grad_terms = [l1; 2];
    for (slot, axis) in grad_terms.iter_mut().zip([Axis::Width, Axis::Height]) {
        let dp = tape.diff(rho_final, axis);
        let dg = tape.diff(rho_gt, axis);
        *slot = if tape.shape(dp).numel() == 0 {
            tape.scale(l1, 0.0)
        } else {
            squared_error(tape, dp, dg)?
        };
    }
    let grad = tape.add(grad_terms[0], grad_terms[1])?;
    let total = tape.add(l1, grad)?;
    Ok((total, l1, grad))
}

/// Generator plus refinement objective, with the refinement terms folded
/// into the breakdown.
pub fn training_loss(
    tape: &mut Tape,
    p: &Predictions,
    rho_final: Var,
    t: &Targets,
    w: &LossWeights,
) -> Result<(Var, LossBreakdown)> {
    let (gen, mut breakdown) = generator_loss(tape, p, t, w)?;
    let (refine, l1, grad) = refinement_loss(tape, rho_final, t.reflectance)?;
    let total = tape.add(gen, refine)?;
    breakdown.refine_l1 = tape.value(l1).item() as f64;
    breakdown.refine_grad = tape.value(grad).item() as f64;
    breakdown.total = tape.value(total).item() as f64;
    Ok((total, breakdown))
}
