//! Evaluation metrics. All accumulation is in f64.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::map::Map;

/// Default LMSE window; windows step by half their size.
pub const LMSE_WINDOW: usize = 20;
/// Default WHDR ratio threshold.
pub const WHDR_DELTA: f64 = 0.1;

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

/// Validity weights per entry; a 1-channel mask broadcasts over channels.
fn mask_weights(j: &Map, mask: Option<&Map>) -> Result<Option<Vec<bool>>> {
    let Some(m) = mask else { return Ok(None) };
    j.check_spatial(m, "mask")?;
    if m.channels() != 1 && m.channels() != j.channels() {
        return Err(Error::shape("mask", alloc::format!("{} mask channels for {} map channels", m.channels(), j.channels())));
    }
    let plane = j.plane();
    let valid = (0..j.data().len())
        .map(|i| if m.channels() == 1 { m.data()[i % plane] > 0.5 } else { m.data()[i] > 0.5 })
        .collect();
    Ok(Some(valid))
}

struct Sums {
    jj: f64,
    jt: f64,
    tt: f64,
    n: usize,
}

fn sums(j: &Map, truth: &Map, mask: Option<&Map>, op: &'static str) -> Result<Sums> {
    j.check_dims(truth, op)?;
    let valid = mask_weights(j, mask)?;
    let mut s = Sums { jj: 0.0, jt: 0.0, tt: 0.0, n: 0 };
    for (i, (&a, &b)) in j.data().iter().zip(truth.data()).enumerate() {
        if valid.as_ref().map_or(true, |v| v[i]) {
            let (a, b) = (a as f64, b as f64);
            s.jj += a * a;
            s.jt += a * b;
            s.tt += b * b;
            s.n += 1;
        }
    }
    if s.n == 0 {
        return Err(Error::EmptyMask);
    }
    Ok(s)
}

/// Mean squared error over valid pixel·channel entries.
pub fn mse(j: &Map, truth: &Map, mask: Option<&Map>) -> Result<f64> {
    let s = sums(j, truth, mask, "mse")?;
    Ok(((s.jj - 2.0 * s.jt + s.tt) / s.n as f64).max(0.0))
}

fn direct_mse(j: &[f32], truth: &[f32], alpha: f64) -> f64 {
    j.iter()
        .zip(truth)
        .map(|(&a, &b)| {
            let d = alpha * a as f64 - b as f64;
            d * d
        })
        .sum::<f64>()
        / j.len() as f64
}

/// Least-squares scale `α = Σ J·Ĵ / Σ J·J`, 0 when the prediction is zero.
pub fn scale_factor(j: &Map, truth: &Map, mask: Option<&Map>) -> Result<f64> {
    let s = sums(j, truth, mask, "scale_factor")?;
    Ok(if s.jj > 0.0 { s.jt / s.jj } else { 0.0 })
}

/// Scale-invariant MSE: `mse(αJ, Ĵ)` with one α per image over all channels.
pub fn smse(j: &Map, truth: &Map, mask: Option<&Map>) -> Result<f64> {
    let valid = mask_weights(j, mask)?;
    j.check_dims(truth, "smse")?;
    let (a, b): (Vec<f32>, Vec<f32>) = j
        .data()
        .iter()
        .zip(truth.data())
        .enumerate()
        .filter(|(i, _)| valid.as_ref().map_or(true, |v| v[*i]))
        .map(|(_, (&a, &b))| (a, b))
        .unzip();
    if a.is_empty() {
        return Err(Error::EmptyMask);
    }
    Ok(smse_slices(&a, &b))
}

fn smse_slices(j: &[f32], truth: &[f32]) -> f64 {
    let (mut jj, mut jt) = (0.0f64, 0.0f64);
    for (&a, &b) in j.iter().zip(truth) {
        jj += a as f64 * a as f64;
        jt += a as f64 * b as f64;
    }
    let alpha = if jj > 0.0 { jt / jj } else { 0.0 };
    direct_mse(j, truth, alpha)
}

/// Window origins along one axis: full windows at stride `window / 2`, or a
/// single span covering the whole axis when it is shorter than the window.
fn window_starts(extent: usize, window: usize) -> (Vec<usize>, usize) {
    if extent < window {
        return (alloc::vec![0], extent);
    }
    let stride = (window / 2).max(1);
    ((0..=extent - window).step_by(stride).collect(), window)
}

/// Sum of per-window SMSE and the number of windows.
pub fn lmse_windows(j: &Map, truth: &Map, window: usize) -> Result<(f64, usize)> {
    j.check_dims(truth, "lmse")?;
    if window == 0 {
        return Err(Error::invalid("lmse", "window must be positive"));
    }
    let (ys, wh) = window_starts(j.height(), window);
    let (xs, ww) = window_starts(j.width(), window);
    let mut total = 0.0;
    let mut a = Vec::with_capacity(j.channels() * wh * ww);
    let mut b = Vec::with_capacity(a.capacity());
    for &y0 in &ys {
        for &x0 in &xs {
            a.clear();
            b.clear();
            for c in 0..j.channels() {
                for y in y0..y0 + wh {
                    for x in x0..x0 + ww {
                        a.push(j.get(c, y, x));
                        b.push(truth.get(c, y, x));
                    }
                }
            }
            total += smse_slices(&a, &b);
        }
    }
    Ok((total, ys.len() * xs.len()))
}

/// Local SMSE: the mean SMSE over half-overlapping `window × window` tiles,
/// each tile scaled independently.
pub fn lmse(j: &Map, truth: &Map, window: usize) -> Result<f64> {
    let (sum, count) = lmse_windows(j, truth, window)?;
    Ok(sum / count as f64)
}

fn gaussian(size: usize) -> Vec<f64> {
    let mid = (size / 2) as f64;
    let g: Vec<f64> = (0..size)
        .map(|i| {
            let x = i as f64 - mid;
            libm::exp(-x * x / (2.0 * SSIM_SIGMA * SSIM_SIGMA))
        })
        .collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

/// Mean SSIM of one channel over all fully-contained window positions.
fn ssim_channel(a: &[f32], b: &[f32], h: usize, w: usize, kernel: &[f64]) -> f64 {
    let k = kernel.len();
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let mut total = 0.0;
    let mut count = 0usize;
    for y0 in 0..=h - k {
        for x0 in 0..=w - k {
            let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for dy in 0..k {
                for dx in 0..k {
                    let wt = kernel[dy] * kernel[dx];
                    let i = (y0 + dy) * w + x0 + dx;
                    let (va, vb) = (a[i] as f64, b[i] as f64);
                    ma += wt * va;
                    mb += wt * vb;
                    saa += wt * va * va;
                    sbb += wt * vb * vb;
                    sab += wt * va * vb;
                }
            }
            let (va, vb, cov) = (saa - ma * ma, sbb - mb * mb, sab - ma * mb);
            total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            count += 1;
        }
    }
    total / count as f64
}

/// Structural dissimilarity `(1 − SSIM) / 2` in [0, 1], SSIM averaged over
/// channels. The Gaussian window shrinks to the largest odd size that fits.
pub fn dssim(j: &Map, truth: &Map) -> Result<f64> {
    j.check_dims(truth, "dssim")?;
    let (h, w) = (j.height(), j.width());
    if h == 0 || w == 0 {
        return Err(Error::invalid("dssim", "empty map"));
    }
    let mut k = SSIM_WINDOW.min(h).min(w);
    if k % 2 == 0 {
        k -= 1;
    }
    let kernel = gaussian(k);
    let ssim = (0..j.channels()).map(|c| ssim_channel(j.channel(c), truth.channel(c), h, w, &kernel)).sum::<f64>()
        / j.channels() as f64;
    Ok(((1.0 - ssim) / 2.0).clamp(0.0, 1.0))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Darker {
    First,
    Second,
    Equal,
}

/// One pairwise lightness judgment; points are `(row, col)`.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PairJudgment {
    pub point1: (usize, usize),
    pub point2: (usize, usize),
    pub darker: Darker,
    pub weight: f64,
}

fn lightness(map: &Map, (row, col): (usize, usize)) -> f64 {
    (0..map.channels()).map(|c| map.get(c, row, col) as f64).sum::<f64>() / map.channels() as f64
}

/// The relation a reflectance map predicts between two lightness values.
pub fn judge(l1: f64, l2: f64, delta: f64) -> Darker {
    let threshold = 1.0 / (1.0 + delta);
    match (l1 > 0.0, l2 > 0.0) {
        (false, false) => Darker::Equal,
        (false, true) => Darker::First,
        (true, false) => Darker::Second,
        (true, true) if l1 / l2 < threshold => Darker::First,
        (true, true) if l2 / l1 < threshold => Darker::Second,
        _ => Darker::Equal,
    }
}

/// Weighted disagreement rate between a reflectance map and judgments.
pub fn whdr(reflectance: &Map, judgments: &[PairJudgment], delta: f64) -> Result<f64> {
    if judgments.is_empty() {
        return Err(Error::invalid("whdr", "no judgments"));
    }
    let (h, w) = (reflectance.height(), reflectance.width());
    let mut wrong = 0.0;
    let mut total = 0.0;
    for jd in judgments {
        if !(jd.weight > 0.0) {
            return Err(Error::invalid("whdr", "judgment weight must be positive"));
        }
        for p in [jd.point1, jd.point2] {
            if p.0 >= h || p.1 >= w {
                return Err(Error::invalid("whdr", alloc::format!("point {p:?} outside {h}x{w}")));
            }
        }
        let predicted = judge(lightness(reflectance, jd.point1), lightness(reflectance, jd.point2), delta);
        if predicted != jd.darker {
            wrong += jd.weight;
        }
        total += jd.weight;
    }
    Ok(wrong / total)
}

/// Every per-image score for one component.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ImageScores {
    pub mse: f64,
    pub smse: f64,
    pub lmse: f64,
    pub dssim: f64,
    pub lmse_window_sum: f64,
    pub lmse_windows: usize,
}

pub fn score(j: &Map, truth: &Map) -> Result<ImageScores> {
    let (lmse_window_sum, lmse_windows) = lmse_windows(j, truth, LMSE_WINDOW)?;
    Ok(ImageScores {
        mse: mse(j, truth, None)?,
        smse: smse(j, truth, None)?,
        lmse: lmse_window_sum / lmse_windows as f64,
        dssim: dssim(j, truth)?,
        lmse_window_sum,
        lmse_windows,
    })
}

/// Dataset averages for one component. `lmse` averages per-image values;
/// `lmse_pooled` averages over every window of every image.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ComponentScores {
    pub mse: f64,
    pub smse: f64,
    pub lmse: f64,
    pub lmse_pooled: f64,
    pub dssim: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MetricReport {
    pub components: BTreeMap<String, ComponentScores>,
    pub whdr: Option<f64>,
    pub n_images: usize,
}

/// Collects per-image scores in insertion order and averages them.
#[derive(Clone, Debug, Default)]
pub struct ReportBuilder {
    scores: BTreeMap<String, Vec<ImageScores>>,
    whdr: Vec<f64>,
    n_images: usize,
}

impl ReportBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, component: &str, scores: ImageScores) {
        self.scores.entry(String::from(component)).or_default().push(scores);
    }

    pub fn add_whdr(&mut self, value: f64) {
        self.whdr.push(value);
    }

    /// Counts one evaluated image.
    pub fn finish_image(&mut self) {
        self.n_images += 1;
    }

    pub fn per_image(&self, component: &str) -> &[ImageScores] {
        self.scores.get(component).map_or(&[], |v| v.as_slice())
    }

    pub fn build(&self) -> MetricReport {
        let components = self
            .scores
            .iter()
            .map(|(name, list)| {
                let n = list.len() as f64;
                let mean = |f: fn(&ImageScores) -> f64| list.iter().map(f).sum::<f64>() / n;
                let windows: usize = list.iter().map(|s| s.lmse_windows).sum();
                let scores = ComponentScores {
                    mse: mean(|s| s.mse),
                    smse: mean(|s| s.smse),
                    lmse: mean(|s| s.lmse),
                    lmse_pooled: list.iter().map(|s| s.lmse_window_sum).sum::<f64>() / windows as f64,
                    dssim: mean(|s| s.dssim),
                };
                (name.clone(), scores)
            })
            .collect();
        let whdr = (!self.whdr.is_empty()).then(|| self.whdr.iter().sum::<f64>() / self.whdr.len() as f64);
        MetricReport { components, whdr, n_images: self.n_images }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn row(values: &[f32]) -> Map {
        Map::from_vec(1, 1, values.len(), values.to_vec()).unwrap()
    }

    #[test]
    fn mse_hand_case() {
        assert_eq!(mse(&row(&[0.0, 1.0]), &row(&[1.0, 1.0]), None).unwrap(), 0.5);
        assert_eq!(mse(&row(&[0.3, 0.7]), &row(&[0.3, 0.7]), None).unwrap(), 0.0);
    }

    #[test]
    fn empty_mask_rejected() {
        let m = row(&[0.0, 0.0]);
        assert!(matches!(mse(&row(&[1.0, 2.0]), &row(&[1.0, 2.0]), Some(&m)), Err(Error::EmptyMask)));
        assert!(matches!(smse(&row(&[1.0, 2.0]), &row(&[1.0, 2.0]), Some(&m)), Err(Error::EmptyMask)));
    }

    #[test]
    fn mask_restricts_entries() {
        let m = row(&[1.0, 0.0]);
        assert_eq!(mse(&row(&[1.0, 5.0]), &row(&[1.0, 0.0]), Some(&m)).unwrap(), 0.0);
    }

    #[test]
    fn smse_hand_case() {
        let (j, t) = (row(&[1.0, 1.0]), row(&[0.0, 2.0]));
        assert_eq!(scale_factor(&j, &t, None).unwrap(), 1.0);
        assert_eq!(smse(&j, &t, None).unwrap(), 1.0);
    }

    #[test]
    fn smse_zero_prediction_uses_zero_scale() {
        let t = row(&[0.5, 1.0]);
        assert_eq!(smse(&row(&[0.0, 0.0]), &t, None).unwrap(), mse(&row(&[0.0, 0.0]), &t, None).unwrap());
    }

    #[test]
    fn lmse_small_image_uses_one_window() {
        let (j, t) = (row(&[1.0, 2.0, 3.0]), row(&[2.0, 4.0, 6.0]));
        assert_eq!(lmse_windows(&j, &t, 20).unwrap().1, 1);
        assert!(lmse(&j, &t, 20).unwrap() < 1e-12);
    }

    #[test]
    fn window_tiling() {
        assert_eq!(window_starts(40, 20), (vec![0, 10, 20], 20));
        assert_eq!(window_starts(64, 20), (vec![0, 10, 20, 30, 40], 20));
        assert_eq!(window_starts(12, 20), (vec![0], 12));
    }

    #[test]
    fn judge_cases() {
        assert_eq!(judge(0.5, 1.0, 0.1), Darker::First);
        assert_eq!(judge(1.0, 0.5, 0.1), Darker::Second);
        assert_eq!(judge(1.0, 1.05, 0.1), Darker::Equal);
        assert_eq!(judge(0.0, 0.2, 0.1), Darker::First);
        assert_eq!(judge(0.0, 0.0, 0.1), Darker::Equal);
    }

    #[test]
    fn builder_averages() {
        let mut b = ReportBuilder::new();
        let s = |v: f64| ImageScores { mse: v, smse: v, lmse: v, dssim: v, lmse_window_sum: v, lmse_windows: 1 };
        b.add("x", s(1.0));
        b.add("x", s(3.0));
        b.finish_image();
        b.finish_image();
        let r = b.build();
        assert_eq!(r.components["x"].smse, 2.0);
        assert_eq!(r.components["x"].lmse_pooled, 2.0);
        assert_eq!(r.n_images, 2);
        assert_eq!(r.whdr, None);
    }
}
