//! 8-bit PNG input and preview output.

use std::path::Path;

use image::{GrayImage, RgbImage};
use shadingnet_core::Map;

use crate::error::{LabError, Result};

/// Maps [0, 1] to 0..=255 with rounding; out-of-range values saturate.
pub fn to_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn from_u8(v: u8) -> f32 {
    v as f32 / 255.0
}

/// Reads any decodable image as a 3-channel map in [0, 1].
pub fn read_rgb(path: &Path) -> Result<Map> {
    let img = image::open(path).map_err(|e| LabError::Image { path: path.into(), source: e })?.to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    Ok(Map::from_fn(3, h, w, |c, y, x| from_u8(img.get_pixel(x as u32, y as u32)[c])))
}

fn save(path: &Path, result: image::ImageResult<()>) -> Result<()> {
    result.map_err(|e| LabError::Image { path: path.into(), source: e })
}

/// Writes a 3-channel map in [0, 1] as 8-bit RGB.
pub fn write_rgb(path: &Path, map: &Map) -> Result<()> {
    assert_eq!(map.channels(), 3, "write_rgb needs 3 channels");
    let (h, w) = (map.height() as u32, map.width() as u32);
    let img = RgbImage::from_fn(w, h, |x, y| {
        image::Rgb(core::array::from_fn(|c| to_u8(map.get(c, y as usize, x as usize))))
    });
    save(path, img.save(path))
}

/// Min-max normalizes across all channels and writes gray (1 channel) or
/// RGB (3 channels). A constant map becomes black.
pub fn write_preview(path: &Path, map: &Map) -> Result<()> {
    let (lo, hi) = map.data().iter().fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let span = hi - lo;
    let norm = |v: f32| if span > 0.0 { to_u8((v - lo) / span) } else { 0 };
    let (h, w) = (map.height() as u32, map.width() as u32);
    match map.channels() {
        1 => {
            let img = GrayImage::from_fn(w, h, |x, y| image::Luma([norm(map.get(0, y as usize, x as usize))]));
            save(path, img.save(path))
        }
        3 => {
            let img = RgbImage::from_fn(w, h, |x, y| {
                image::Rgb(core::array::from_fn(|c| norm(map.get(c, y as usize, x as usize))))
            });
            save(path, img.save(path))
        }
        c => Err(LabError::Data(format!("cannot preview a {c}-channel map"))),
    }
}
