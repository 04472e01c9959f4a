//! Single-image inference at arbitrary extents.

use std::fs;
use std::path::{Path, PathBuf};

use shadingnet_core::net::{ShadingNet, DOWNSAMPLE};
use shadingnet_core::Map;

use crate::error::{LabError, Result};
use crate::eval::decompose_batch;
use crate::{f32map, imageio};

/// Index into `0..n` after mirroring about the edges without repeating them
/// (`… 2 1 | 0 1 2 … n−1 | n−2 …`).
pub fn reflect(i: usize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let r = i % period;
    if r < n {
        r
    } else {
        period - r
    }
}

/// Extends the bottom and right edges by reflection up to the next multiple
/// of `multiple`.
pub fn reflect_pad(map: &Map, multiple: usize) -> Map {
    let up = |v: usize| v.div_ceil(multiple) * multiple;
    let (c, h, w) = map.dims();
    Map::from_fn(c, up(h), up(w), |ch, y, x| map.get(ch, reflect(y, h), reflect(x, w)))
}

/// Output layers written by [`decompose_image`]; `shadow` is ≤ 0.
pub const OUTPUTS: [&str; 5] = ["rho_final", "s_u", "ambient", "shadow", "shading_direct"];

/// Decomposes the image at `image_path`, writing each layer of [`OUTPUTS`]
/// as `.f32` and as a min-max normalized preview PNG. Returns the written
/// `.f32` paths.
pub fn decompose_image(net: &mut ShadingNet, image_path: &Path, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let image = imageio::read_rgb(image_path)?;
    let (h, w) = (image.height(), image.width());
    let padded = reflect_pad(&image, DOWNSAMPLE);
    let d = decompose_batch(net, &[&padded])?.remove(0);
    let crop = |m: &Map| m.crop(0, 0, h, w);
    let maps = [
        crop(&d.rho_final),
        crop(&d.s_u),
        crop(&d.ambient),
        crop(&d.shadow_mag).map(|v| -v),
        crop(&d.direct()),
    ];
    fs::create_dir_all(out_dir).map_err(|e| LabError::io(out_dir, e))?;
    let mut written = Vec::new();
    for (name, map) in OUTPUTS.iter().zip(&maps) {
        let path = out_dir.join(format!("{name}.f32"));
        f32map::write(&path, map)?;
        imageio::write_preview(&out_dir.join(format!("{name}.png")), map)?;
        written.push(path);
    }
    Ok(written)
}
