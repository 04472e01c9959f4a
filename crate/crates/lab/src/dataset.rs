//! On-disk synthetic datasets.
//!
//! ```text
//! <root>/manifest.json
//! <root>/sample_000000/composite.png     8-bit RGB network input
//! <root>/sample_000000/composite.f32     exact composite
//! <root>/sample_000000/<layer>.f32       reflectance, shading_unified,
//!                                        shading_direct, ambient, shadow,
//!                                        normals, mask
//! ```
//!
//! Every sample is its own scene, so splitting by sample is splitting by
//! scene: every fifth sample (index ≡ 4 mod 5) is held out for testing.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use shadingnet_core::physics::{AmbientMap, NormalMap, ReflectanceMap, ShadingKind, ShadingMap, ShadowMap};
use shadingnet_core::rng::derive;
use shadingnet_core::scene::{random_scene, render, IntrinsicSample};
use shadingnet_core::Map;

use crate::error::{LabError, Result};
use crate::{f32map, imageio};

pub const MANIFEST: &str = "manifest.json";
pub const COMPOSITE_PNG: &str = "composite.png";
pub const LAYERS: [&str; 8] =
    ["composite", "reflectance", "shading_unified", "shading_direct", "ambient", "shadow", "normals", "mask"];
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn of_index(index: usize) -> Split {
        if index % 5 == 4 {
            Split::Test
        } else {
            Split::Train
        }
    }
}

impl std::str::FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            _ => Err(format!("unknown split {s:?}, expected train or test")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub dir: String,
    pub index: usize,
    /// Scene seed passed to the generator.
    pub seed: u64,
    pub split: Split,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: u32,
    pub seed: u64,
    /// (height, width)
    pub resolution: [usize; 2],
    pub samples: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.samples.iter().filter(move |s| s.split == split)
    }

    pub fn read(root: &Path) -> Result<Manifest> {
        let path = root.join(MANIFEST);
        let text = fs::read_to_string(&path).map_err(|e| LabError::io(&path, e))?;
        let m: Manifest = serde_json::from_str(&text).map_err(|e| LabError::Json { path: path.clone(), source: e })?;
        if m.format != FORMAT_VERSION {
            return Err(LabError::Data(format!("{}: unsupported manifest format {}", path.display(), m.format)));
        }
        Ok(m)
    }

    pub fn write(&self, root: &Path) -> Result<()> {
        let path = root.join(MANIFEST);
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        fs::write(&path, text + "\n").map_err(|e| LabError::io(&path, e))
    }
}

pub fn sample_dir_name(index: usize) -> String {
    format!("sample_{index:06}")
}

pub fn scene_seed(dataset_seed: u64, index: usize) -> u64 {
    derive(dataset_seed, index as u64)
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| LabError::io(path, e))
}

pub fn write_sample(dir: &Path, s: &IntrinsicSample) -> Result<()> {
    create_dir(dir)?;
    imageio::write_rgb(&dir.join(COMPOSITE_PNG), &s.composite)?;
    let layers: [&Map; 8] = [
        &s.composite,
        s.reflectance.map(),
        s.shading_unified.map(),
        s.shading_direct.map(),
        s.ambient.map(),
        s.shadow.map(),
        s.normals.normals(),
        s.normals.mask(),
    ];
    for (name, map) in LAYERS.iter().zip(layers) {
        f32map::write(&layer_path(dir, name), map)?;
    }
    Ok(())
}

pub fn layer_path(dir: &Path, layer: &str) -> PathBuf {
    dir.join(format!("{layer}.f32"))
}

fn read_layer(dir: &Path, layer: &str) -> Result<Map> {
    f32map::read(&layer_path(dir, layer))
}

/// Reloads a sample written by [`write_sample`], revalidating every layer.
pub fn read_sample(dir: &Path) -> Result<IntrinsicSample> {
    let l = |name| read_layer(dir, name);
    let s = IntrinsicSample {
        composite: l("composite")?,
        reflectance: ReflectanceMap::new(l("reflectance")?)?,
        shading_unified: ShadingMap::new(l("shading_unified")?, ShadingKind::Unified)?,
        shading_direct: ShadingMap::new(l("shading_direct")?, ShadingKind::Direct)?,
        ambient: AmbientMap::new(l("ambient")?)?,
        shadow: ShadowMap::new(l("shadow")?)?,
        normals: NormalMap::new(l("normals")?, l("mask")?)?,
        mask: l("mask")?,
    };
    Ok(s)
}

/// Renders `n` scenes at `resolution` into `root` and writes the manifest.
pub fn generate(n: usize, seed: u64, resolution: [usize; 2], root: &Path) -> Result<Manifest> {
    create_dir(root)?;
    let mut samples = Vec::with_capacity(n);
    for index in 0..n {
        let scene_seed = scene_seed(seed, index);
        let sample = render(&random_scene(scene_seed), resolution[0], resolution[1])?;
        let dir = sample_dir_name(index);
        write_sample(&root.join(&dir), &sample)?;
        samples.push(ManifestEntry { dir, index, seed: scene_seed, split: Split::of_index(index) });
    }
    let manifest = Manifest { format: FORMAT_VERSION, seed, resolution, samples };
    manifest.write(root)?;
    Ok(manifest)
}

/// Network input and supervision for one sample. The input comes from the
/// 8-bit PNG; every target is exact.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingSample {
    pub image: Map,
    pub reflectance: Map,
    pub shading_unified: Map,
    pub shading_direct: Map,
    pub ambient: Map,
    /// |shadow|
    pub shadow_mag: Map,
}

impl TrainingSample {
    pub fn load(dir: &Path) -> Result<TrainingSample> {
        let image = imageio::read_rgb(&dir.join(COMPOSITE_PNG))?;
        let s = TrainingSample {
            image,
            reflectance: read_layer(dir, "reflectance")?,
            shading_unified: read_layer(dir, "shading_unified")?,
            shading_direct: read_layer(dir, "shading_direct")?,
            ambient: read_layer(dir, "ambient")?,
            shadow_mag: read_layer(dir, "shadow")?.map(f32::abs),
        };
        let (h, w) = (s.image.height(), s.image.width());
        let expect = [(&s.reflectance, 3), (&s.shading_unified, 1), (&s.shading_direct, 1), (&s.ambient, 1), (&s.shadow_mag, 1)];
        for (m, c) in expect {
            if m.dims() != (c, h, w) {
                return Err(LabError::Data(format!(
                    "{}: layer has extent {:?}, expected {:?}",
                    dir.display(),
                    m.dims(),
                    (c, h, w)
                )));
            }
        }
        Ok(s)
    }

    pub fn resolution(&self) -> [usize; 2] {
        [self.image.height(), self.image.width()]
    }
}
