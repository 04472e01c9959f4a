//! Image formation with unified and composite shading.
//!
//! A Lambertian image is reflectance times shading, `I = ρ·s_u`. The unified
//! shading splits into a direct term `s_d = e_d·max(0, n·l)` and an indirect
//! residual whose positive part is ambient light `e⁺` and whose negative
//! part is cast shadow `e⁻ ≤ 0`, so `s_u = s_d + e⁺ + e⁻`.
//!
//! Shading is single-channel and multiplies every color channel of the
//! three-channel reflectance.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::map::Map;

/// Spacing of the fixed-point grid ground-truth shading is snapped to.
///
/// Values on this grid with magnitude below 8 add and subtract exactly in
/// single precision, which makes the split and reconstruction identities
/// bit-exact for rendered data.
pub const SHADING_QUANTUM: f32 = 1.0 / (1u32 << 20) as f32;

pub fn quantize_shading(v: f32) -> f32 {
    libm::roundf(v / SHADING_QUANTUM) * SHADING_QUANTUM
}

const NORMAL_TOLERANCE: f32 = 1e-4;

/// Three-channel albedo in [0, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct ReflectanceMap(Map);

impl ReflectanceMap {
    pub fn new(map: Map) -> Result<Self> {
        if map.channels() != 3 {
            return Err(Error::invalid("reflectance", alloc::format!("{} channels, expected 3", map.channels())));
        }
        if let Some(v) = map.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::invalid("reflectance", alloc::format!("albedo {v} outside [0, 1]")));
        }
        Ok(ReflectanceMap(map))
    }

    pub fn map(&self) -> &Map {
        &self.0
    }

    pub fn into_map(self) -> Map {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ShadingKind {
    Unified,
    Direct,
}

/// Single-channel non-negative shading.
#[derive(Clone, Debug, PartialEq)]
pub struct ShadingMap {
    map: Map,
    kind: ShadingKind,
}

impl ShadingMap {
    pub fn new(map: Map, kind: ShadingKind) -> Result<Self> {
        single_channel(&map, "shading")?;
        if let Some(v) = map.data().iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
            return Err(Error::invalid("shading", alloc::format!("value {v} is negative or not finite")));
        }
        Ok(ShadingMap { map, kind })
    }

    pub fn map(&self) -> &Map {
        &self.map
    }

    pub fn kind(&self) -> ShadingKind {
        self.kind
    }

    pub fn into_map(self) -> Map {
        self.map
    }
}

/// Additive ambient light, `e⁺ ≥ 0`.
#[derive(Clone, Debug, PartialEq)]
pub struct AmbientMap(Map);

impl AmbientMap {
    pub fn new(map: Map) -> Result<Self> {
        single_channel(&map, "ambient")?;
        if let Some(v) = map.data().iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
            return Err(Error::invalid("ambient", alloc::format!("value {v} is negative or not finite")));
        }
        Ok(AmbientMap(map))
    }

    pub fn map(&self) -> &Map {
        &self.0
    }

    pub fn into_map(self) -> Map {
        self.0
    }
}

/// Cast shadow in the signed convention, `e⁻ ≤ 0`.
#[derive(Clone, Debug, PartialEq)]
pub struct ShadowMap(Map);

impl ShadowMap {
    pub fn new(map: Map) -> Result<Self> {
        single_channel(&map, "shadow")?;
        if let Some(v) = map.data().iter().find(|v| !(**v <= 0.0) || !v.is_finite()) {
            return Err(Error::invalid("shadow", alloc::format!("value {v} is positive or not finite")));
        }
        Ok(ShadowMap(map))
    }

    /// Builds from a non-negative shadow magnitude by negating it.
    pub fn from_magnitude(magnitude: &Map) -> Result<Self> {
        ShadowMap::new(magnitude.map(|v| -v))
    }

    pub fn map(&self) -> &Map {
        &self.0
    }

    /// `|e⁻|`, the non-negative form the network predicts.
    pub fn magnitude(&self) -> Map {
        self.0.map(|v| -v)
    }

    pub fn into_map(self) -> Map {
        self.0
    }
}

/// Unit surface normals with a validity mask (0 for background pixels).
#[derive(Clone, Debug, PartialEq)]
pub struct NormalMap {
    normals: Map,
    mask: Map,
}

impl NormalMap {
    pub fn new(normals: Map, mask: Map) -> Result<Self> {
        if normals.channels() != 3 {
            return Err(Error::invalid("normals", alloc::format!("{} channels, expected 3", normals.channels())));
        }
        single_channel(&mask, "normal mask")?;
        normals.check_spatial(&mask, "normals")?;
        let nm = NormalMap { normals, mask };
        for row in 0..nm.mask.height() {
            for col in 0..nm.mask.width() {
                if nm.valid(row, col) {
                    let n = nm.normal(row, col);
                    let norm = libm::sqrtf(dot(n, n));
                    if !((norm - 1.0).abs() <= NORMAL_TOLERANCE) {
                        return Err(Error::NonUnitNormal { row, col, norm });
                    }
                }
            }
        }
        Ok(nm)
    }

    pub fn valid(&self, row: usize, col: usize) -> bool {
        self.mask.get(0, row, col) > 0.5
    }

    pub fn normal(&self, row: usize, col: usize) -> [f32; 3] {
        [self.normals.get(0, row, col), self.normals.get(1, row, col), self.normals.get(2, row, col)]
    }

    pub fn normals(&self) -> &Map {
        &self.normals
    }

    pub fn mask(&self) -> &Map {
        &self.mask
    }
}

/// A directional light plus uniform ambient illumination.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LightEnvironment {
    /// Unit vector pointing from the surface toward the light.
    direction: [f32; 3],
    direct: f32,
    ambient: f32,
}

impl LightEnvironment {
    pub fn new(direction: [f32; 3], direct: f32, ambient: f32) -> Result<Self> {
        let norm = libm::sqrtf(dot(direction, direction));
        if !((norm - 1.0).abs() <= 1e-6) {
            return Err(Error::invalid("light", alloc::format!("direction norm {norm}, expected 1")));
        }
        if !(direct >= 0.0 && ambient >= 0.0) {
            return Err(Error::invalid("light", "intensities must be non-negative"));
        }
        Ok(LightEnvironment { direction, direct, ambient })
    }

    pub fn direction(&self) -> [f32; 3] {
        self.direction
    }

    pub fn direct(&self) -> f32 {
        self.direct
    }

    pub fn ambient(&self) -> f32 {
        self.ambient
    }
}

pub(crate) fn dot(a: [f32; 3], b: [f32; 3]) -> f32 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn single_channel(map: &Map, what: &'static str) -> Result<()> {
    if map.channels() != 1 {
        return Err(Error::invalid(what, alloc::format!("{} channels, expected 1", map.channels())));
    }
    Ok(())
}

/// Lambertian shading of one surface point, clamped at zero for surfaces
/// facing away from the light.
pub fn lambert(normal: [f32; 3], light: &LightEnvironment) -> f32 {
    light.direct * dot(normal, light.direction).max(0.0)
}

/// `I_c = ρ_c · s_u`.
pub fn compose_unified(rho: &ReflectanceMap, shading: &ShadingMap) -> Result<Map> {
    rho.0.check_spatial(&shading.map, "compose_unified")?;
    Ok(multiply(&rho.0, shading.map.data()))
}

fn multiply(rho: &Map, shading: &[f32]) -> Map {
    let plane = rho.plane();
    let mut out = rho.clone();
    for c in 0..rho.channels() {
        out.data_mut()[c * plane..(c + 1) * plane].iter_mut().zip(shading).for_each(|(v, s)| *v *= s);
    }
    out
}

/// `s_d = e_d · max(0, n·l)` on valid pixels, 0 elsewhere.
pub fn direct_shading(normals: &NormalMap, light: &LightEnvironment) -> Result<ShadingMap> {
    let (h, w) = (normals.mask.height(), normals.mask.width());
    let mut out = Map::zeros(1, h, w);
    for row in 0..h {
        for col in 0..w {
            if normals.valid(row, col) {
                out.set(0, row, col, lambert(normals.normal(row, col), light));
            }
        }
    }
    Ok(ShadingMap { map: out, kind: ShadingKind::Direct })
}

/// `I_c = ρ_c · (s_d + e⁺ + e⁻)`.
///
/// A total shading below −1e-6 is physically invalid and rejected; smaller
/// negative totals are rounding noise and clamp to 0.
pub fn compose_full(rho: &ReflectanceMap, direct: &ShadingMap, ambient: &AmbientMap, shadow: &ShadowMap) -> Result<Map> {
    rho.0.check_spatial(&direct.map, "compose_full")?;
    direct.map.check_dims(&ambient.0, "compose_full")?;
    direct.map.check_dims(&shadow.0, "compose_full")?;
    let w = direct.map.width();
    let total: Vec<f32> = direct
        .map
        .data()
        .iter()
        .zip(ambient.0.data())
        .zip(shadow.0.data())
        .enumerate()
        .map(|(i, ((&d, &a), &s))| {
            let t = d + a + s;
            if t < -1e-6 {
                Err(Error::NegativeShading { row: i / w, col: i % w, value: t })
            } else {
                Ok(t.max(0.0))
            }
        })
        .collect::<Result<_>>()?;
    Ok(multiply(&rho.0, &total))
}

/// Splits the indirect residual `r = s_u − s_d` by sign into ambient
/// `max(r, 0)` and shadow `min(r, 0)`.
pub fn split_indirect(unified: &ShadingMap, direct: &ShadingMap) -> Result<(AmbientMap, ShadowMap)> {
    unified.map.check_dims(&direct.map, "split_indirect")?;
    let mut ambient = Map::zeros(1, unified.map.height(), unified.map.width());
    let mut shadow = ambient.clone();
    for (i, (&u, &d)) in unified.map.data().iter().zip(direct.map.data()).enumerate() {
        let r = u - d;
        if r > 0.0 {
            ambient.data_mut()[i] = r;
        } else if r < 0.0 {
            shadow.data_mut()[i] = r;
        }
    }
    Ok((AmbientMap(ambient), ShadowMap(shadow)))
}

/// Recovers direct shading as `s_u − e⁺ − e⁻`. Negative values are kept;
/// they flag an inconsistent triplet.
pub fn reconstruct_direct(unified: &ShadingMap, ambient: &AmbientMap, shadow: &ShadowMap) -> Result<ShadingMap> {
    unified.map.check_dims(&ambient.0, "reconstruct_direct")?;
    unified.map.check_dims(&shadow.0, "reconstruct_direct")?;
    let data = unified
        .map
        .data()
        .iter()
        .zip(ambient.0.data())
        .zip(shadow.0.data())
        .map(|((&u, &a), &s)| u - a - s)
        .collect();
    let map = Map::from_vec(1, unified.map.height(), unified.map.width(), data)?;
    Ok(ShadingMap { map, kind: ShadingKind::Direct })
}
