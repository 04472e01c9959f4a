//! Procedural scenes ray-cast into composites with dense intrinsic ground truth.
//!
//! World is y-up: a ground plane, visible spheres, and a separate list of
//! occluders that only shadow and ambient-occlusion rays test against.
//! Occluders may duplicate visible spheres or hang out of view.

use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::map::Map;
use crate::physics::{
    self, quantize_shading, AmbientMap, LightEnvironment, NormalMap, ReflectanceMap, ShadingKind, ShadingMap, ShadowMap,
};
use crate::rng::{chacha, derive};

/// Hemisphere directions per pixel for the ambient-occlusion estimate.
pub const AO_SAMPLES: usize = 16;
const AO_STRATA: usize = 4;
const RAY_EPS: f64 = 1e-4;
const SCENE_STREAM: u64 = 0x5CE4E;
const AO_STREAM: u64 = 0xA0;

type V3 = [f64; 3];

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GroundPlane {
    pub height: f32,
    pub albedo: [f32; 3],
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Sphere {
    pub center: [f32; 3],
    pub radius: f32,
    pub albedo: [f32; 3],
}

/// Shadow-only geometry.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Occluder {
    Sphere { center: [f32; 3], radius: f32 },
    Slab { min: [f32; 3], max: [f32; 3] },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Camera {
    pub position: [f32; 3],
    pub look_at: [f32; 3],
    /// Vertical field of view in degrees, in (10, 120).
    pub fov_deg: f32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneSpec {
    pub ground: GroundPlane,
    pub spheres: Vec<Sphere>,
    pub occluders: Vec<Occluder>,
    pub light: LightEnvironment,
    pub camera: Camera,
    pub seed: u64,
}

fn albedo_ok(a: &[f32; 3]) -> bool {
    a.iter().all(|v| (0.0..=1.0).contains(v))
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if !albedo_ok(&self.ground.albedo) || self.spheres.iter().any(|s| !albedo_ok(&s.albedo)) {
            return Err(Error::invalid("scene", "albedo outside [0, 1]"));
        }
        if self.spheres.iter().any(|s| !(s.radius > 0.0)) {
            return Err(Error::invalid("scene", "sphere radius must be positive"));
        }
        for o in &self.occluders {
            let ok = match o {
                Occluder::Sphere { radius, .. } => *radius > 0.0,
                Occluder::Slab { min, max } => (0..3).all(|i| min[i] < max[i]),
            };
            if !ok {
                return Err(Error::invalid("scene", "degenerate occluder"));
            }
        }
        let fov = self.camera.fov_deg;
        if !(fov > 10.0 && fov < 120.0) {
            return Err(Error::invalid("scene", alloc::format!("field of view {fov} outside (10, 120)")));
        }
        if self.camera.position == self.camera.look_at {
            return Err(Error::DegenerateCamera);
        }
        Ok(())
    }
}

/// A rendered scene with every ground-truth layer.
#[derive(Clone, Debug, PartialEq)]
pub struct IntrinsicSample {
    pub composite: Map,
    pub reflectance: ReflectanceMap,
    pub shading_unified: ShadingMap,
    pub shading_direct: ShadingMap,
    pub ambient: AmbientMap,
    pub shadow: ShadowMap,
    pub normals: NormalMap,
    /// 1 where the primary ray hit geometry, 0 for sky.
    pub mask: Map,
}

impl IntrinsicSample {
    pub fn height(&self) -> usize {
        self.mask.height()
    }

    pub fn width(&self) -> usize {
        self.mask.width()
    }

    /// Checks the exact split identities and the composite product.
    pub fn verify(&self) -> Result<()> {
        let su = self.shading_unified.map().data();
        let sd = self.shading_direct.map().data();
        let amb = self.ambient.map().data();
        let sh = self.shadow.map().data();
        if sd.len() != su.len() || amb.len() != su.len() || sh.len() != su.len() {
            return Err(Error::shape("sample", "layer sizes disagree"));
        }
        let w = self.width();
        for i in 0..su.len() {
            if sd[i] + amb[i] + sh[i] != su[i] || amb[i] * sh[i] != 0.0 {
                return Err(Error::invalid("sample", alloc::format!("split identity broken at ({}, {})", i / w, i % w)));
            }
        }
        let rebuilt = physics::reconstruct_direct(&self.shading_unified, &self.ambient, &self.shadow)?;
        if rebuilt.map() != self.shading_direct.map() {
            return Err(Error::invalid("sample", "reconstructed direct shading differs"));
        }
        let product = physics::compose_unified(&self.reflectance, &self.shading_unified)?;
        product.check_dims(&self.composite, "sample")?;
        if let Some(i) = product.data().iter().zip(self.composite.data()).position(|(a, b)| (a - b).abs() > 1e-6) {
            return Err(Error::invalid("sample", alloc::format!("composite differs from product at entry {i}")));
        }
        Ok(())
    }
}

fn uniform(rng: &mut ChaCha8Rng, lo: f32, hi: f32) -> f32 {
    rng.gen_range(lo..hi)
}

fn random_albedo(rng: &mut ChaCha8Rng, lo: f32, hi: f32) -> [f32; 3] {
    [uniform(rng, lo, hi), uniform(rng, lo, hi), uniform(rng, lo, hi)]
}

/// Deterministic random scene: 1–6 spheres resting on or floating above the
/// ground, 0–3 occluders, light elevation in (15°, 75°).
pub fn random_scene(seed: u64) -> SceneSpec {
    let mut rng = chacha(derive(seed, SCENE_STREAM));
    let ground = GroundPlane { height: 0.0, albedo: random_albedo(&mut rng, 0.2, 0.9) };
    let n_spheres = rng.gen_range(1..=6);
    let spheres: Vec<Sphere> = (0..n_spheres)
        .map(|_| {
            let radius = uniform(&mut rng, 0.3, 1.0);
            let lift = if rng.gen_bool(0.3) { uniform(&mut rng, 0.2, 1.0) } else { 0.0 };
            Sphere {
                center: [uniform(&mut rng, -2.5, 2.5), radius + lift, uniform(&mut rng, -2.5, 2.5)],
                radius,
                albedo: random_albedo(&mut rng, 0.1, 0.95),
            }
        })
        .collect();
    let n_occluders = rng.gen_range(0..=3);
    let occluders = (0..n_occluders)
        .map(|_| {
            if rng.gen_bool(0.6) {
                let s = spheres[rng.gen_range(0..spheres.len())];
                Occluder::Sphere { center: s.center, radius: s.radius }
            } else {
                let (x, z, y) = (uniform(&mut rng, -3.0, 2.0), uniform(&mut rng, -3.0, 2.0), uniform(&mut rng, 2.0, 3.5));
                let (sx, sz) = (uniform(&mut rng, 0.4, 2.0), uniform(&mut rng, 0.4, 2.0));
                Occluder::Slab { min: [x, y, z], max: [x + sx, y + 0.1, z + sz] }
            }
        })
        .collect();
    let elevation = (uniform(&mut rng, 16.0, 74.0) as f64).to_radians();
    let azimuth = rng.gen_range(0.0..2.0 * PI);
    let dir = [libm::cos(elevation) * libm::cos(azimuth), libm::sin(elevation), libm::cos(elevation) * libm::sin(azimuth)];
    let light = LightEnvironment::new(to_f32(normalize(dir)), uniform(&mut rng, 0.5, 1.2), uniform(&mut rng, 0.05, 0.4))
        .expect("unit direction and positive intensities");
    let cam_az = rng.gen_range(0.0..2.0 * PI);
    let dist = rng.gen_range(7.0..9.0);
    let camera = Camera {
        position: to_f32([dist * libm::cos(cam_az), rng.gen_range(3.0..5.0), dist * libm::sin(cam_az)]),
        look_at: [0.0, 0.5, 0.0],
        fov_deg: uniform(&mut rng, 40.0, 60.0),
    };
    SceneSpec { ground, spheres, occluders, light, camera, seed }
}

fn to_f32(v: V3) -> [f32; 3] {
    [v[0] as f32, v[1] as f32, v[2] as f32]
}

fn to_f64(v: [f32; 3]) -> V3 {
    [v[0] as f64, v[1] as f64, v[2] as f64]
}

fn sub(a: V3, b: V3) -> V3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn add_scaled(a: V3, b: V3, t: f64) -> V3 {
    [a[0] + b[0] * t, a[1] + b[1] * t, a[2] + b[2] * t]
}

fn dot(a: V3, b: V3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn cross(a: V3, b: V3) -> V3 {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

fn normalize(a: V3) -> V3 {
    let n = libm::sqrt(dot(a, a));
    [a[0] / n, a[1] / n, a[2] / n]
}

/// Nearest positive root of the ray–sphere quadratic.
fn hit_sphere(o: V3, d: V3, center: V3, radius: f64) -> Option<f64> {
    let oc = sub(o, center);
    let b = dot(oc, d);
    let c = dot(oc, oc) - radius * radius;
    let disc = b * b - c;
    if disc < 0.0 {
        return None;
    }
    let s = libm::sqrt(disc);
    [-b - s, -b + s].into_iter().find(|&t| t > RAY_EPS)
}

fn hit_slab(o: V3, d: V3, min: V3, max: V3) -> Option<f64> {
    let (mut t0, mut t1) = (f64::NEG_INFINITY, f64::INFINITY);
    for i in 0..3 {
        if d[i] == 0.0 {
            if o[i] < min[i] || o[i] > max[i] {
                return None;
            }
            continue;
        }
        let (a, b) = ((min[i] - o[i]) / d[i], (max[i] - o[i]) / d[i]);
        t0 = t0.max(a.min(b));
        t1 = t1.min(a.max(b));
    }
    (t0 <= t1 && t1 > RAY_EPS).then_some(if t0 > RAY_EPS { t0 } else { t1 })
}

fn occluded(spec: &SceneSpec, o: V3, d: V3) -> bool {
    spec.occluders.iter().any(|occ| match *occ {
        Occluder::Sphere { center, radius } => hit_sphere(o, d, to_f64(center), radius as f64).is_some(),
        Occluder::Slab { min, max } => hit_slab(o, d, to_f64(min), to_f64(max)).is_some(),
    })
}

struct Hit {
    point: V3,
    normal: V3,
    albedo: [f32; 3],
}

fn trace(spec: &SceneSpec, o: V3, d: V3) -> Option<Hit> {
    let mut best: Option<(f64, V3, [f32; 3])> = None;
    for s in &spec.spheres {
        let c = to_f64(s.center);
        if let Some(t) = hit_sphere(o, d, c, s.radius as f64) {
            if best.as_ref().map_or(true, |b| t < b.0) {
                best = Some((t, normalize(sub(add_scaled(o, d, t), c)), s.albedo));
            }
        }
    }
    if d[1] != 0.0 {
        let t = (spec.ground.height as f64 - o[1]) / d[1];
        if t > RAY_EPS && best.as_ref().map_or(true, |b| t < b.0) {
            best = Some((t, [0.0, 1.0, 0.0], spec.ground.albedo));
        }
    }
    best.map(|(t, normal, albedo)| Hit { point: add_scaled(o, d, t), normal, albedo })
}

/// Orthonormal tangent frame around a unit normal.
fn frame(n: V3) -> (V3, V3) {
    let helper = if n[0].abs() < 0.9 { [1.0, 0.0, 0.0] } else { [0.0, 1.0, 0.0] };
    let t = normalize(cross(helper, n));
    (t, cross(n, t))
}

/// Fraction of stratified cosine-weighted hemisphere directions blocked by
/// occluders, in multiples of 1/16.
pub(crate) fn ambient_occlusion(spec: &SceneSpec, point: V3, normal: V3, pixel_seed: u64) -> f64 {
    let mut rng = chacha(pixel_seed);
    let origin = add_scaled(point, normal, RAY_EPS * 10.0);
    let (t, b) = frame(normal);
    let mut blocked = 0usize;
    for i in 0..AO_STRATA {
        for j in 0..AO_STRATA {
            let u1 = (i as f64 + rng.gen::<f64>()) / AO_STRATA as f64;
            let u2 = (j as f64 + rng.gen::<f64>()) / AO_STRATA as f64;
            let (r, phi) = (libm::sqrt(u1), 2.0 * PI * u2);
            let (x, y, z) = (r * libm::cos(phi), r * libm::sin(phi), libm::sqrt((1.0 - u1).max(0.0)));
            let d = normalize([
                t[0] * x + b[0] * y + normal[0] * z,
                t[1] * x + b[1] * y + normal[1] * z,
                t[2] * x + b[2] * y + normal[2] * z,
            ]);
            if occluded(spec, origin, d) {
                blocked += 1;
            }
        }
    }
    blocked as f64 / AO_SAMPLES as f64
}

pub(crate) fn pixel_seed(scene_seed: u64, x: usize, y: usize) -> u64 {
    derive(derive(scene_seed, AO_STREAM ^ ((y as u64) << 32)), x as u64)
}

/// Per-pixel shading at a surface point: `(direct, unified)`, both on the
/// quantization grid. Direct ignores occlusion; unified is
/// `direct·V + e_a·(1 − α_S)`.
pub(crate) fn shade(spec: &SceneSpec, point: V3, normal: V3, pixel_seed: u64) -> (f32, f32) {
    let light = &spec.light;
    let direct = quantize_shading(physics::lambert(to_f32(normal), light));
    let l = to_f64(light.direction());
    let visible = direct == 0.0 || !occluded(spec, add_scaled(point, normal, RAY_EPS * 10.0), l);
    let alpha = ambient_occlusion(spec, point, normal, pixel_seed);
    let ambient = quantize_shading((light.ambient() as f64 * (1.0 - alpha)) as f32);
    (direct, if visible { direct } else { 0.0 } + ambient)
}

/// Camera ray through the center of pixel `(x, y)`.
pub(crate) fn camera_ray(cam: &Camera, x: usize, y: usize, h: usize, w: usize) -> Result<(V3, V3)> {
    let pos = to_f64(cam.position);
    let fwd = sub(to_f64(cam.look_at), pos);
    if dot(fwd, fwd) == 0.0 {
        return Err(Error::DegenerateCamera);
    }
    let fwd = normalize(fwd);
    let up = if cross(fwd, [0.0, 1.0, 0.0]).iter().all(|v| v.abs() < 1e-9) { [0.0, 0.0, 1.0] } else { [0.0, 1.0, 0.0] };
    let right = normalize(cross(fwd, up));
    let true_up = cross(right, fwd);
    let half = libm::tan((cam.fov_deg as f64).to_radians() / 2.0);
    let u = ((x as f64 + 0.5) / w as f64 * 2.0 - 1.0) * half * w as f64 / h as f64;
    let v = (1.0 - (y as f64 + 0.5) / h as f64 * 2.0) * half;
    let d = normalize([
        fwd[0] + right[0] * u + true_up[0] * v,
        fwd[1] + right[1] * u + true_up[1] * v,
        fwd[2] + right[2] * u + true_up[2] * v,
    ]);
    Ok((pos, d))
}

/// Ray-casts `spec` at `height × width` (each at least 8).
pub fn render(spec: &SceneSpec, height: usize, width: usize) -> Result<IntrinsicSample> {
    if height < 8 || width < 8 {
        return Err(Error::invalid("render", alloc::format!("resolution {height}x{width} below 8x8")));
    }
    spec.validate()?;
    let mut rho = Map::zeros(3, height, width);
    let mut normals = Map::zeros(3, height, width);
    let mut mask = Map::zeros(1, height, width);
    let mut su = Map::zeros(1, height, width);
    let mut sd = Map::zeros(1, height, width);
    for y in 0..height {
        for x in 0..width {
            let (o, d) = camera_ray(&spec.camera, x, y, height, width)?;
            let Some(hit) = trace(spec, o, d) else { continue };
            mask.set(0, y, x, 1.0);
            let n = to_f32(hit.normal);
            for c in 0..3 {
                rho.set(c, y, x, hit.albedo[c]);
                normals.set(c, y, x, n[c]);
            }
            let (direct, unified) = shade(spec, hit.point, hit.normal, pixel_seed(spec.seed, x, y));
            sd.set(0, y, x, direct);
            su.set(0, y, x, unified);
        }
    }
    let reflectance = ReflectanceMap::new(rho)?;
    let shading_unified = ShadingMap::new(su, ShadingKind::Unified)?;
    let shading_direct = ShadingMap::new(sd, ShadingKind::Direct)?;
    let (ambient, shadow) = physics::split_indirect(&shading_unified, &shading_direct)?;
    let composite = physics::compose_unified(&reflectance, &shading_unified)?;
    let normals = NormalMap::new(normals, mask.clone())?;
    Ok(IntrinsicSample { composite, reflectance, shading_unified, shading_direct, ambient, shadow, normals, mask })
}
