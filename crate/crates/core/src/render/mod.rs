//! Software ray-cast renderer: registered RGB + planar depth under a global
//! light, a camera headlamp, Beer–Lambert fog and transient dust plumes.

mod bvh;

pub use bvh::{intersect_brute_force, Aabb, Bvh, Triangle};

use std::io::Write;
use std::path::Path;

use nalgebra::{Isometry3, Point3, Rotation3, Vector3};
use noise::{NoiseFn, Value};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::assets::Texture;
use crate::camera::CameraState;
use crate::config::{LightType, SimConfig};
use crate::deposition::Pile;

pub const AMBIENT: f64 = 0.02;
pub const SPECULAR_EXPONENT: i32 = 32;
pub const SPECULAR_STRENGTH: f64 = 0.2;
pub const FOG_COLOR: f64 = 0.5;
pub const PLUME_SAMPLES: usize = 8;
pub const GROUND_ALBEDO: [f64; 3] = [0.42, 0.40, 0.37];

const TEXTURE_SEED: u32 = 7;
const FOG_SEED: u32 = 11;
/// Time scale of the fog noise, seconds per noise cell.
const FOG_TIME_SCALE: f64 = 4.0;

/// What a ray hit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Surface {
    Ground,
    Instance(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    pub distance: f64,
    pub point: Point3<f64>,
    /// Unit normal facing the ray origin.
    pub normal: Vector3<f64>,
    pub surface: Surface,
    pub albedo: [f64; 3],
    pub specular: f64,
}

/// One rigid object in world space.
#[derive(Debug, Clone)]
pub struct SceneObject {
    pub class_id: String,
    pub triangles: Vec<[Point3<f64>; 3]>,
    pub albedo: [f64; 3],
    pub texture: Option<Texture>,
    pub specular: f64,
    /// World to object frame, for texture lookup.
    pub to_local: Isometry3<f64>,
}

/// Immutable triangle soup with its BVH and an optional ground plane at z=0.
pub struct Scene {
    tris: Vec<Triangle>,
    owner: Vec<u32>,
    objects: Vec<SceneObject>,
    bvh: Bvh,
    ground: Option<[f64; 3]>,
    texture_noise: Value,
}

impl std::fmt::Debug for Scene {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Scene")
            .field("triangles", &self.tris.len())
            .field("objects", &self.objects.len())
            .field("ground", &self.ground)
            .finish()
    }
}

impl Scene {
    pub fn new(mut objects: Vec<SceneObject>, ground: Option<[f64; 3]>) -> Scene {
        let mut tris = Vec::new();
        let mut owner = Vec::new();
        for (i, o) in objects.iter_mut().enumerate() {
            for t in o.triangles.drain(..) {
                tris.push(Triangle::new(t[0], t[1], t[2]));
                owner.push(i as u32);
            }
        }
        let bvh = Bvh::build(&tris);
        Scene {
            tris,
            owner,
            objects,
            bvh,
            ground,
            texture_noise: Value::new(TEXTURE_SEED),
        }
    }

    /// Every instance triangulated at its settled pose, over the ground.
    pub fn from_pile(pile: &Pile) -> Scene {
        let objects = pile
            .instances
            .iter()
            .map(|b| {
                let class = pile.class(b);
                let iso = b.isometry();
                SceneObject {
                    class_id: class.id.clone(),
                    triangles: class
                        .shape
                        .triangles()
                        .into_iter()
                        .map(|t| t.map(|p| iso * p))
                        .collect(),
                    albedo: class.albedo,
                    texture: class.texture,
                    specular: SPECULAR_STRENGTH,
                    to_local: iso.inverse(),
                }
            })
            .collect();
        Scene::new(objects, Some(GROUND_ALBEDO))
    }

    pub fn triangles(&self) -> &[Triangle] {
        &self.tris
    }

    pub fn objects(&self) -> &[SceneObject] {
        &self.objects
    }

    pub fn class_id(&self, surface: Surface) -> &str {
        match surface {
            Surface::Ground => "ground",
            Surface::Instance(i) => &self.objects[i].class_id,
        }
    }

    /// Nearest hit along a unit-length ray.
    pub fn ray_cast(&self, origin: &Point3<f64>, dir: &Vector3<f64>) -> Option<Hit> {
        let (limit, ground) = self.ground_hit(origin, dir);
        match self.bvh.intersect(&self.tris, origin, dir, limit) {
            Some((tri, t)) => Some(self.shade_hit(origin, dir, tri, t)),
            None => ground,
        }
    }

    /// Same contract as [`Scene::ray_cast`] without the BVH.
    pub fn ray_cast_brute_force(&self, origin: &Point3<f64>, dir: &Vector3<f64>) -> Option<Hit> {
        let (limit, ground) = self.ground_hit(origin, dir);
        match intersect_brute_force(&self.tris, origin, dir, limit) {
            Some((tri, t)) => Some(self.shade_hit(origin, dir, tri, t)),
            None => ground,
        }
    }

    fn ground_hit(&self, origin: &Point3<f64>, dir: &Vector3<f64>) -> (f64, Option<Hit>) {
        let Some(albedo) = self.ground else {
            return (f64::INFINITY, None);
        };
        if dir.z == 0.0 {
            return (f64::INFINITY, None);
        }
        let t = -origin.z / dir.z;
        if t <= 1e-9 {
            return (f64::INFINITY, None);
        }
        let normal = if origin.z >= 0.0 { Vector3::z() } else { -Vector3::z() };
        let hit = Hit {
            distance: t,
            point: origin + dir * t,
            normal,
            surface: Surface::Ground,
            albedo,
            specular: 0.0,
        };
        (t, Some(hit))
    }

    fn shade_hit(&self, origin: &Point3<f64>, dir: &Vector3<f64>, tri: usize, t: f64) -> Hit {
        let obj_index = self.owner[tri] as usize;
        let obj = &self.objects[obj_index];
        let mut normal = self.tris[tri].normal();
        if normal.dot(dir) > 0.0 {
            normal = -normal;
        }
        let point = origin + dir * t;
        let albedo = match obj.texture {
            None => obj.albedo,
            Some(tex) => {
                // offset per instance so identical classes do not share a pattern
                let p = obj.to_local * point;
                let s = tex.scale();
                let k = obj_index as f64 * 17.31;
                let n = noise01(self.texture_noise.get([p.x / s + k, p.y / s, p.z / s]));
                let m = 0.6 + 0.8 * n;
                obj.albedo.map(|a| (a * m).clamp(0.0, 1.0))
            }
        };
        Hit {
            distance: t,
            point,
            normal,
            surface: Surface::Instance(obj_index),
            albedo,
            specular: obj.specular,
        }
    }
}

fn noise01(v: f64) -> f64 {
    ((v + 1.0) * 0.5).clamp(0.0, 1.0)
}

/// The scene's single global light.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GlobalLight {
    pub kind: LightType,
    pub intensity: f64,
    /// Degrees about world x, y, z, applied in that order to the rest
    /// direction -z.
    pub rotation_deg: [f64; 3],
    pub position: Point3<f64>,
    /// Full cone angle in degrees, spot lights only.
    pub cone_deg: f64,
}

impl GlobalLight {
    /// Direction the light travels (directional) or points (spot).
    pub fn direction(&self) -> Vector3<f64> {
        let [x, y, z] = self.rotation_deg.map(f64::to_radians);
        Rotation3::from_euler_angles(x, y, z) * -Vector3::z()
    }

    /// Unit vector from `p` towards the light and the attenuation factor.
    fn incident(&self, p: &Point3<f64>) -> Option<(Vector3<f64>, f64)> {
        if self.intensity <= 0.0 {
            return None;
        }
        match self.kind {
            LightType::Directional => Some((-self.direction(), self.intensity)),
            LightType::Point | LightType::Spot => {
                let to_light = self.position - p;
                let d2 = to_light.norm_squared();
                if d2 == 0.0 {
                    return None;
                }
                let l = to_light / d2.sqrt();
                let mut a = self.intensity / d2;
                if self.kind == LightType::Spot {
                    let half = (self.cone_deg / 2.0).to_radians();
                    a *= smoothstep(half.cos(), (0.8 * half).cos(), (-l).dot(&self.direction()));
                }
                (a > 0.0).then_some((l, a))
            }
        }
    }
}

fn smoothstep(e0: f64, e1: f64, x: f64) -> f64 {
    let t = ((x - e0) / (e1 - e0)).clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LightingRig {
    pub global: GlobalLight,
    pub headlamp_on: bool,
    pub headlamp_intensity: f64,
}

impl LightingRig {
    /// Ambient only.
    pub fn dark() -> LightingRig {
        LightingRig {
            global: GlobalLight {
                kind: LightType::Directional,
                intensity: 0.0,
                rotation_deg: [0.0; 3],
                position: Point3::origin(),
                cone_deg: 30.0,
            },
            headlamp_on: false,
            headlamp_intensity: 0.0,
        }
    }
}

/// Lighting from the configuration. With `setlightrot` off the rotation is
/// drawn from `rng`: azimuth uniform, elevation uniform in [15°, 90°].
pub fn global_light_from_config<R: Rng + ?Sized>(cfg: &SimConfig, rng: &mut R) -> LightingRig {
    let rotation_deg = if cfg.set_light_rot {
        cfg.light_rot
    } else {
        let azimuth = rng.gen_range(0.0..360.0);
        let elevation = rng.gen_range(15.0..=90.0);
        [0.0, 90.0 - elevation, azimuth]
    };
    LightingRig {
        global: GlobalLight {
            kind: cfg.light_type,
            intensity: cfg.light_intensity,
            rotation_deg,
            position: Point3::from(cfg.light_pos),
            cone_deg: cfg.light_cone,
        },
        headlamp_on: cfg.headlamp_on,
        headlamp_intensity: cfg.headlamp_intensity,
    }
}

/// Spherical extinction boost with a parabolic profile, active in periodic
/// time windows.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DustPlume {
    pub center: Point3<f64>,
    pub radius: f64,
    /// Extinction added at the centre, 1/m.
    pub sigma_boost: f64,
    pub start: f64,
    pub duration: f64,
    /// Repeat period; `None` fires once.
    pub period: Option<f64>,
}

impl DustPlume {
    pub fn active(&self, t: f64) -> bool {
        if t < self.start {
            return false;
        }
        let local = match self.period {
            Some(p) if p > 0.0 => (t - self.start) % p,
            _ => t - self.start,
        };
        local < self.duration
    }

    fn sigma_at(&self, p: &Point3<f64>) -> f64 {
        let r2 = (p - self.center).norm_squared() / (self.radius * self.radius);
        if r2 >= 1.0 {
            0.0
        } else {
            self.sigma_boost * (1.0 - r2)
        }
    }

    /// Optical depth along `[0, d]` of the ray by midpoint sampling over the
    /// chord through the sphere.
    fn optical_depth(&self, origin: &Point3<f64>, dir: &Vector3<f64>, d: f64) -> f64 {
        let oc = origin - self.center;
        let b = oc.dot(dir);
        let c = oc.norm_squared() - self.radius * self.radius;
        let disc = b * b - c;
        if disc <= 0.0 {
            return 0.0;
        }
        let s = disc.sqrt();
        let t0 = (-b - s).max(0.0);
        let t1 = (-b + s).min(d);
        if t1 <= t0 {
            return 0.0;
        }
        let h = (t1 - t0) / PLUME_SAMPLES as f64;
        (0..PLUME_SAMPLES)
            .map(|i| self.sigma_at(&(origin + dir * (t0 + (i as f64 + 0.5) * h))))
            .sum::<f64>()
            * h
    }
}

#[derive(Debug, Clone)]
pub struct FogField {
    /// Baseline extinction, 1/m.
    pub sigma_base: f64,
    /// Extinction added by the noise at full value, 1/m.
    pub noise_amplitude: f64,
    /// Noise feature size, meters.
    pub noise_scale: f64,
    pub plumes: Vec<DustPlume>,
    noise: Value,
}

impl PartialEq for FogField {
    fn eq(&self, other: &Self) -> bool {
        self.sigma_base == other.sigma_base
            && self.noise_amplitude == other.noise_amplitude
            && self.noise_scale == other.noise_scale
            && self.plumes == other.plumes
    }
}

impl Default for FogField {
    fn default() -> Self {
        FogField::new(0.0, 0.0, 1.0, Vec::new())
    }
}

impl FogField {
    pub fn new(sigma_base: f64, noise_amplitude: f64, noise_scale: f64, plumes: Vec<DustPlume>) -> FogField {
        FogField {
            sigma_base: sigma_base.max(0.0),
            noise_amplitude: noise_amplitude.max(0.0),
            noise_scale: if noise_scale > 0.0 { noise_scale } else { 1.0 },
            plumes,
            noise: Value::new(FOG_SEED),
        }
    }

    /// Fog from the configuration. Plumes are placed uniformly inside
    /// `region` (typically the pile bounds) and staggered evenly over one
    /// period.
    pub fn from_config(cfg: &SimConfig, region: Option<(Point3<f64>, Point3<f64>)>) -> FogField {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_d057);
        let (lo, hi) = region.unwrap_or((Point3::new(-1.0, -1.0, 0.0), Point3::new(1.0, 1.0, 1.0)));
        let n = cfg.dust_plumes;
        let plumes = (0..n)
            .map(|i| {
                let mut axis = |k: usize| {
                    let (a, b) = (lo[k], hi[k].max(lo[k]));
                    if b > a { rng.gen_range(a..b) } else { a }
                };
                let center = Point3::new(axis(0), axis(1), axis(2).max(0.0));
                DustPlume {
                    center,
                    radius: cfg.dust_radius,
                    sigma_boost: cfg.dust_density,
                    start: cfg.dust_period * i as f64 / n as f64,
                    duration: cfg.dust_duration,
                    period: Some(cfg.dust_period),
                }
            })
            .collect();
        FogField::new(cfg.fog_density, cfg.fog_intensity, cfg.fog_scale, plumes)
    }

    /// Whether the homogeneous part is present, which turns escaping rays
    /// into pure fog colour.
    pub fn homogeneous(&self) -> bool {
        self.sigma_base > 0.0 || self.noise_amplitude > 0.0
    }

    pub fn sigma_at(&self, p: &Point3<f64>, t: f64) -> f64 {
        if self.noise_amplitude == 0.0 {
            return self.sigma_base;
        }
        let s = self.noise_scale;
        let n = noise01(self.noise.get([p.x / s, p.y / s, p.z / s, t / FOG_TIME_SCALE]));
        self.sigma_base + self.noise_amplitude * n
    }

    /// Transmittance from the camera to a surface at distance `d`, or to
    /// infinity when `d` is `None`.
    pub fn transmittance(&self, origin: &Point3<f64>, dir: &Vector3<f64>, d: Option<f64>, t: f64) -> f64 {
        let tau_plumes: f64 = self
            .plumes
            .iter()
            .filter(|p| p.active(t))
            .map(|p| p.optical_depth(origin, dir, d.unwrap_or(f64::INFINITY)))
            .sum();
        match d {
            Some(d) => (-(self.sigma_at(&(origin + dir * d), t) * d) - tau_plumes).exp(),
            None if self.homogeneous() => 0.0,
            None => (-tau_plumes).exp(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub width: u32,
    pub height: u32,
    /// Row-major RGB, 8 bits per channel, linear.
    pub rgb: Vec<u8>,
    /// Planar depth in meters, 0 where the ray escapes.
    pub depth: Vec<f32>,
    pub pose: CameraState,
    pub timestamp: f64,
    pub frame_index: u32,
}

impl Frame {
    pub fn pixel(&self, col: u32, row: u32) -> [u8; 3] {
        let i = 3 * (row * self.width + col) as usize;
        [self.rgb[i], self.rgb[i + 1], self.rgb[i + 2]]
    }

    pub fn depth_at(&self, col: u32, row: u32) -> f32 {
        self.depth[(row * self.width + col) as usize]
    }
}

/// Per-pixel float intermediates, row-major.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DebugBuffers {
    /// Light-dependent radiance (diffuse and specular, no ambient), before
    /// clamping.
    pub lit: Vec<[f32; 3]>,
    /// Surface radiance before clamping.
    pub surface: Vec<[f32; 3]>,
    /// Final radiance after fog, before quantization.
    pub radiance: Vec<[f32; 3]>,
    pub hits: Vec<Option<Point3<f64>>>,
}

/// Raw little-endian 32-bit floats, row-major.
pub fn write_f32_raw(path: &Path, data: &[[f32; 3]]) -> std::io::Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for px in data {
        for c in px {
            out.write_all(&c.to_le_bytes())?;
        }
    }
    out.flush()
}

struct Pixel {
    rgb: [u8; 3],
    depth: f32,
    lit: [f32; 3],
    surface: [f32; 3],
    radiance: [f32; 3],
    hit: Option<Point3<f64>>,
}

fn shade_pixel(scene: &Scene, cam: &CameraState, rig: &LightingRig, fog: &FogField, t: f64, col: u32, row: u32) -> Pixel {
    let dir = cam.pixel_ray(col, row);
    let origin = cam.position;
    let Some(hit) = scene.ray_cast(&origin, &dir) else {
        let v = (1.0 - fog.transmittance(&origin, &dir, None, t)) * FOG_COLOR;
        let q = quantize(v);
        return Pixel {
            rgb: [q; 3],
            depth: 0.0,
            lit: [0.0; 3],
            surface: [0.0; 3],
            radiance: [v as f32; 3],
            hit: None,
        };
    };
    let view = -dir;
    let mut diffuse = 0.0;
    let mut specular = 0.0;
    let mut add = |l: Vector3<f64>, a: f64| {
        let ndl = hit.normal.dot(&l);
        if ndl <= 0.0 {
            return;
        }
        diffuse += ndl * a;
        if hit.specular > 0.0 {
            let h = (l + view).normalize();
            specular += hit.specular * hit.normal.dot(&h).max(0.0).powi(SPECULAR_EXPONENT) * a;
        }
    };
    if let Some((l, a)) = rig.global.incident(&hit.point) {
        add(l, a);
    }
    if rig.headlamp_on && rig.headlamp_intensity > 0.0 {
        add(view, rig.headlamp_intensity / (hit.distance * hit.distance));
    }
    let lit = hit.albedo.map(|a| a * diffuse + specular);
    let surface = hit.albedo.map(|a| a * (AMBIENT + diffuse) + specular);
    let tr = fog.transmittance(&origin, &dir, Some(hit.distance), t);
    let radiance = surface.map(|s| tr * s.clamp(0.0, 1.0) + (1.0 - tr) * FOG_COLOR);
    Pixel {
        rgb: radiance.map(quantize),
        depth: (hit.distance * dir.dot(&cam.forward())) as f32,
        lit: lit.map(|v| v as f32),
        surface: surface.map(|v| v as f32),
        radiance: radiance.map(|v| v as f32),
        hit: Some(hit.point),
    }
}

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn render_rows(scene: &Scene, cam: &CameraState, rig: &LightingRig, fog: &FogField, t: f64) -> Vec<Vec<Pixel>> {
    let (w, h) = (cam.intrinsics.width, cam.intrinsics.height);
    (0..h)
        .into_par_iter()
        .map(|row| (0..w).map(|col| shade_pixel(scene, cam, rig, fog, t, col, row)).collect())
        .collect()
}

fn assemble(rows: &[Vec<Pixel>], cam: &CameraState, t: f64) -> Frame {
    let (w, h) = (cam.intrinsics.width, cam.intrinsics.height);
    let mut rgb = Vec::with_capacity((w * h * 3) as usize);
    let mut depth = Vec::with_capacity((w * h) as usize);
    for p in rows.iter().flatten() {
        rgb.extend_from_slice(&p.rgb);
        depth.push(p.depth);
    }
    Frame {
        width: w,
        height: h,
        rgb,
        depth,
        pose: *cam,
        timestamp: t,
        frame_index: 0,
    }
}

/// Renders one frame at time `t`. The frame index is left at 0 for the
/// caller to set.
pub fn render_frame(scene: &Scene, cam: &CameraState, rig: &LightingRig, fog: &FogField, t: f64) -> Frame {
    assemble(&render_rows(scene, cam, rig, fog, t), cam, t)
}

/// [`render_frame`] plus the float intermediates and hit points.
pub fn render_frame_debug(scene: &Scene, cam: &CameraState, rig: &LightingRig, fog: &FogField, t: f64) -> (Frame, DebugBuffers) {
    let rows = render_rows(scene, cam, rig, fog, t);
    let frame = assemble(&rows, cam, t);
    let px = rows.iter().flatten();
    let debug = DebugBuffers {
        lit: px.clone().map(|p| p.lit).collect(),
        surface: px.clone().map(|p| p.surface).collect(),
        radiance: px.clone().map(|p| p.radiance).collect(),
        hits: px.map(|p| p.hit).collect(),
    };
    (frame, debug)
}

/// Axis-aligned box as twelve outward-wound triangles.
pub fn box_triangles(lo: Point3<f64>, hi: Point3<f64>) -> Vec<[Point3<f64>; 3]> {
    let c = |i: usize| {
        Point3::new(
            if i & 1 == 0 { lo.x } else { hi.x },
            if i & 2 == 0 { lo.y } else { hi.y },
            if i & 4 == 0 { lo.z } else { hi.z },
        )
    };
    const QUADS: [[usize; 4]; 6] = [
        [0, 2, 3, 1],
        [4, 5, 7, 6],
        [0, 1, 5, 4],
        [2, 6, 7, 3],
        [0, 4, 6, 2],
        [1, 3, 7, 5],
    ];
    QUADS
        .iter()
        .flat_map(|q| [[c(q[0]), c(q[1]), c(q[2])], [c(q[0]), c(q[2]), c(q[3])]])
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::{Intrinsics, CameraState};
    use nalgebra::UnitQuaternion;

    fn small(cam: CameraState, n: u32) -> CameraState {
        CameraState {
            intrinsics: Intrinsics {
                width: n,
                height: n,
                ..Intrinsics::default()
            },
            ..cam
        }
    }

    fn wall(x: f64, albedo: f64) -> SceneObject {
        SceneObject {
            class_id: "wall".into(),
            triangles: box_triangles(Point3::new(x, -50.0, -50.0), Point3::new(x + 1.0, 50.0, 50.0)),
            albedo: [albedo; 3],
            texture: None,
            specular: SPECULAR_STRENGTH,
            to_local: Isometry3::identity(),
        }
    }

    #[test]
    fn ground_from_above() {
        let scene = Scene::new(Vec::new(), Some(GROUND_ALBEDO));
        let hit = scene.ray_cast(&Point3::new(0.0, 0.0, 10.0), &-Vector3::z()).unwrap();
        assert!((hit.distance - 10.0).abs() < 1e-12);
        assert_eq!(hit.normal, Vector3::z());
        assert_eq!(scene.class_id(hit.surface), "ground");
    }

    #[test]
    fn inside_closed_box_always_hits() {
        let lo = Point3::new(-1.0, -2.0, 0.5);
        let hi = Point3::new(2.0, 1.0, 3.0);
        let obj = SceneObject {
            class_id: "box".into(),
            triangles: box_triangles(lo, hi),
            albedo: [0.5; 3],
            texture: None,
            specular: 0.0,
            to_local: Isometry3::identity(),
        };
        let scene = Scene::new(vec![obj], None);
        let diag = (hi - lo).norm();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let o = Point3::new(rng.gen_range(-0.9..1.9), rng.gen_range(-1.9..0.9), rng.gen_range(0.6..2.9));
            let d = Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)).normalize();
            let hit = scene.ray_cast(&o, &d).expect("ray escaped a closed box");
            assert!(hit.distance <= diag);
            assert!(hit.normal.dot(&d) <= 0.0);
            assert!((hit.normal.norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn zenith_light_on_ground_is_uniform() {
        let scene = Scene::new(Vec::new(), Some(GROUND_ALBEDO));
        let cfg = SimConfig::default();
        let rig = global_light_from_config(&cfg, &mut ChaCha8Rng::seed_from_u64(0));
        let cam = small(CameraState::looking_at(Point3::new(0.0, 0.0, 5.0), Point3::new(0.0, 0.0, 0.0)).unwrap(), 64);
        let f = render_frame(&scene, &cam, &rig, &FogField::default(), 0.0);
        let first = f.pixel(0, 0);
        assert!(f.rgb.chunks(3).all(|p| p == first));
        // planar depth is constant for a camera square to the plane
        assert!((f.depth_at(32, 32) - 5.0).abs() < 1e-5);
        assert!((f.depth_at(0, 0) - 5.0).abs() < 1e-5);
        let oblique = small(CameraState::looking_at(Point3::new(0.0, 0.0, 5.0), Point3::new(5.0, 0.0, 0.0)).unwrap(), 64);
        let f = render_frame(&scene, &oblique, &rig, &FogField::default(), 0.0);
        assert!(f.depth_at(32, 63) < f.depth_at(32, 32));
        assert!(f.depth_at(32, 32) < f.depth_at(32, 0));
    }

    #[test]
    fn beer_lambert_center_pixel() {
        let scene = Scene::new(vec![wall(4.0, 0.6)], None);
        let mut rig = LightingRig::dark();
        rig.headlamp_on = true;
        rig.headlamp_intensity = 8.0;
        let cam = small(CameraState::new(Point3::origin(), UnitQuaternion::identity()), 33);
        let clear = render_frame_debug(&scene, &cam, &rig, &FogField::default(), 0.0).1;
        let fog = FogField::new(0.5, 0.0, 1.0, Vec::new());
        let f = render_frame(&scene, &cam, &rig, &fog, 0.0);
        assert!((f.depth_at(16, 16) - 4.0).abs() < 1e-5);
        let s = clear.surface[16 * 33 + 16][0] as f64;
        let tr = (-2.0f64).exp();
        let expected = tr * s.min(1.0) + (1.0 - tr) * FOG_COLOR;
        assert!((f.pixel(16, 16)[0] as f64 - expected * 255.0).abs() <= 1.0);
    }

    #[test]
    fn headlamp_inverse_square() {
        let mut rig = LightingRig::dark();
        rig.headlamp_on = true;
        rig.headlamp_intensity = 0.2;
        let cam = small(CameraState::new(Point3::origin(), UnitQuaternion::identity()), 9);
        let at = |x| {
            let scene = Scene::new(vec![wall(x, 0.5)], None);
            render_frame_debug(&scene, &cam, &rig, &FogField::default(), 0.0).1.lit[4 * 9 + 4][0] as f64
        };
        assert!((at(1.0) / at(2.0) - 4.0).abs() < 1e-6);
    }

    #[test]
    fn misses_without_fog_are_black_and_zero_depth() {
        let scene = Scene::new(Vec::new(), None);
        let cam = small(CameraState::default(), 8);
        let f = render_frame(&scene, &cam, &LightingRig::dark(), &FogField::default(), 0.0);
        assert!(f.rgb.iter().all(|&v| v == 0));
        assert!(f.depth.iter().all(|&d| d == 0.0));
        let fog = FogField::new(0.1, 0.0, 1.0, Vec::new());
        let f = render_frame(&scene, &cam, &LightingRig::dark(), &fog, 0.0);
        assert!(f.rgb.iter().all(|&v| v == quantize(FOG_COLOR)));
    }

    #[test]
    fn light_rotation_verbatim_and_random_reproducible() {
        let mut cfg = SimConfig {
            light_rot: [50.0, -30.0, 0.0],
            ..SimConfig::default()
        };
        let rig = global_light_from_config(&cfg, &mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(rig.global.rotation_deg, [50.0, -30.0, 0.0]);
        cfg.set_light_rot = false;
        let a = global_light_from_config(&cfg, &mut ChaCha8Rng::seed_from_u64(9));
        let b = global_light_from_config(&cfg, &mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(a, b);
        // elevation is the angle of the reversed light direction above the horizon
        let elev = (-a.global.direction()).z.asin().to_degrees();
        assert!((15.0 - 1e-9..=90.0 + 1e-9).contains(&elev));
    }

    #[test]
    fn rest_direction_points_down() {
        let rig = LightingRig::dark();
        assert!((rig.global.direction() - -Vector3::z()).norm() < 1e-12);
    }

    #[test]
    fn spot_cone_falloff() {
        let light = GlobalLight {
            kind: LightType::Spot,
            intensity: 1.0,
            rotation_deg: [0.0; 3],
            position: Point3::new(0.0, 0.0, 1.0),
            cone_deg: 30.0,
        };
        let (_, a) = light.incident(&Point3::origin()).unwrap();
        assert!((a - 1.0).abs() < 1e-12);
        // 20 degrees off axis is outside the 15 degree half angle
        assert!(light.incident(&Point3::new(20f64.to_radians().tan(), 0.0, 0.0)).is_none());
    }

    #[test]
    fn plume_windows_and_depth() {
        let p = DustPlume {
            center: Point3::new(5.0, 0.0, 0.0),
            radius: 1.0,
            sigma_boost: 3.0,
            start: 1.0,
            duration: 2.0,
            period: Some(8.0),
        };
        assert!(!p.active(0.5));
        assert!(p.active(1.0));
        assert!(!p.active(3.5));
        assert!(p.active(9.5));
        // exact integral of 3(1 - r^2) over the diameter is 4
        let tau = p.optical_depth(&Point3::origin(), &Vector3::x(), 100.0);
        assert!((tau - 4.0).abs() < 0.05);
        assert_eq!(p.optical_depth(&Point3::origin(), &Vector3::x(), 3.0), 0.0);
    }
}
