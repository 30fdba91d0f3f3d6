//! Debris archetypes and weighted selection.
//!
//! An asset class is a convex collision shape plus physical and visual
//! properties. Classes are loaded from a directory holding one `key=value`
//! definition file per class (`*.asset`); the file stem is the class id.
//!
//! ```text
//! shape=box
//! dims=2.0 0.2 1.0
//! density=2400
//! friction=0.6
//! weight=4
//! albedo=0.55 0.55 0.52
//! ```
//!
//! Boxes take `dims=w h d`, cylinders `dims=radius height` (axis along local
//! Z) and hulls `vertices=x y z; x y z; ...`. Hull vertices are re-centred on
//! the solid's centroid so that a body's origin is always its centre of mass.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Point3, Vector3};
use rand::Rng;
use rapier3d_f64::parry::transformation::convex_hull;

/// Number of facets around a cylinder when it is triangulated.
pub const CYLINDER_SEGMENTS: usize = 48;

pub const DEFAULT_RESTITUTION: f64 = 0.05;

#[derive(Debug, thiserror::Error)]
pub enum CatalogError {
    #[error("no asset classes in {}", .0.display())]
    Empty(PathBuf),
    #[error("{}:{line}: {msg}", path.display())]
    Malformed {
        path: PathBuf,
        line: usize,
        msg: String,
    },
    #[error("duplicate asset id `{0}`")]
    DuplicateId(String),
    #[error("degenerate asset `{id}`: {reason}")]
    Degenerate { id: String, reason: String },
    #[error("asset weights are all zero")]
    ZeroWeights,
    #[error("weight given for unknown asset class `{0}`")]
    UnknownClass(String),
    #[error("failed to read {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Procedural surface textures (value noise over the albedo).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Texture {
    /// Coarse mottling, feature size ~8 cm.
    Noise,
    /// Fine grain, feature size ~2 cm.
    FineNoise,
}

impl Texture {
    fn parse(s: &str) -> Option<Texture> {
        match s {
            "noise" => Some(Texture::Noise),
            "fine_noise" => Some(Texture::FineNoise),
            _ => None,
        }
    }

    pub fn id(&self) -> &'static str {
        match self {
            Texture::Noise => "noise",
            Texture::FineNoise => "fine_noise",
        }
    }

    /// Feature size in meters.
    pub fn scale(&self) -> f64 {
        match self {
            Texture::Noise => 0.08,
            Texture::FineNoise => 0.02,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvexHull {
    vertices: Vec<Point3<f64>>,
    triangles: Vec<[u32; 3]>,
    /// Outward unit normal and offset per face.
    planes: Vec<(Vector3<f64>, f64)>,
    volume: f64,
    /// Second moment ∫ x xᵀ dV about the centroid, unit density.
    covariance: Matrix3<f64>,
}

impl ConvexHull {
    /// Hull of a point set. Fails for fewer than four points or coplanar
    /// input. The result is centred on the solid's centroid.
    pub fn new(points: &[Point3<f64>]) -> Result<ConvexHull, String> {
        if points.len() < 4 {
            return Err(format!("hull needs at least 4 vertices, got {}", points.len()));
        }
        if points.iter().any(|p| !p.coords.iter().all(|c| c.is_finite())) {
            return Err("non-finite hull vertex".into());
        }
        check_spans_volume(points)?;

        let (verts, mut tris) = convex_hull(points);
        let (mut volume, centroid, mut covariance) = polyhedron_moments(&verts, &tris);
        if volume < 0.0 {
            for t in &mut tris {
                t.swap(1, 2);
            }
            volume = -volume;
            covariance = -covariance;
        }
        if volume <= 0.0 {
            return Err("hull has zero volume".into());
        }
        // shift the second moment from the input origin to the centroid
        covariance -= volume * centroid.coords * centroid.coords.transpose();
        let vertices: Vec<Point3<f64>> = verts.iter().map(|p| p - centroid.coords).collect();
        let planes = tris
            .iter()
            .map(|t| {
                let [a, b, c] = t.map(|i| vertices[i as usize]);
                let n = (b - a).cross(&(c - a)).normalize();
                (n, n.dot(&a.coords))
            })
            .collect();
        Ok(ConvexHull {
            vertices,
            triangles: tris,
            planes,
            volume,
            covariance,
        })
    }

    pub fn vertices(&self) -> &[Point3<f64>] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[u32; 3]] {
        &self.triangles
    }
}

fn check_spans_volume(points: &[Point3<f64>]) -> Result<(), String> {
    let p0 = points[0];
    let extent = points.iter().map(|p| (p - p0).norm()).fold(0.0, f64::max);
    let eps = 1e-9 * extent.max(1e-12);
    let p1 = *points
        .iter()
        .max_by(|a, b| (*a - p0).norm().total_cmp(&(*b - p0).norm()))
        .unwrap();
    let axis = p1 - p0;
    if axis.norm() <= eps {
        return Err("hull vertices coincide".into());
    }
    let p2 = *points
        .iter()
        .max_by(|a, b| axis.cross(&(*a - p0)).norm().total_cmp(&axis.cross(&(*b - p0)).norm()))
        .unwrap();
    let normal = axis.cross(&(p2 - p0));
    if normal.norm() <= eps * axis.norm() {
        return Err("hull vertices are collinear".into());
    }
    let normal = normal.normalize();
    let height = points.iter().map(|p| normal.dot(&(p - p0)).abs()).fold(0.0, f64::max);
    if height <= eps {
        return Err("hull vertices are coplanar".into());
    }
    Ok(())
}

/// Signed volume, centroid and second moment (about the origin) of a closed
/// triangle mesh, by decomposition into origin-apex tetrahedra.
fn polyhedron_moments(verts: &[Point3<f64>], tris: &[[u32; 3]]) -> (f64, Point3<f64>, Matrix3<f64>) {
    let canonical = Matrix3::new(2.0, 1.0, 1.0, 1.0, 2.0, 1.0, 1.0, 1.0, 2.0);
    let mut volume = 0.0;
    let mut first = Vector3::zeros();
    let mut covariance = Matrix3::zeros();
    for t in tris {
        let [a, b, c] = t.map(|i| verts[i as usize].coords);
        let det = a.dot(&b.cross(&c));
        volume += det / 6.0;
        first += det * (a + b + c) / 24.0;
        let m = Matrix3::from_columns(&[a, b, c]);
        covariance += det / 120.0 * m * canonical * m.transpose();
    }
    let centroid = if volume != 0.0 { first / volume } else { Vector3::zeros() };
    (volume, Point3::from(centroid), covariance)
}

#[derive(Debug, Clone, PartialEq)]
pub enum Shape {
    /// Full edge lengths along local X, Y, Z.
    Box { dims: Vector3<f64> },
    /// Axis along local Z.
    Cylinder { radius: f64, height: f64 },
    Hull(ConvexHull),
}

impl Shape {
    pub fn volume(&self) -> f64 {
        match self {
            Shape::Box { dims } => dims.x * dims.y * dims.z,
            Shape::Cylinder { radius, height } => std::f64::consts::PI * radius * radius * height,
            Shape::Hull(h) => h.volume,
        }
    }

    /// Inertia tensor about the centre of mass, local axes.
    pub fn inertia(&self, mass: f64) -> Matrix3<f64> {
        match self {
            Shape::Box { dims } => {
                let (w, h, d) = (dims.x, dims.y, dims.z);
                Matrix3::from_diagonal(&Vector3::new(h * h + d * d, w * w + d * d, w * w + h * h))
                    * (mass / 12.0)
            }
            Shape::Cylinder { radius, height } => {
                let r2 = radius * radius;
                let side = mass * (3.0 * r2 + height * height) / 12.0;
                Matrix3::from_diagonal(&Vector3::new(side, side, mass * r2 / 2.0))
            }
            Shape::Hull(h) => {
                let density = mass / h.volume;
                let c = h.covariance * density;
                Matrix3::identity() * c.trace() - c
            }
        }
    }

    /// Point-in-solid test in local coordinates (boundary counts as inside).
    pub fn contains(&self, p: &Point3<f64>) -> bool {
        match self {
            Shape::Box { dims } => {
                p.x.abs() <= dims.x * 0.5 && p.y.abs() <= dims.y * 0.5 && p.z.abs() <= dims.z * 0.5
            }
            Shape::Cylinder { radius, height } => {
                p.z.abs() <= height * 0.5 && p.x * p.x + p.y * p.y <= radius * radius
            }
            Shape::Hull(h) => h.planes.iter().all(|(n, d)| n.dot(&p.coords) <= *d + 1e-12),
        }
    }

    /// Support point: the point of the solid furthest along `dir`.
    pub fn support(&self, dir: &Vector3<f64>) -> Point3<f64> {
        match self {
            Shape::Box { dims } => Point3::new(
                dims.x * 0.5 * dir.x.signum(),
                dims.y * 0.5 * dir.y.signum(),
                dims.z * 0.5 * dir.z.signum(),
            ),
            Shape::Cylinder { radius, height } => {
                let radial = Vector3::new(dir.x, dir.y, 0.0);
                let r = radial.norm();
                let rim = if r > 0.0 { radial * (radius / r) } else { Vector3::zeros() };
                Point3::new(rim.x, rim.y, height * 0.5 * dir.z.signum())
            }
            Shape::Hull(h) => *h
                .vertices
                .iter()
                .max_by(|a, b| a.coords.dot(dir).total_cmp(&b.coords.dot(dir)))
                .expect("hull has vertices"),
        }
    }

    /// Radius of the bounding sphere centred on the local origin.
    pub fn bounding_radius(&self) -> f64 {
        match self {
            Shape::Box { dims } => dims.norm() * 0.5,
            Shape::Cylinder { radius, height } => (radius * radius + height * height * 0.25).sqrt(),
            Shape::Hull(h) => h.vertices.iter().map(|v| v.coords.norm()).fold(0.0, f64::max),
        }
    }

    /// Outward-facing (counter-clockwise) triangulation in local coordinates.
    pub fn triangles(&self) -> Vec<[Point3<f64>; 3]> {
        match self {
            Shape::Box { dims } => {
                let h = dims * 0.5;
                let c = |i: usize| {
                    Point3::new(
                        if i & 1 == 0 { -h.x } else { h.x },
                        if i & 2 == 0 { -h.y } else { h.y },
                        if i & 4 == 0 { -h.z } else { h.z },
                    )
                };
                const FACES: [[usize; 4]; 6] = [
                    [0, 2, 6, 4], // -x
                    [1, 5, 7, 3], // +x
                    [0, 4, 5, 1], // -y
                    [2, 3, 7, 6], // +y
                    [0, 1, 3, 2], // -z
                    [4, 6, 7, 5], // +z
                ];
                FACES
                    .iter()
                    .flat_map(|f| [[c(f[0]), c(f[2]), c(f[1])], [c(f[0]), c(f[3]), c(f[2])]])
                    .collect()
            }
            Shape::Cylinder { radius, height } => {
                let n = CYLINDER_SEGMENTS;
                let hz = height * 0.5;
                let rim = |i: usize, z: f64| {
                    let a = std::f64::consts::TAU * (i % n) as f64 / n as f64;
                    Point3::new(radius * a.cos(), radius * a.sin(), z)
                };
                let mut tris = Vec::with_capacity(4 * n - 4);
                for i in 0..n {
                    let (b0, b1, t0, t1) = (rim(i, -hz), rim(i + 1, -hz), rim(i, hz), rim(i + 1, hz));
                    tris.push([b0, b1, t1]);
                    tris.push([b0, t1, t0]);
                }
                for i in 1..n - 1 {
                    tris.push([rim(0, hz), rim(i, hz), rim(i + 1, hz)]);
                    tris.push([rim(0, -hz), rim(i + 1, -hz), rim(i, -hz)]);
                }
                tris
            }
            Shape::Hull(h) => h
                .triangles
                .iter()
                .map(|t| t.map(|i| h.vertices[i as usize]))
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssetClass {
    pub id: String,
    pub shape: Shape,
    /// kg/m³
    pub density: f64,
    pub friction: f64,
    pub restitution: f64,
    pub weight: f64,
    pub albedo: [f64; 3],
    pub texture: Option<Texture>,
    mass: f64,
    inertia: Matrix3<f64>,
}

impl AssetClass {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        id: impl Into<String>,
        shape: Shape,
        density: f64,
        friction: f64,
        restitution: f64,
        weight: f64,
        albedo: [f64; 3],
        texture: Option<Texture>,
    ) -> Result<AssetClass, CatalogError> {
        let id = id.into();
        let degenerate = |reason: String| CatalogError::Degenerate {
            id: id.clone(),
            reason,
        };
        match &shape {
            Shape::Box { dims } if !dims.iter().all(|&d| d > 0.0 && d.is_finite()) => {
                return Err(degenerate(format!("box dimensions must be > 0, got {dims:?}")));
            }
            Shape::Cylinder { radius, height } if !(*radius > 0.0 && *height > 0.0) => {
                return Err(degenerate("cylinder radius and height must be > 0".into()));
            }
            _ => {}
        }
        if !(density > 0.0 && density.is_finite()) {
            return Err(degenerate("density must be > 0".into()));
        }
        if !(friction >= 0.0 && friction.is_finite()) {
            return Err(degenerate("friction must be >= 0".into()));
        }
        if !(0.0..=1.0).contains(&restitution) {
            return Err(degenerate("restitution must be in [0, 1]".into()));
        }
        if !(weight >= 0.0 && weight.is_finite()) {
            return Err(degenerate("weight must be >= 0".into()));
        }
        if !albedo.iter().all(|a| (0.0..=1.0).contains(a)) {
            return Err(degenerate("albedo components must be in [0, 1]".into()));
        }
        let mass = density * shape.volume();
        let inertia = shape.inertia(mass);
        if !(mass > 0.0) || inertia.cholesky().is_none() {
            return Err(degenerate("mass properties are not positive definite".into()));
        }
        Ok(AssetClass {
            id,
            shape,
            density,
            friction,
            restitution,
            weight,
            albedo,
            texture,
            mass,
            inertia,
        })
    }

    pub fn mass(&self) -> f64 {
        self.mass
    }

    pub fn inertia(&self) -> &Matrix3<f64> {
        &self.inertia
    }

    /// Parse one definition file's contents.
    pub fn parse(id: &str, text: &str, origin: &Path) -> Result<AssetClass, CatalogError> {
        let mut fields: BTreeMap<&str, (usize, &str)> = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(malformed(origin, i + 1, format!("expected key=value, got `{line}`")));
            };
            fields.insert(k.trim(), (i + 1, v.trim()));
        }
        let get = |key: &str| fields.get(key).copied();
        let numbers = |key: &str, line: usize, v: &str| -> Result<Vec<f64>, CatalogError> {
            v.split_whitespace()
                .map(|t| {
                    t.parse::<f64>()
                        .ok()
                        .filter(|x| x.is_finite())
                        .ok_or_else(|| malformed(origin, line, format!("`{key}`: bad number `{t}`")))
                })
                .collect()
        };
        let scalar = |key: &str, default: Option<f64>| -> Result<f64, CatalogError> {
            match get(key) {
                Some((line, v)) => {
                    let n = numbers(key, line, v)?;
                    if n.len() != 1 {
                        return Err(malformed(origin, line, format!("`{key}` expects one number")));
                    }
                    Ok(n[0])
                }
                None => default.ok_or_else(|| malformed(origin, 0, format!("missing `{key}`"))),
            }
        };

        for key in fields.keys() {
            if !matches!(
                *key,
                "id" | "shape" | "dims" | "vertices" | "density" | "friction" | "restitution" | "weight"
                    | "albedo" | "texture"
            ) {
                let (line, _) = fields[key];
                return Err(malformed(origin, line, format!("unknown key `{key}`")));
            }
        }
        let id = get("id").map(|(_, v)| v).unwrap_or(id);
        let (shape_line, shape_kind) = get("shape").ok_or_else(|| malformed(origin, 0, "missing `shape`".into()))?;
        let shape = match shape_kind {
            "box" | "cylinder" => {
                let (line, v) = get("dims").ok_or_else(|| malformed(origin, 0, "missing `dims`".into()))?;
                let d = numbers("dims", line, v)?;
                match (shape_kind, d.as_slice()) {
                    ("box", &[w, h, dd]) => Shape::Box {
                        dims: Vector3::new(w, h, dd),
                    },
                    ("cylinder", &[radius, height]) => Shape::Cylinder { radius, height },
                    ("box", _) => return Err(malformed(origin, line, "box dims are `w h d`".into())),
                    _ => return Err(malformed(origin, line, "cylinder dims are `radius height`".into())),
                }
            }
            "hull" => {
                let (line, v) =
                    get("vertices").ok_or_else(|| malformed(origin, 0, "missing `vertices`".into()))?;
                let mut pts = Vec::new();
                for chunk in v.split(';').map(str::trim).filter(|c| !c.is_empty()) {
                    match numbers("vertices", line, chunk)?.as_slice() {
                        &[x, y, z] => pts.push(Point3::new(x, y, z)),
                        _ => return Err(malformed(origin, line, format!("vertex `{chunk}` is not `x y z`"))),
                    }
                }
                Shape::Hull(ConvexHull::new(&pts).map_err(|reason| CatalogError::Degenerate {
                    id: id.to_string(),
                    reason,
                })?)
            }
            other => return Err(malformed(origin, shape_line, format!("unknown shape `{other}`"))),
        };
        let albedo = match get("albedo") {
            Some((line, v)) => match numbers("albedo", line, v)?.as_slice() {
                &[r, g, b] => [r, g, b],
                _ => return Err(malformed(origin, line, "albedo is `r g b`".into())),
            },
            None => [0.5, 0.5, 0.5],
        };
        let texture = match get("texture") {
            None | Some((_, "none")) => None,
            Some((line, v)) => {
                Some(Texture::parse(v).ok_or_else(|| malformed(origin, line, format!("unknown texture `{v}`")))?)
            }
        };
        AssetClass::new(
            id,
            shape,
            scalar("density", None)?,
            scalar("friction", None)?,
            scalar("restitution", Some(DEFAULT_RESTITUTION))?,
            scalar("weight", Some(1.0))?,
            albedo,
            texture,
        )
    }
}

fn malformed(path: &Path, line: usize, msg: String) -> CatalogError {
    CatalogError::Malformed {
        path: path.to_path_buf(),
        line,
        msg,
    }
}

/// An ordered set of asset classes with a cumulative weight table.
#[derive(Debug, Clone, PartialEq)]
pub struct Catalog {
    classes: Vec<AssetClass>,
    cumulative: Vec<f64>,
}

const BUNDLED: &[(&str, &str)] = &[
    ("brick", include_str!("../assets/brick.asset")),
    ("cinder_block", include_str!("../assets/cinder_block.asset")),
    ("culvert", include_str!("../assets/culvert.asset")),
    ("rubble_chunk", include_str!("../assets/rubble_chunk.asset")),
    ("slab", include_str!("../assets/slab.asset")),
];

impl Catalog {
    pub fn new(classes: Vec<AssetClass>) -> Result<Catalog, CatalogError> {
        let mut seen = HashSet::new();
        for c in &classes {
            if !seen.insert(c.id.as_str()) {
                return Err(CatalogError::DuplicateId(c.id.clone()));
            }
        }
        let cumulative: Vec<f64> = classes
            .iter()
            .scan(0.0, |acc, c| {
                *acc += c.weight;
                Some(*acc)
            })
            .collect();
        if !(cumulative.last().copied().unwrap_or(0.0) > 0.0) {
            return Err(CatalogError::ZeroWeights);
        }
        Ok(Catalog { classes, cumulative })
    }

    /// The in-repo catalog: slabs, cinder blocks, bricks, culverts and
    /// irregular chunks.
    pub fn bundled() -> Catalog {
        let classes = BUNDLED
            .iter()
            .map(|(id, text)| AssetClass::parse(id, text, Path::new(id)).expect("bundled asset parses"))
            .collect();
        Catalog::new(classes).expect("bundled catalog is valid")
    }

    /// Directory holding the bundled definition files.
    pub fn bundled_dir() -> PathBuf {
        Path::new(env!("CARGO_MANIFEST_DIR")).join("assets")
    }

    pub fn classes(&self) -> &[AssetClass] {
        &self.classes
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn get(&self, index: usize) -> &AssetClass {
        &self.classes[index]
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.classes.iter().position(|c| c.id == id)
    }

    pub fn total_weight(&self) -> f64 {
        *self.cumulative.last().expect("catalog is non-empty")
    }

    /// Copy of this catalog with selection weights replaced. Classes absent
    /// from `weights` get weight 0.
    pub fn with_weights(&self, weights: &BTreeMap<String, f64>) -> Result<Catalog, CatalogError> {
        if let Some(unknown) = weights.keys().find(|id| self.index_of(id).is_none()) {
            return Err(CatalogError::UnknownClass(unknown.clone()));
        }
        let classes = self
            .classes
            .iter()
            .map(|c| AssetClass {
                weight: weights.get(&c.id).copied().unwrap_or(0.0),
                ..c.clone()
            })
            .collect();
        Catalog::new(classes)
    }

    /// Draw a class index with probability weight/total. Consumes exactly one
    /// `u64` from the generator.
    pub fn sample_class<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let total = self.total_weight();
        let u = rng.gen::<f64>() * total;
        let i = self.cumulative.partition_point(|&c| c <= u);
        if i < self.classes.len() {
            i
        } else {
            // u rounded up to the total: take the last class that can be drawn
            self.classes.iter().rposition(|c| c.weight > 0.0).expect("total weight > 0")
        }
    }
}

/// Load every `*.asset` file in `dir`, in file-name order.
pub fn load_catalog(dir: &Path) -> Result<Catalog, CatalogError> {
    let io = |source| CatalogError::Io {
        path: dir.to_path_buf(),
        source,
    };
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "asset"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(CatalogError::Empty(dir.to_path_buf()));
    }
    let classes = files
        .iter()
        .map(|path| {
            let text = fs::read_to_string(path).map_err(|source| CatalogError::Io {
                path: path.clone(),
                source,
            })?;
            let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("asset");
            AssetClass::parse(stem, &text, path)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Catalog::new(classes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn unit_box(id: &str, weight: f64) -> AssetClass {
        AssetClass::new(
            id,
            Shape::Box {
                dims: Vector3::new(1.0, 1.0, 1.0),
            },
            2400.0,
            0.6,
            0.05,
            weight,
            [0.5; 3],
            None,
        )
        .unwrap()
    }

    #[test]
    fn unit_cube_mass() {
        assert_eq!(unit_box("a", 1.0).mass(), 2400.0);
    }

    #[test]
    fn box_inertia_matches_closed_form() {
        let (w, h, d) = (2.0, 0.2, 1.0);
        let class = AssetClass::parse("s", "shape=box\ndims=2.0 0.2 1.0\ndensity=2400\nfriction=0.6", Path::new("s")).unwrap();
        let m = class.mass();
        let expected = Vector3::new(h * h + d * d, w * w + d * d, w * w + h * h) * (m / 12.0);
        let got = class.inertia().diagonal();
        for i in 0..3 {
            assert!(((got[i] - expected[i]) / expected[i]).abs() < 1e-9);
        }
    }

    #[test]
    fn hull_of_box_corners_matches_box() {
        let dims = Vector3::new(0.4, 0.3, 0.2);
        let bx = Shape::Box { dims };
        let corners: Vec<Point3<f64>> = bx.triangles().iter().flatten().copied().collect();
        // offset the corners so the centroid shift is exercised
        let shifted: Vec<_> = corners.iter().map(|p| p + Vector3::new(1.0, -2.0, 0.5)).collect();
        let hull = Shape::Hull(ConvexHull::new(&shifted).unwrap());
        assert!((hull.volume() - bx.volume()).abs() < 1e-12);
        let (ib, ih) = (bx.inertia(3.0), hull.inertia(3.0));
        assert!((ib - ih).norm() < 1e-12, "{ib} vs {ih}");
        assert!(hull.contains(&Point3::new(0.19, 0.14, -0.09)));
        assert!(!hull.contains(&Point3::new(0.21, 0.0, 0.0)));
    }

    #[test]
    fn box_mesh_is_outward() {
        let bx = Shape::Box { dims: Vector3::new(0.4, 0.2, 0.1) };
        let tris = bx.triangles();
        let verts: Vec<Point3<f64>> = tris.iter().flatten().copied().collect();
        let idx: Vec<[u32; 3]> = (0..tris.len() as u32).map(|i| [3 * i, 3 * i + 1, 3 * i + 2]).collect();
        let (vol, _, _) = polyhedron_moments(&verts, &idx);
        assert!((vol - 0.008).abs() < 1e-12, "{vol}");
        for t in &tris {
            let n = (t[1] - t[0]).cross(&(t[2] - t[0]));
            let c = (t[0].coords + t[1].coords + t[2].coords) / 3.0;
            assert!(n.dot(&c) > 0.0);
        }
    }

    #[test]
    fn cylinder_mesh_is_closed_and_outward() {
        let cyl = Shape::Cylinder { radius: 0.3, height: 0.6 };
        let tris = cyl.triangles();
        let verts: Vec<Point3<f64>> = tris.iter().flatten().copied().collect();
        let idx: Vec<[u32; 3]> = (0..tris.len() as u32).map(|i| [3 * i, 3 * i + 1, 3 * i + 2]).collect();
        let (vol, centroid, _) = polyhedron_moments(&verts, &idx);
        let n = CYLINDER_SEGMENTS as f64;
        let prism = 0.5 * n * (std::f64::consts::TAU / n).sin() * 0.09 * 0.6;
        assert!((vol - prism).abs() < 1e-12);
        assert!(centroid.coords.norm() < 1e-12);
    }

    #[test]
    fn coplanar_hull_is_degenerate() {
        let pts = [
            Point3::new(0.0, 0.0, 0.0),
            Point3::new(1.0, 0.0, 0.0),
            Point3::new(0.0, 1.0, 0.0),
            Point3::new(1.0, 1.0, 0.0),
        ];
        assert!(ConvexHull::new(&pts).is_err());
        assert!(ConvexHull::new(&pts[..3]).is_err());
        let text = "shape=hull\nvertices=0 0 0; 1 0 0; 0 1 0; 1 1 0\ndensity=1\nfriction=0.5";
        assert!(matches!(
            AssetClass::parse("flat", text, Path::new("flat")),
            Err(CatalogError::Degenerate { .. })
        ));
    }

    #[test]
    fn zero_dimension_box_is_degenerate() {
        let text = "shape=box\ndims=1 0 1\ndensity=1\nfriction=0.5";
        assert!(matches!(
            AssetClass::parse("thin", text, Path::new("thin")),
            Err(CatalogError::Degenerate { .. })
        ));
    }

    #[test]
    fn malformed_definitions() {
        let p = Path::new("x");
        assert!(AssetClass::parse("x", "shape=box\ndims=1 1\ndensity=1\nfriction=1", p).is_err());
        assert!(AssetClass::parse("x", "shape=sphere\ndims=1\ndensity=1\nfriction=1", p).is_err());
        assert!(AssetClass::parse("x", "shape=box\ndims=1 1 1\nfriction=1", p).is_err());
        assert!(AssetClass::parse("x", "shape=box\ndims=1 1 1\ndensity=1\nfriction=1\ncolour=red", p).is_err());
        assert!(AssetClass::parse("x", "shape box", p).is_err());
    }

    #[test]
    fn duplicate_ids_rejected() {
        let err = Catalog::new(vec![unit_box("a", 1.0), unit_box("a", 2.0)]).unwrap_err();
        assert!(matches!(err, CatalogError::DuplicateId(id) if id == "a"));
    }

    #[test]
    fn all_zero_weights_rejected() {
        assert!(matches!(
            Catalog::new(vec![unit_box("a", 0.0), unit_box("b", 0.0)]),
            Err(CatalogError::ZeroWeights)
        ));
    }

    #[test]
    fn degenerate_distribution_always_picks_the_weighted_class() {
        let cat = Catalog::new(vec![unit_box("a", 1.0), unit_box("b", 0.0)]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert!((0..10_000).all(|_| cat.sample_class(&mut rng) == 0));
    }

    #[test]
    fn sampling_consumes_one_draw() {
        let cat = Catalog::new(vec![unit_box("a", 1.0), unit_box("b", 3.0)]).unwrap();
        let mut a = ChaCha8Rng::seed_from_u64(11);
        let mut b = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10 {
            cat.sample_class(&mut a);
            let _: u64 = b.gen();
        }
        assert_eq!(a.gen::<u64>(), b.gen::<u64>());
    }

    #[test]
    fn bundled_catalog_has_expected_classes() {
        let cat = Catalog::bundled();
        assert!(cat.len() >= 4);
        for id in ["slab", "cinder_block", "brick", "culvert"] {
            assert!(cat.index_of(id).is_some(), "missing {id}");
        }
        for (id, w) in crate::config::DEFAULT_ASSET_WEIGHTS {
            assert_eq!(cat.get(cat.index_of(id).unwrap()).weight, *w);
        }
        for c in cat.classes() {
            assert!(c.shape.bounding_radius() < 1.0, "{} too large for the drop clearance", c.id);
        }
    }

    #[test]
    fn load_from_directory_matches_bundled() {
        let cat = load_catalog(&Catalog::bundled_dir()).unwrap();
        assert_eq!(cat, Catalog::bundled());
    }

    #[test]
    fn empty_directory() {
        let dir = tempfile::tempdir().unwrap();
        let err = load_catalog(dir.path()).unwrap_err();
        assert!(err.to_string().contains("no asset classes"));
    }

    #[test]
    fn with_weights_rejects_unknown_class() {
        let cat = Catalog::bundled();
        let w: BTreeMap<String, f64> = [("crushed_car".to_string(), 1.0)].into();
        assert!(matches!(cat.with_weights(&w), Err(CatalogError::UnknownClass(_))));
    }
}
