//! Layered pile deposition.
//!
//! A pile is built one layer at a time: `numobjs` bodies are spawned at
//! random positions and orientations on a plane above the current pile, then
//! rigid-body dynamics run until every body has stayed below the sleep
//! thresholds for `sleep_frames` consecutive steps. Contact dynamics are
//! delegated to rapier; this module owns spawning, the sleep contract and the
//! post-settling checks.

use std::f64::consts::TAU;
use std::num::NonZeroUsize;
use std::sync::{Arc, OnceLock};

use nalgebra::{Isometry3, Point3, Translation3, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rapier3d_f64::parry::query;
use rapier3d_f64::parry::shape::SharedShape;
use rapier3d_f64::prelude::*;
use sha2::{Digest, Sha256};

use crate::assets::{AssetClass, Catalog, CatalogError, Shape};
use crate::config::{config_hash, PositionDistribution, SimConfig};
use crate::render::Scene;

/// Vertical gap between the pile top and a new layer's spawn plane.
pub const DROP_CLEARANCE: f64 = 1.0;
/// Placement attempts per body before the layer is declared unplaceable.
pub const SPAWN_ATTEMPTS: usize = 100;
/// Oscillation amplitude, in multiples of the hold envelope, beyond which a
/// body counts as genuinely moving.
const OSCILLATION_SPAN: f64 = 3.0;
/// Facets of the prism that stands in for a cylinder in contact handling.
pub const COLLISION_SEGMENTS: usize = 16;

#[derive(Debug, thiserror::Error)]
pub enum DepositionError {
    #[error("layer {layer}: placed only {placed} of {requested} bodies without overlap; the spawn footprint is too small")]
    SpawnBudgetExhausted { layer: u32, placed: u32, requested: u32 },
    #[error(
        "layer {layer}: not settled after {steps} steps; {} bodies still moving (first: {:?}), kinetic energy {kinetic_energy:.6} J",
        awake.len(),
        &awake[..awake.len().min(8)]
    )]
    NotSettled {
        layer: u32,
        steps: u64,
        awake: Vec<usize>,
        kinetic_energy: f64,
    },
    #[error("invalid physics parameters: {0}")]
    InvalidParams(String),
    #[error("non-finite state for body {0}")]
    NonFinite(usize),
    #[error(transparent)]
    Catalog(#[from] CatalogError),
}

/// A placed debris body.
#[derive(Debug, Clone, PartialEq)]
pub struct BodyInstance {
    pub class_index: usize,
    pub class_id: String,
    pub layer: u32,
    /// Centre of mass, meters.
    pub position: Vector3<f64>,
    pub orientation: UnitQuaternion<f64>,
    pub linvel: Vector3<f64>,
    pub angvel: Vector3<f64>,
    pub asleep: bool,
}

impl BodyInstance {
    pub fn isometry(&self) -> Isometry3<f64> {
        Isometry3::from_parts(Translation3::from(self.position), self.orientation)
    }

    /// World-space point of the body's shape furthest along `dir`.
    pub fn support(&self, shape: &Shape, dir: &Vector3<f64>) -> Point3<f64> {
        let local = self.orientation.inverse_transform_vector(dir);
        self.isometry() * shape.support(&local)
    }

    /// Tight world-space bounding box.
    pub fn aabb(&self, shape: &Shape) -> (Point3<f64>, Point3<f64>) {
        let mut lo = Point3::origin();
        let mut hi = Point3::origin();
        for axis in 0..3 {
            let mut d = Vector3::zeros();
            d[axis] = 1.0;
            hi[axis] = self.support(shape, &d)[axis];
            lo[axis] = self.support(shape, &-d)[axis];
        }
        (lo, hi)
    }

    /// Scalar-last quaternion components `[qx, qy, qz, qw]`.
    pub fn quaternion_xyzw(&self) -> [f64; 4] {
        let q = self.orientation.quaternion();
        [q.i, q.j, q.k, q.w]
    }
}

/// Integration and sleep parameters for settling.
#[derive(Debug, Clone, PartialEq)]
pub struct PhysicsParams {
    /// m/s², acting along −Z.
    pub gravity: f64,
    pub timestep: f64,
    pub solver_iterations: usize,
    /// Natural frequency of the soft contact constraints, Hz. Stiffer
    /// contacts keep light bodies from being pressed into the ground under
    /// heavy ones.
    pub contact_frequency: f64,
    pub v_sleep: f64,
    pub w_sleep: f64,
    pub sleep_frames: u32,
    /// Step budget for one settle call.
    pub max_steps: u64,
    pub penetration_tolerance: f64,
    /// Gap below which two surfaces count as touching in the support check.
    pub contact_tolerance: f64,
    pub ground_friction: f64,
    /// Continuous collision detection for fast bodies.
    pub ccd: bool,
    /// Velocity damping rates, 1/s; they shorten the settling tail.
    pub linear_damping: f64,
    pub angular_damping: f64,
    /// After `damping_ramp.0` seconds of a settle, both damping rates grow
    /// by `damping_ramp.1` per second. Damping forces vanish at rest, so
    /// the ramp changes how equilibrium is reached, not where.
    pub damping_ramp: Option<(f64, f64)>,
    /// Window for the time-averaged rest test: a body whose net motion over
    /// `hold_steps` steps stays below the sleep speeds, while its sampled
    /// velocities never do, is oscillating in place under solver error. It
    /// is pinned for the rest of the layer. `None` disables pinning.
    pub hold_steps: Option<u32>,
    /// Number of most recent layers that stay dynamic; older layers are
    /// frozen in place once settled. `None` keeps every body dynamic.
    pub active_layers: Option<u32>,
}

impl Default for PhysicsParams {
    fn default() -> Self {
        PhysicsParams {
            gravity: 9.81,
            timestep: 1.0 / 240.0,
            solver_iterations: 8,
            contact_frequency: 240.0,
            v_sleep: 0.01,
            w_sleep: 0.05,
            sleep_frames: 60,
            max_steps: 240 * 60,
            penetration_tolerance: 0.02,
            contact_tolerance: 0.01,
            ground_friction: 0.8,
            ccd: false,
            linear_damping: 0.05,
            angular_damping: 0.5,
            hold_steps: Some(240),
            damping_ramp: Some((4.0, 2.0)),
            active_layers: Some(1),
        }
    }
}

impl PhysicsParams {
    pub fn validate(&self) -> Result<(), DepositionError> {
        let bad = |m: &str| Err(DepositionError::InvalidParams(m.to_string()));
        if !(self.timestep > 0.0 && self.timestep.is_finite()) {
            return bad("timestep must be > 0");
        }
        if self.max_steps <= self.sleep_frames as u64 {
            return bad("max_steps must exceed sleep_frames");
        }
        if !(self.contact_frequency > 0.0) {
            return bad("contact_frequency must be > 0");
        }
        if self.solver_iterations == 0 {
            return bad("solver_iterations must be >= 1");
        }
        if !(self.v_sleep > 0.0 && self.w_sleep > 0.0) {
            return bad("sleep thresholds must be > 0");
        }
        if self.hold_steps.is_some_and(|h| h < self.sleep_frames) {
            return bad("hold_steps must be >= sleep_frames");
        }
        if self.active_layers == Some(0) {
            return bad("active_layers must be >= 1");
        }
        Ok(())
    }
}

/// Emitted while a pile is being built.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BuildProgress {
    pub layer: u32,
    pub layers: u32,
    /// Steps taken so far in the current layer.
    pub step: u64,
    pub moving: usize,
    pub settled: bool,
}

/// Uniformly distributed rotation (Shoemake's subgroup construction from
/// three uniforms).
pub fn sample_orientation<R: Rng + ?Sized>(rng: &mut R) -> UnitQuaternion<f64> {
    let u1: f64 = rng.gen();
    let u2: f64 = rng.gen();
    let u3: f64 = rng.gen();
    let (a, b) = ((1.0 - u1).sqrt(), u1.sqrt());
    let (t2, t3) = (TAU * u2, TAU * u3);
    UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(
        b * t3.cos(),
        a * t2.sin(),
        a * t2.cos(),
        b * t3.sin(),
    ))
}

/// Highest point of any body, or 0 for an empty pile.
pub fn pile_top(bodies: &[BodyInstance], catalog: &Catalog) -> f64 {
    bodies
        .iter()
        .map(|b| b.support(&catalog.get(b.class_index).shape, &Vector3::z())[2])
        .fold(0.0, f64::max)
}

fn sample_horizontal<R: Rng + ?Sized>(cfg: &SimConfig, rng: &mut R) -> Option<(f64, f64)> {
    let [cx, cy, _] = cfg.spawn_pos;
    let [bx, by, _] = cfg.spawn_bound;
    match cfg.position_distribution {
        PositionDistribution::Uniform => {
            let x = cx + bx * (2.0 * rng.gen::<f64>() - 1.0);
            let y = cy + by * (2.0 * rng.gen::<f64>() - 1.0);
            Some((x, y))
        }
        PositionDistribution::Gaussian => {
            let nx: f64 = StandardNormal.sample(rng);
            let ny: f64 = StandardNormal.sample(rng);
            let (dx, dy) = (nx * cfg.position_sigma * bx, ny * cfg.position_sigma * by);
            (dx.abs() <= bx && dy.abs() <= by).then_some((cx + dx, cy + dy))
        }
    }
}

/// Spawn one layer of `cfg.num_objs` bodies above `existing`.
///
/// Body centres sit `DROP_CLEARANCE` (or the body's bounding radius, if
/// larger) above the current pile top, plus a uniform jitter spanning
/// `2 * spawnboundz`. New bodies never overlap each other: each placement is
/// retried up to [`SPAWN_ATTEMPTS`] times.
pub fn spawn_layer<R: Rng + ?Sized>(
    existing: &[BodyInstance],
    cfg: &SimConfig,
    catalog: &Catalog,
    layer_index: u32,
    rng: &mut R,
) -> Result<Vec<BodyInstance>, DepositionError> {
    let base = pile_top(existing, catalog) + if layer_index == 0 { cfg.spawn_pos[2] } else { 0.0 };
    let jitter = 2.0 * cfg.spawn_bound[2];
    let shapes: Vec<(SharedShape, Isometry3<f64>)> = catalog.classes().iter().map(collision_shape).collect();
    let mut spawned: Vec<BodyInstance> = Vec::with_capacity(cfg.num_objs as usize);
    let mut radii: Vec<f64> = Vec::with_capacity(cfg.num_objs as usize);

    for placed in 0..cfg.num_objs {
        let class_index = catalog.sample_class(rng);
        let class = catalog.get(class_index);
        let radius = class.shape.bounding_radius();
        let lift = DROP_CLEARANCE.max(radius + 0.05);
        let (shape, offset) = &shapes[class_index];
        let mut accepted = None;
        for _ in 0..SPAWN_ATTEMPTS {
            let Some((x, y)) = sample_horizontal(cfg, rng) else {
                continue;
            };
            let z = base + lift + jitter * rng.gen::<f64>();
            let orientation = sample_orientation(rng);
            let p = Vector3::new(x, y, z);
            let pose = Isometry3::from_parts(Translation3::from(p), orientation) * offset;
            let clear = spawned.iter().zip(&radii).all(|(other, r)| {
                if (other.position - p).norm() >= r + radius {
                    return true;
                }
                let (s2, o2) = &shapes[other.class_index];
                !query::intersection_test(&pose, shape.as_ref(), &(other.isometry() * o2), s2.as_ref()).unwrap_or(true)
            });
            if clear {
                accepted = Some((p, orientation));
                break;
            }
        }
        let Some((position, orientation)) = accepted else {
            return Err(DepositionError::SpawnBudgetExhausted {
                layer: layer_index,
                placed,
                requested: cfg.num_objs,
            });
        };
        radii.push(radius);
        spawned.push(BodyInstance {
            class_index,
            class_id: class.id.clone(),
            layer: layer_index,
            position,
            orientation,
            linvel: Vector3::zeros(),
            angvel: Vector3::zeros(),
            asleep: false,
        });
    }
    Ok(spawned)
}

/// Collision shape of a class and its offset from the body frame.
pub fn collision_shape(class: &AssetClass) -> (SharedShape, Isometry3<f64>) {
    match &class.shape {
        Shape::Box { dims } => (SharedShape::cuboid(dims.x / 2.0, dims.y / 2.0, dims.z / 2.0), Isometry3::identity()),
        // a faceted prism rather than an exact cylinder: the facets give the
        // rolling resistance the contact model otherwise lacks
        Shape::Cylinder { radius, height } => {
            let n = COLLISION_SEGMENTS;
            let pts: Vec<Point3<f64>> = (0..n)
                .flat_map(|i| {
                    let a = TAU * i as f64 / n as f64;
                    let (x, y) = (radius * a.cos(), radius * a.sin());
                    [Point3::new(x, y, -height / 2.0), Point3::new(x, y, height / 2.0)]
                })
                .collect();
            (SharedShape::convex_hull(&pts).expect("cylinder prism"), Isometry3::identity())
        }
        Shape::Hull(h) => (
            SharedShape::convex_hull(h.vertices()).expect("validated hull"),
            Isometry3::identity(),
        ),
    }
}

/// Rigid-body world with the sleep contract layered on top of rapier.
struct SettleWorld<'a> {
    catalog: &'a Catalog,
    params: PhysicsParams,
    gravity: Vector3<f64>,
    integration: IntegrationParameters,
    pipeline: PhysicsPipeline,
    islands: IslandManager,
    broad_phase: DefaultBroadPhase,
    narrow_phase: NarrowPhase,
    bodies: RigidBodySet,
    colliders: ColliderSet,
    impulse_joints: ImpulseJointSet,
    multibody_joints: MultibodyJointSet,
    ccd: CCDSolver,
    handles: Vec<RigidBodyHandle>,
    still_frames: Vec<u32>,
    frozen: Vec<bool>,
    pinned: Vec<bool>,
    anchors: Vec<(Isometry3<f64>, u64)>,
    step_count: u64,
}

impl<'a> SettleWorld<'a> {
    fn new(catalog: &'a Catalog, params: PhysicsParams) -> Self {
        let mut integration = IntegrationParameters::default();
        integration.dt = params.timestep;
        integration.num_solver_iterations = NonZeroUsize::new(params.solver_iterations).expect("validated");
        integration.contact_natural_frequency = params.contact_frequency;
        let mut bodies = RigidBodySet::new();
        let mut colliders = ColliderSet::new();
        // a half-space has an unbounded AABB, which the broad phase handles
        // badly; a large slab is equivalent for any realistic footprint
        let ground = bodies.insert(RigidBodyBuilder::fixed().translation(vector![0.0, 0.0, -1.0]));
        colliders.insert_with_parent(
            ColliderBuilder::cuboid(1000.0, 1000.0, 1.0)
                .friction(params.ground_friction.sqrt())
                .friction_combine_rule(CoefficientCombineRule::Multiply)
                .restitution(0.0)
                .restitution_combine_rule(CoefficientCombineRule::Max),
            ground,
            &mut bodies,
        );
        SettleWorld {
            catalog,
            gravity: vector![0.0, 0.0, -params.gravity],
            params,
            integration,
            pipeline: PhysicsPipeline::new(),
            islands: IslandManager::new(),
            broad_phase: DefaultBroadPhase::new(),
            narrow_phase: NarrowPhase::new(),
            bodies,
            colliders,
            impulse_joints: ImpulseJointSet::new(),
            multibody_joints: MultibodyJointSet::new(),
            ccd: CCDSolver::new(),
            handles: Vec::new(),
            still_frames: Vec::new(),
            frozen: Vec::new(),
            pinned: Vec::new(),
            anchors: Vec::new(),
            step_count: 0,
        }
    }

    fn add(&mut self, body: &BodyInstance) {
        let class = self.catalog.get(body.class_index);
        let mut rb = RigidBodyBuilder::dynamic()
            .position(body.isometry())
            .linvel(body.linvel)
            .angvel(body.angvel)
            .linear_damping(self.params.linear_damping)
            .angular_damping(self.params.angular_damping)
            .ccd_enabled(self.params.ccd)
            .build();
        let activation = rb.activation_mut();
        activation.normalized_linear_threshold = self.params.v_sleep;
        activation.angular_threshold = self.params.w_sleep;
        activation.time_until_sleep = self.params.sleep_frames as f64 * self.params.timestep;
        let handle = self.bodies.insert(rb);
        let (shape, offset) = collision_shape(class);
        // Multiply of square roots gives the geometric mean of the two
        // frictions; rapier has no native geometric-mean rule.
        let collider = ColliderBuilder::new(shape)
            .position(offset)
            .density(class.density)
            .friction(class.friction.sqrt())
            .friction_combine_rule(CoefficientCombineRule::Multiply)
            .restitution(class.restitution)
            .restitution_combine_rule(CoefficientCombineRule::Max);
        self.colliders.insert_with_parent(collider, handle, &mut self.bodies);
        self.handles.push(handle);
        self.still_frames.push(0);
        self.frozen.push(false);
        self.pinned.push(false);
        self.anchors.push((body.isometry(), 0));
    }

    fn freeze(&mut self, index: usize) {
        if !self.frozen[index] {
            let rb = &mut self.bodies[self.handles[index]];
            rb.set_linvel(Vector3::zeros(), false);
            rb.set_angvel(Vector3::zeros(), false);
            rb.set_body_type(RigidBodyType::Fixed, false);
            self.frozen[index] = true;
        }
    }

    /// Return pinned bodies to the simulation.
    fn release_pins(&mut self) {
        for i in 0..self.handles.len() {
            if self.pinned[i] {
                self.pinned[i] = false;
                self.frozen[i] = false;
                self.bodies[self.handles[i]].set_body_type(RigidBodyType::Dynamic, true);
            }
        }
    }

    /// Pin bodies whose net motion over the hold window is below the sleep
    /// speeds.
    fn pin_oscillators(&mut self) {
        let Some(hold) = self.params.hold_steps else {
            return;
        };
        let window = hold as f64 * self.params.timestep;
        let (max_dist, max_angle) = (self.params.v_sleep * window, self.params.w_sleep * window);
        for i in 0..self.handles.len() {
            if self.frozen[i] {
                continue;
            }
            let pose = *self.bodies[self.handles[i]].position();
            let (anchor, since) = self.anchors[i];
            let drift = (pose.translation.vector - anchor.translation.vector).norm();
            let turn = pose.rotation.angle_to(&anchor.rotation);
            // large excursions mean real motion; start a fresh window
            if drift > OSCILLATION_SPAN * max_dist || turn > OSCILLATION_SPAN * max_angle {
                self.anchors[i] = (pose, self.step_count);
            } else if self.step_count - since >= hold as u64 {
                if drift <= max_dist && turn <= max_angle && self.still_frames[i] < self.params.sleep_frames {
                    self.freeze(i);
                    self.pinned[i] = true;
                } else {
                    self.anchors[i] = (pose, self.step_count);
                }
            }
        }
    }

    fn step(&mut self) {
        self.pipeline.step(
            &self.gravity,
            &self.integration,
            &mut self.islands,
            &mut self.broad_phase,
            &mut self.narrow_phase,
            &mut self.bodies,
            &mut self.colliders,
            &mut self.impulse_joints,
            &mut self.multibody_joints,
            &mut self.ccd,
            None,
            &(),
            &(),
        );
        self.step_count += 1;
        for (i, h) in self.handles.iter().enumerate() {
            if self.frozen[i] {
                continue;
            }
            let rb = &self.bodies[*h];
            if rb.linvel().norm() < self.params.v_sleep && rb.angvel().norm() < self.params.w_sleep {
                self.still_frames[i] = self.still_frames[i].saturating_add(1);
            } else {
                self.still_frames[i] = 0;
            }
        }
    }

    fn set_damping(&mut self, extra: f64) {
        for (i, h) in self.handles.iter().enumerate() {
            if !self.frozen[i] {
                let rb = &mut self.bodies[*h];
                rb.set_linear_damping(self.params.linear_damping + extra);
                rb.set_angular_damping(self.params.angular_damping + extra);
            }
        }
    }

    fn moving(&self) -> Vec<usize> {
        (0..self.handles.len())
            .filter(|&i| !self.frozen[i] && self.still_frames[i] < self.params.sleep_frames)
            .collect()
    }

    fn kinetic_energy(&self) -> f64 {
        self.handles.iter().map(|h| self.bodies[*h].kinetic_energy()).sum()
    }

    /// Step until every dynamic body satisfies the sleep contract.
    fn settle(&mut self, layer: u32, layers: u32, progress: &mut dyn FnMut(BuildProgress)) -> Result<u64, DepositionError> {
        self.release_pins();
        self.set_damping(0.0);
        self.still_frames.iter_mut().for_each(|s| *s = 0);
        for (i, h) in self.handles.iter().enumerate() {
            self.anchors[i] = (*self.bodies[*h].position(), self.step_count);
        }
        let mut steps = 0;
        loop {
            if let Some((start, rate)) = self.params.damping_ramp {
                let extra = (steps as f64 * self.params.timestep - start).max(0.0) * rate;
                if extra > 0.0 {
                    self.set_damping(extra);
                }
            }
            self.step();
            self.pin_oscillators();
            steps += 1;
            let moving = self.moving();
            if moving.is_empty() {
                progress(BuildProgress {
                    layer,
                    layers,
                    step: steps,
                    moving: 0,
                    settled: true,
                });
                return Ok(steps);
            }
            if steps % 240 == 0 {
                progress(BuildProgress {
                    layer,
                    layers,
                    step: steps,
                    moving: moving.len(),
                    settled: false,
                });
            }
            if steps >= self.params.max_steps {
                return Err(DepositionError::NotSettled {
                    layer,
                    steps,
                    kinetic_energy: self.kinetic_energy(),
                    awake: moving,
                });
            }
        }
    }

    fn read_back(&self, out: &mut [BodyInstance]) -> Result<(), DepositionError> {
        for (i, (h, b)) in self.handles.iter().zip(out.iter_mut()).enumerate() {
            let rb = &self.bodies[*h];
            let pos = rb.position();
            b.position = pos.translation.vector;
            b.orientation = pos.rotation;
            b.linvel = *rb.linvel();
            b.angvel = *rb.angvel();
            b.asleep = self.frozen[i] || self.still_frames[i] >= self.params.sleep_frames;
            if !(b.position.iter().chain(b.linvel.iter()).all(|v| v.is_finite())) {
                return Err(DepositionError::NonFinite(i));
            }
        }
        Ok(())
    }
}

/// Settle a set of bodies over the ground plane. Returns the step count.
pub fn settle(bodies: &mut [BodyInstance], catalog: &Catalog, params: &PhysicsParams) -> Result<u64, DepositionError> {
    params.validate()?;
    for (i, b) in bodies.iter().enumerate() {
        if !b.position.iter().chain(b.linvel.iter()).chain(b.angvel.iter()).all(|v| v.is_finite()) {
            return Err(DepositionError::NonFinite(i));
        }
    }
    let mut world = SettleWorld::new(catalog, params.clone());
    for b in bodies.iter() {
        world.add(b);
    }
    let steps = world.settle(0, 1, &mut |_| {});
    world.read_back(bodies)?;
    steps
}

/// A settled pile: bodies resting on the ground plane `z = 0`.
#[derive(Debug, Clone)]
pub struct Pile {
    pub instances: Vec<BodyInstance>,
    pub catalog: Arc<Catalog>,
    pub seed: u64,
    pub config_hash: u64,
    pub settle_steps: u64,
    scene: OnceLock<Arc<Scene>>,
}

impl PartialEq for Pile {
    fn eq(&self, other: &Self) -> bool {
        self.instances == other.instances
            && self.catalog == other.catalog
            && self.seed == other.seed
            && self.config_hash == other.config_hash
    }
}

/// Result of the post-settling geometric checks.
#[derive(Debug, Clone, PartialEq)]
pub struct PileReport {
    pub max_penetration: f64,
    /// Body pair with the deepest penetration.
    pub worst_pair: Option<(usize, usize)>,
    /// Bodies touching neither the ground nor another body.
    pub unsupported: Vec<usize>,
    /// Lowest point of any body.
    pub min_z: f64,
    pub all_asleep: bool,
}

impl Pile {
    pub fn new(instances: Vec<BodyInstance>, catalog: Arc<Catalog>, seed: u64, config_hash: u64) -> Pile {
        Pile {
            instances,
            catalog,
            seed,
            config_hash,
            settle_steps: 0,
            scene: OnceLock::new(),
        }
    }

    pub fn empty(catalog: Arc<Catalog>) -> Pile {
        Pile::new(Vec::new(), catalog, 0, 0)
    }

    pub fn class(&self, instance: &BodyInstance) -> &AssetClass {
        self.catalog.get(instance.class_index)
    }

    pub fn max_height(&self) -> f64 {
        pile_top(&self.instances, &self.catalog)
    }

    /// World bounding box of all bodies, or `None` for an empty pile.
    pub fn aabb(&self) -> Option<(Point3<f64>, Point3<f64>)> {
        self.instances
            .iter()
            .map(|b| b.aabb(&self.class(b).shape))
            .reduce(|(lo, hi), (l, h)| (lo.inf(&l), hi.sup(&h)))
    }

    /// Triangle soup and BVH, built on first use.
    pub fn scene(&self) -> Arc<Scene> {
        self.scene.get_or_init(|| Arc::new(Scene::from_pile(self))).clone()
    }

    /// SHA-256 over every instance's class, position and orientation bits,
    /// as 64 hex characters. Equal digests mean bit-identical pose lists.
    pub fn pose_digest(&self) -> String {
        let mut h = Sha256::new();
        for b in &self.instances {
            h.update((b.class_index as u64).to_le_bytes());
            for v in b.position.iter().chain(b.orientation.coords.iter()) {
                h.update(v.to_bits().to_le_bytes());
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Sum of instance solid volumes.
    pub fn solid_volume(&self) -> f64 {
        self.instances.iter().map(|b| self.class(b).shape.volume()).sum()
    }

    /// Pairwise penetration, support and sleep checks.
    pub fn check(&self, contact_tolerance: f64) -> PileReport {
        let shapes: Vec<(SharedShape, Isometry3<f64>)> =
            self.catalog.classes().iter().map(collision_shape).collect();
        let n = self.instances.len();
        let mut boxes: Vec<(usize, Point3<f64>, Point3<f64>)> = self
            .instances
            .iter()
            .enumerate()
            .map(|(i, b)| {
                let (lo, hi) = b.aabb(&self.class(b).shape);
                (i, lo, hi)
            })
            .collect();
        let mut supported: Vec<bool> = boxes.iter().map(|(_, lo, _)| lo.z <= contact_tolerance).collect();
        let min_z = boxes.iter().map(|(_, lo, _)| lo.z).fold(f64::INFINITY, f64::min);
        boxes.sort_by(|a, b| a.1.x.total_cmp(&b.1.x));

        let mut max_penetration: f64 = 0.0;
        let mut worst_pair = None;
        for a in 0..boxes.len() {
            let (i, lo_i, hi_i) = boxes[a];
            for &(j, lo_j, hi_j) in &boxes[a + 1..] {
                if lo_j.x > hi_i.x + contact_tolerance {
                    break;
                }
                let overlaps = (0..3).all(|k| lo_i[k] <= hi_j[k] + contact_tolerance && lo_j[k] <= hi_i[k] + contact_tolerance);
                if !overlaps {
                    continue;
                }
                let (bi, bj) = (&self.instances[i], &self.instances[j]);
                let (si, oi) = &shapes[bi.class_index];
                let (sj, oj) = &shapes[bj.class_index];
                let pi = bi.isometry() * oi;
                let pj = bj.isometry() * oj;
                if let Ok(Some(c)) = query::contact(&pi, si.as_ref(), &pj, sj.as_ref(), contact_tolerance) {
                    if -c.dist > max_penetration {
                        max_penetration = -c.dist;
                        worst_pair = Some((i.min(j), i.max(j)));
                    }
                    supported[i] = true;
                    supported[j] = true;
                }
            }
        }
        PileReport {
            max_penetration,
            worst_pair,
            unsupported: (0..n).filter(|&i| !supported[i]).collect(),
            min_z: if n == 0 { 0.0 } else { min_z },
            all_asleep: self.instances.iter().all(|b| b.asleep),
        }
    }
}

/// Build a settled pile: spawn and settle `numlayers` layers in turn.
pub fn build_pile(cfg: &SimConfig, catalog: &Catalog) -> Result<Pile, DepositionError> {
    build_pile_with(cfg, catalog, &PhysicsParams::default(), &mut |_| {})
}

/// [`build_pile`] with explicit physics parameters and a progress callback.
pub fn build_pile_with(
    cfg: &SimConfig,
    catalog: &Catalog,
    params: &PhysicsParams,
    progress: &mut dyn FnMut(BuildProgress),
) -> Result<Pile, DepositionError> {
    params.validate()?;
    let catalog = Arc::new(catalog.with_weights(&cfg.asset_weights)?);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut world = SettleWorld::new(&catalog, params.clone());
    let mut instances: Vec<BodyInstance> = Vec::with_capacity(cfg.total_assets() as usize);
    let mut total_steps = 0;

    for layer in 0..cfg.num_layers {
        if let Some(active) = params.active_layers {
            for (i, b) in instances.iter().enumerate() {
                if b.layer + active <= layer {
                    world.freeze(i);
                    world.pinned[i] = false;
                }
            }
        }
        let spawned = spawn_layer(&instances, cfg, &catalog, layer, &mut rng)?;
        for b in &spawned {
            world.add(b);
        }
        instances.extend(spawned);
        total_steps += world.settle(layer, cfg.num_layers, progress)?;
        world.read_back(&mut instances)?;
    }

    let mut pile = Pile::new(instances, catalog.clone(), cfg.seed, config_hash(cfg));
    pile.settle_steps = total_steps;
    Ok(pile)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assets::Shape;

    fn box_catalog(dims: Vector3<f64>) -> Catalog {
        let class = AssetClass::new("box", Shape::Box { dims }, 2400.0, 0.6, 0.05, 1.0, [0.5; 3], None).unwrap();
        Catalog::new(vec![class]).unwrap()
    }

    fn body_at(z: f64) -> BodyInstance {
        BodyInstance {
            class_index: 0,
            class_id: "box".into(),
            layer: 0,
            position: Vector3::new(0.0, 0.0, z),
            orientation: UnitQuaternion::identity(),
            linvel: Vector3::zeros(),
            angvel: Vector3::zeros(),
            asleep: false,
        }
    }

    #[test]
    fn orientations_are_unit() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..10_000 {
            let q = sample_orientation(&mut rng);
            assert!((q.quaternion().norm() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn orientation_sequence_is_reproducible() {
        let mut a = ChaCha8Rng::seed_from_u64(42);
        let mut b = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..100 {
            assert_eq!(sample_orientation(&mut a), sample_orientation(&mut b));
        }
    }

    #[test]
    fn single_body_spawns_in_clearance_band() {
        let cfg = SimConfig {
            num_objs: 1,
            ..SimConfig::default()
        };
        let catalog = Catalog::bundled();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let bodies = spawn_layer(&[], &cfg, &catalog, 0, &mut rng).unwrap();
            assert_eq!(bodies.len(), 1);
            let z = bodies[0].position.z;
            assert!((1.0..=1.5).contains(&z), "z = {z}");
        }
    }

    #[test]
    fn full_scale_layer_size() {
        let cfg = SimConfig {
            num_objs: 250,
            ..SimConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let bodies = spawn_layer(&[], &cfg, &Catalog::bundled(), 0, &mut rng).unwrap();
        assert_eq!(bodies.len(), 250);
        let pile = Pile::new(bodies, Arc::new(Catalog::bundled()), 9, 0);
        assert_eq!(pile.check(0.0).max_penetration, 0.0);
    }

    #[test]
    fn crowded_footprint_exhausts_budget() {
        let cfg = SimConfig {
            num_objs: 500,
            spawn_bound: [0.5, 0.5, 0.05],
            ..SimConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let err = spawn_layer(&[], &cfg, &Catalog::bundled(), 0, &mut rng).unwrap_err();
        assert!(matches!(err, DepositionError::SpawnBudgetExhausted { layer: 0, .. }));
    }

    #[test]
    fn unit_box_drop_settles_upright() {
        let catalog = box_catalog(Vector3::new(1.0, 1.0, 1.0));
        let params = PhysicsParams::default();
        let mut bodies = vec![body_at(1.5)];
        let steps = settle(&mut bodies, &catalog, &params).unwrap();
        assert!(steps <= params.max_steps);
        let b = &bodies[0];
        assert!(b.asleep);
        let bottom = b.aabb(&catalog.get(0).shape).0.z;
        assert!(bottom.abs() <= params.penetration_tolerance, "bottom at {bottom}");
        assert!(b.orientation.angle() < 1e-3, "tilted by {}", b.orientation.angle());
    }

    #[test]
    fn two_stacked_boxes_rest_on_each_other() {
        let h = 0.4;
        let catalog = box_catalog(Vector3::new(1.0, 1.0, h));
        let params = PhysicsParams::default();
        let mut bodies = vec![body_at(h / 2.0 + 0.01), body_at(1.5 * h + 0.05)];
        settle(&mut bodies, &catalog, &params).unwrap();
        assert!(bodies.iter().all(|b| b.asleep));
        // statics: the lower box rests on the ground, the upper on the lower
        let lower_bottom = bodies[0].aabb(&catalog.get(0).shape).0.z;
        let upper_bottom = bodies[1].aabb(&catalog.get(0).shape).0.z;
        assert!(lower_bottom.abs() <= params.penetration_tolerance);
        assert!((upper_bottom - h).abs() <= params.penetration_tolerance, "upper bottom {upper_bottom}");
    }

    #[test]
    fn settled_energy_is_below_sleep_bound() {
        let catalog = Catalog::bundled();
        let cfg = SimConfig {
            num_objs: 12,
            spawn_bound: [1.0, 1.0, 0.25],
            ..SimConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let mut bodies = spawn_layer(&[], &cfg, &catalog, 0, &mut rng).unwrap();
        let params = PhysicsParams::default();
        settle(&mut bodies, &catalog, &params).unwrap();
        let mut energy = 0.0;
        let mut bound = 0.0;
        for b in &bodies {
            let class = catalog.get(b.class_index);
            let r = b.orientation.to_rotation_matrix();
            let inertia = r.matrix() * class.inertia() * r.matrix().transpose();
            energy += 0.5 * class.mass() * b.linvel.norm_squared() + 0.5 * b.angvel.dot(&(inertia * b.angvel));
            let i_max = class.inertia().symmetric_eigenvalues().max();
            bound += 0.5 * class.mass() * params.v_sleep.powi(2) + 0.5 * i_max * params.w_sleep.powi(2);
            assert!(b.asleep);
            assert!(b.linvel.norm() < params.v_sleep && b.angvel.norm() < params.w_sleep);
        }
        assert!(energy < bound, "{energy} >= {bound}");
    }

    #[test]
    fn non_convergence_reports_bodies() {
        let catalog = box_catalog(Vector3::new(0.2, 0.2, 0.2));
        let params = PhysicsParams {
            max_steps: 100,
            ..PhysicsParams::default()
        };
        let mut bodies = vec![body_at(20.0)];
        match settle(&mut bodies, &catalog, &params).unwrap_err() {
            DepositionError::NotSettled { awake, kinetic_energy, .. } => {
                assert_eq!(awake, vec![0]);
                assert!(kinetic_energy > 0.0);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn invalid_params_rejected() {
        let p = PhysicsParams {
            max_steps: 10,
            ..PhysicsParams::default()
        };
        assert!(p.validate().is_err());
        let p = PhysicsParams {
            timestep: 0.0,
            ..PhysicsParams::default()
        };
        assert!(p.validate().is_err());
    }
}
