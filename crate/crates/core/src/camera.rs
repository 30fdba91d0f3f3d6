//! Tip-camera motion: instantaneous roll/pitch/yaw plus travel along the
//! optical axis, and scripted waypoint trajectories.
//!
//! Body axes: +x forward (optical axis), +y left, +z up. Image rows run
//! top to bottom, columns left to right.

use std::path::Path;

use nalgebra::{Matrix3, Point3, Rotation3, UnitQuaternion, Vector3};

pub const IMAGE_SIZE: u32 = 1024;
pub const DEFAULT_VFOV_DEG: f64 = 75.0;
pub const DEFAULT_RATE_HZ: f64 = 30.0;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum CameraError {
    #[error("non-finite motion command")]
    NonFinite,
    #[error("dt must be > 0, got {0}")]
    BadTimestep(f64),
    #[error("vertical field of view must be in (10, 170) degrees, got {0}")]
    BadFov(f64),
    #[error("need at least 2 waypoints, got {0}")]
    TooFewWaypoints(usize),
    #[error("waypoints {0} and {1} coincide")]
    CoincidentWaypoints(usize, usize),
    #[error("waypoint {0} looks at its own position")]
    DegenerateLookAt(usize),
    #[error("rate and speed must be > 0")]
    BadRate,
    #[error("waypoint times must be strictly increasing (line {0})")]
    NonMonotonicTime(usize),
    #[error("{path}:{line}: {msg}")]
    Malformed { path: String, line: usize, msg: String },
    #[error("{0}")]
    Io(String),
}

/// Pinhole intrinsics with square pixels and a centred principal point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Intrinsics {
    pub width: u32,
    pub height: u32,
    pub vfov_deg: f64,
}

impl Default for Intrinsics {
    fn default() -> Self {
        Intrinsics {
            width: IMAGE_SIZE,
            height: IMAGE_SIZE,
            vfov_deg: DEFAULT_VFOV_DEG,
        }
    }
}

impl Intrinsics {
    pub fn validate(&self) -> Result<(), CameraError> {
        if !(self.vfov_deg > 10.0 && self.vfov_deg < 170.0) {
            return Err(CameraError::BadFov(self.vfov_deg));
        }
        Ok(())
    }

    /// Focal length in pixels.
    pub fn focal(&self) -> f64 {
        self.height as f64 / 2.0 / (self.vfov_deg.to_radians() / 2.0).tan()
    }

    pub fn principal_point(&self) -> (f64, f64) {
        (self.width as f64 / 2.0, self.height as f64 / 2.0)
    }

    /// Body-frame ray through image coordinates `(u, v)`, scaled so its
    /// forward component is 1. Pixel centres are at `(col + 0.5, row + 0.5)`.
    pub fn ray(&self, u: f64, v: f64) -> Vector3<f64> {
        let (cx, cy) = self.principal_point();
        let f = self.focal();
        Vector3::new(1.0, -(u - cx) / f, -(v - cy) / f)
    }

    /// Image coordinates and planar depth of a body-frame point in front of
    /// the camera.
    pub fn project(&self, p: &Vector3<f64>) -> Option<(f64, f64, f64)> {
        if p.x <= 0.0 {
            return None;
        }
        let (cx, cy) = self.principal_point();
        let f = self.focal();
        Some((cx - f * p.y / p.x, cy - f * p.z / p.x, p.x))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraState {
    pub position: Point3<f64>,
    pub orientation: UnitQuaternion<f64>,
    /// Signed speed along the optical axis, m/s.
    pub axial_speed: f64,
    pub intrinsics: Intrinsics,
}

impl Default for CameraState {
    fn default() -> Self {
        CameraState {
            position: Point3::origin(),
            orientation: UnitQuaternion::identity(),
            axial_speed: 0.0,
            intrinsics: Intrinsics::default(),
        }
    }
}

impl CameraState {
    pub fn new(position: Point3<f64>, orientation: UnitQuaternion<f64>) -> CameraState {
        CameraState {
            position,
            orientation,
            ..CameraState::default()
        }
    }

    /// Camera at `position` looking at `target`, with the image up vector as
    /// close to world +z as possible.
    pub fn looking_at(position: Point3<f64>, target: Point3<f64>) -> Option<CameraState> {
        Some(CameraState::new(position, look_rotation(&(target - position))?))
    }

    pub fn forward(&self) -> Vector3<f64> {
        self.orientation * Vector3::x()
    }

    /// World-space unit ray through the centre of pixel `(col, row)`.
    pub fn pixel_ray(&self, col: u32, row: u32) -> Vector3<f64> {
        (self.orientation * self.intrinsics.ray(col as f64 + 0.5, row as f64 + 0.5)).normalize()
    }
}

/// Orientation whose forward axis is `dir`, rolled so body +z points up.
pub fn look_rotation(dir: &Vector3<f64>) -> Option<UnitQuaternion<f64>> {
    let fwd = dir.try_normalize(1e-12)?;
    let left = Vector3::z()
        .cross(&fwd)
        .try_normalize(1e-9)
        .unwrap_or_else(|| fwd.cross(&Vector3::x()).normalize());
    let up = fwd.cross(&left);
    let m = Matrix3::from_columns(&[fwd, left, up]);
    Some(UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(m)))
}

/// Teleop input: rotation deltas in radians about the current body axes and
/// the new axial speed.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MotionCommand {
    pub d_roll: f64,
    pub d_pitch: f64,
    pub d_yaw: f64,
    pub axial_speed: f64,
    pub headlamp_intensity: Option<f64>,
}

impl MotionCommand {
    fn is_finite(&self) -> bool {
        [self.d_roll, self.d_pitch, self.d_yaw, self.axial_speed]
            .iter()
            .chain(self.headlamp_intensity.iter())
            .all(|v| v.is_finite())
    }
}

/// Rotate by yaw, then pitch, then roll about the body axes, renormalize,
/// then advance along the new optical axis for `dt` seconds. Positive pitch
/// tips the optical axis down.
pub fn apply_command(state: &CameraState, cmd: &MotionCommand, dt: f64) -> Result<CameraState, CameraError> {
    if !cmd.is_finite() {
        return Err(CameraError::NonFinite);
    }
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(CameraError::BadTimestep(dt));
    }
    let delta = UnitQuaternion::from_axis_angle(&Vector3::z_axis(), cmd.d_yaw)
        * UnitQuaternion::from_axis_angle(&Vector3::y_axis(), cmd.d_pitch)
        * UnitQuaternion::from_axis_angle(&Vector3::x_axis(), cmd.d_roll);
    let mut orientation = state.orientation * delta;
    orientation.renormalize();
    let position = state.position + orientation * Vector3::x() * (cmd.axial_speed * dt);
    Ok(CameraState {
        position,
        orientation,
        axial_speed: cmd.axial_speed,
        intrinsics: state.intrinsics,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Waypoint {
    /// Optional arrival time; used only when every waypoint has one.
    pub time: Option<f64>,
    pub position: Point3<f64>,
    pub look_at: Point3<f64>,
}

impl Waypoint {
    pub fn new(position: Point3<f64>, look_at: Point3<f64>) -> Waypoint {
        Waypoint {
            time: None,
            position,
            look_at,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub rate: f64,
    pub samples: Vec<(f64, CameraState)>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Sample a piecewise-linear path through the waypoints at `rate` Hz.
/// Positions move at constant `speed` (or follow the waypoint times when all
/// are given); orientations slerp between the waypoint look-at rotations.
pub fn run_script(waypoints: &[Waypoint], rate: f64, speed: f64, intrinsics: Intrinsics) -> Result<Trajectory, CameraError> {
    if waypoints.len() < 2 {
        return Err(CameraError::TooFewWaypoints(waypoints.len()));
    }
    if !(rate > 0.0 && speed > 0.0 && rate.is_finite() && speed.is_finite()) {
        return Err(CameraError::BadRate);
    }
    intrinsics.validate()?;
    let mut rotations = Vec::with_capacity(waypoints.len());
    for (i, w) in waypoints.iter().enumerate() {
        rotations.push(look_rotation(&(w.look_at - w.position)).ok_or(CameraError::DegenerateLookAt(i))?);
    }
    let mut times = vec![0.0];
    for i in 1..waypoints.len() {
        let len = (waypoints[i].position - waypoints[i - 1].position).norm();
        if len < 1e-12 {
            return Err(CameraError::CoincidentWaypoints(i - 1, i));
        }
        times.push(times[i - 1] + len / speed);
    }
    if let Some(given) = waypoints.iter().map(|w| w.time).collect::<Option<Vec<f64>>>() {
        for i in 1..given.len() {
            if given[i] <= given[i - 1] {
                return Err(CameraError::NonMonotonicTime(i));
            }
        }
        times = given.iter().map(|t| t - given[0]).collect();
    }
    let total = *times.last().unwrap();
    let count = (total * rate + 1e-9).floor() as usize + 1;
    let mut samples = Vec::with_capacity(count);
    let mut seg = 0;
    for k in 0..count {
        let t = k as f64 / rate;
        while seg + 2 < times.len() && t > times[seg + 1] {
            seg += 1;
        }
        let span = times[seg + 1] - times[seg];
        let f = ((t - times[seg]) / span).clamp(0.0, 1.0);
        let (a, b) = (&waypoints[seg], &waypoints[seg + 1]);
        let position = a.position + (b.position - a.position) * f;
        let orientation = rotations[seg]
            .try_slerp(&rotations[seg + 1], f, 1e-12)
            .unwrap_or(if f < 0.5 { rotations[seg] } else { rotations[seg + 1] });
        samples.push((
            t,
            CameraState {
                position,
                orientation,
                axial_speed: speed,
                intrinsics,
            },
        ));
    }
    Ok(Trajectory { rate, samples })
}

/// Parse a waypoint script: lines `[t] px py pz lx ly lz`, `#` comments.
pub fn parse_waypoints(text: &str, origin: &Path) -> Result<Vec<Waypoint>, CameraError> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let malformed = |msg: String| CameraError::Malformed {
            path: origin.display().to_string(),
            line: n + 1,
            msg,
        };
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse::<f64>().map_err(|_| malformed(format!("not a number: {t:?}"))))
            .collect::<Result<_, _>>()?;
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(malformed("non-finite value".into()));
        }
        let (time, v) = match vals.len() {
            6 => (None, &vals[..]),
            7 => (Some(vals[0]), &vals[1..]),
            k => return Err(malformed(format!("expected 6 or 7 values, got {k}"))),
        };
        out.push(Waypoint {
            time,
            position: Point3::new(v[0], v[1], v[2]),
            look_at: Point3::new(v[3], v[4], v[5]),
        });
    }
    Ok(out)
}

pub fn load_waypoints(path: &Path) -> Result<Vec<Waypoint>, CameraError> {
    let text = std::fs::read_to_string(path).map_err(|e| CameraError::Io(format!("{}: {e}", path.display())))?;
    parse_waypoints(&text, path)
}
