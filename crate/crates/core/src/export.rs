//! Pile meshes as binary STL and recorded trajectories as RGB-D datasets.
//!
//! Dataset layout:
//!
//! ```text
//! rgb/000000.png       8-bit RGB
//! depth/000000.png     16-bit gray, millimetres, 0 = no hit
//! groundtruth.txt      timestamp tx ty tz qx qy qz qw
//! manifest.txt
//! pile.stl
//! ```
//!
//! Poses are the camera body frame (x forward, y left, z up) in world
//! coordinates.

use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::mpsc::sync_channel;

use image::{ImageBuffer, Luma, Rgb};
use nalgebra::{Point3, Quaternion, UnitQuaternion, Vector3};

use crate::camera::{CameraState, Trajectory};
use crate::config::{config_hash, format_hash, SimConfig};
use crate::deposition::Pile;
use crate::render::{render_frame, FogField, Frame, LightingRig, Scene};

pub const RGB_PATTERN: &str = "rgb/%06d.png";
pub const DEPTH_PATTERN: &str = "depth/%06d.png";
pub const GROUNDTRUTH_FILE: &str = "groundtruth.txt";
pub const MANIFEST_FILE: &str = "manifest.txt";
pub const STL_FILE: &str = "pile.stl";
/// Frames rendered ahead of the writer before the renderer blocks.
pub const QUEUE_DEPTH: usize = 4;

#[derive(Debug, thiserror::Error)]
pub enum ExportError {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}: {msg}", path.display())]
    Image { path: PathBuf, msg: String },
    #[error("frame index gap: expected {expected}, got {got}")]
    IndexGap { expected: u32, got: u32 },
    #[error("frame {index} is {width}x{height}, dataset is {expected_width}x{expected_height}")]
    SizeMismatch {
        index: u32,
        width: u32,
        height: u32,
        expected_width: u32,
        expected_height: u32,
    },
    #[error("{}:{line}: {msg}", path.display())]
    Malformed { path: PathBuf, line: usize, msg: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ExportError + '_ {
    move |source| ExportError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Triangles of every instance at its settled pose, in instance order.
pub fn pile_triangles(pile: &Pile) -> Vec<[Point3<f64>; 3]> {
    pile.instances
        .iter()
        .flat_map(|b| {
            let iso = b.isometry();
            pile.class(b).shape.triangles().into_iter().map(move |t| t.map(|p| iso * p))
        })
        .collect()
}

/// Binary STL in meters. The header carries the configuration hash.
pub fn stl_bytes(triangles: &[[Point3<f64>; 3]], hash: u64) -> Vec<u8> {
    let mut out = Vec::with_capacity(84 + 50 * triangles.len());
    let mut header = [b' '; 80];
    let text = format!("rubble pile config {}", format_hash(hash));
    header[..text.len()].copy_from_slice(text.as_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&(triangles.len() as u32).to_le_bytes());
    for t in triangles {
        let n = (t[1] - t[0]).cross(&(t[2] - t[0])).try_normalize(0.0).unwrap_or_else(Vector3::zeros);
        for v in [n.x, n.y, n.z] {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
        for p in t {
            for v in [p.x, p.y, p.z] {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        out.extend_from_slice(&0u16.to_le_bytes());
    }
    out
}

pub fn export_stl(pile: &Pile, path: &Path) -> Result<(), ExportError> {
    fs::write(path, stl_bytes(&pile_triangles(pile), pile.config_hash)).map_err(io_err(path))
}

#[derive(Debug, Clone, PartialEq)]
pub struct StlMesh {
    pub header: [u8; 80],
    pub triangles: Vec<[Point3<f64>; 3]>,
}

impl StlMesh {
    /// Header text up to the padding.
    pub fn header_text(&self) -> String {
        String::from_utf8_lossy(&self.header).trim_end_matches([' ', '\0']).to_string()
    }
}

pub fn read_stl(path: &Path) -> Result<StlMesh, ExportError> {
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(io_err(path))?;
    let malformed = |msg: String| ExportError::Malformed {
        path: path.to_path_buf(),
        line: 0,
        msg,
    };
    if bytes.len() < 84 {
        return Err(malformed(format!("{} bytes is shorter than the STL header", bytes.len())));
    }
    let count = u32::from_le_bytes(bytes[80..84].try_into().expect("4 bytes")) as usize;
    if bytes.len() != 84 + 50 * count {
        return Err(malformed(format!("{count} triangles need {} bytes, file has {}", 84 + 50 * count, bytes.len())));
    }
    let f = |at: usize| f32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes")) as f64;
    let triangles = (0..count)
        .map(|i| {
            let base = 84 + 50 * i + 12;
            [0, 1, 2].map(|v| {
                let at = base + 12 * v;
                Point3::new(f(at), f(at + 4), f(at + 8))
            })
        })
        .collect();
    let mut header = [0u8; 80];
    header.copy_from_slice(&bytes[..80]);
    Ok(StlMesh { header, triangles })
}

/// Meters to the stored 16-bit millimetre value, saturating at 65.535 m.
pub fn depth_to_mm(depth: f32) -> u16 {
    (depth as f64 * 1000.0).round().clamp(0.0, u16::MAX as f64) as u16
}

/// One `groundtruth.txt` row.
pub fn pose_row(timestamp: f64, pose: &CameraState) -> String {
    let p = pose.position;
    let q = pose.orientation.quaternion();
    format!(
        "{timestamp:.9} {:.9} {:.9} {:.9} {:.9} {:.9} {:.9} {:.9}",
        p.x, p.y, p.z, q.i, q.j, q.k, q.w
    )
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseRow {
    pub timestamp: f64,
    pub position: Point3<f64>,
    pub orientation: UnitQuaternion<f64>,
}

/// Parses TUM-style pose rows, skipping blank and `#` lines.
pub fn parse_groundtruth(text: &str, origin: &Path) -> Result<Vec<PoseRow>, ExportError> {
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let v: Vec<f64> = line
            .split_whitespace()
            .map(str::parse)
            .collect::<Result<_, _>>()
            .map_err(|e| ExportError::Malformed {
                path: origin.to_path_buf(),
                line: i + 1,
                msg: format!("{e}"),
            })?;
        if v.len() != 8 {
            return Err(ExportError::Malformed {
                path: origin.to_path_buf(),
                line: i + 1,
                msg: format!("expected 8 columns, got {}", v.len()),
            });
        }
        rows.push(PoseRow {
            timestamp: v[0],
            position: Point3::new(v[1], v[2], v[3]),
            orientation: UnitQuaternion::new_normalize(Quaternion::new(v[7], v[4], v[5], v[6])),
        });
    }
    Ok(rows)
}

pub fn load_groundtruth(path: &Path) -> Result<Vec<PoseRow>, ExportError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    parse_groundtruth(&text, path)
}

/// Expands a `%06d` pattern.
pub fn frame_path(pattern: &str, index: u32) -> String {
    pattern.replace("%06d", &format!("{index:06}"))
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub config: SimConfig,
    pub config_hash: u64,
    pub seed: u64,
    pub frame_count: u32,
    pub rate: f64,
    pub width: u32,
    pub height: u32,
    pub vfov_deg: f64,
    pub rgb_pattern: String,
    pub depth_pattern: String,
    pub stl: Option<String>,
}

impl DatasetManifest {
    pub fn new(config: &SimConfig, rate: f64, intrinsics: &crate::camera::Intrinsics) -> DatasetManifest {
        DatasetManifest {
            config: config.clone(),
            config_hash: config_hash(config),
            seed: config.seed,
            frame_count: 0,
            rate,
            width: intrinsics.width,
            height: intrinsics.height,
            vfov_deg: intrinsics.vfov_deg,
            rgb_pattern: RGB_PATTERN.into(),
            depth_pattern: DEPTH_PATTERN.into(),
            stl: None,
        }
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "hash={}", format_hash(self.config_hash));
        let _ = writeln!(s, "seed={}", self.seed);
        let _ = writeln!(s, "frames={}", self.frame_count);
        let _ = writeln!(s, "rate={}", self.rate);
        let _ = writeln!(s, "width={}", self.width);
        let _ = writeln!(s, "height={}", self.height);
        let _ = writeln!(s, "vfov={}", self.vfov_deg);
        let _ = writeln!(s, "rgb={}", self.rgb_pattern);
        let _ = writeln!(s, "depth={}", self.depth_pattern);
        let _ = writeln!(s, "depth_scale=1000");
        let _ = writeln!(s, "poses={GROUNDTRUTH_FILE}");
        // body frame: x forward, y left, z up
        let _ = writeln!(s, "pose_frame=flu");
        if let Some(stl) = &self.stl {
            let _ = writeln!(s, "stl={stl}");
        }
        s.push_str("[config]\n");
        s.push_str(&self.config.serialize());
        s
    }

    /// Parses a manifest and checks its hash against the embedded
    /// configuration.
    pub fn parse(text: &str, origin: &Path) -> Result<DatasetManifest, ExportError> {
        let malformed = |line: usize, msg: String| ExportError::Malformed {
            path: origin.to_path_buf(),
            line,
            msg,
        };
        let (head, config_text) = text
            .split_once("[config]\n")
            .ok_or_else(|| malformed(0, "missing [config] section".into()))?;
        let config = SimConfig::parse_str(config_text, origin).map_err(|e| malformed(0, e.to_string()))?;
        let mut m = DatasetManifest::new(&config, 0.0, &Default::default());
        let mut hash = None;
        for (i, line) in head.lines().enumerate() {
            let Some((k, v)) = line.split_once('=') else {
                continue;
            };
            let bad = |e: &dyn std::fmt::Display| malformed(i + 1, format!("{k}: {e}"));
            match k {
                "hash" => hash = Some(u64::from_str_radix(v, 16).map_err(|e| bad(&e))?),
                "seed" => m.seed = v.parse().map_err(|e| bad(&e))?,
                "frames" => m.frame_count = v.parse().map_err(|e| bad(&e))?,
                "rate" => m.rate = v.parse().map_err(|e| bad(&e))?,
                "width" => m.width = v.parse().map_err(|e| bad(&e))?,
                "height" => m.height = v.parse().map_err(|e| bad(&e))?,
                "vfov" => m.vfov_deg = v.parse().map_err(|e| bad(&e))?,
                "rgb" => m.rgb_pattern = v.into(),
                "depth" => m.depth_pattern = v.into(),
                "stl" => m.stl = Some(v.into()),
                _ => {}
            }
        }
        match hash {
            Some(h) if h == m.config_hash => Ok(m),
            Some(h) => Err(malformed(
                1,
                format!("hash {} does not match config hash {}", format_hash(h), format_hash(m.config_hash)),
            )),
            None => Err(malformed(0, "missing hash".into())),
        }
    }

    pub fn load(dir: &Path) -> Result<DatasetManifest, ExportError> {
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        DatasetManifest::parse(&text, &path)
    }
}

/// Sequential dataset writer. Frames must arrive with consecutive indices
/// starting at 0; [`DatasetWriter::finish`] writes the manifest.
pub struct DatasetWriter {
    root: PathBuf,
    manifest: DatasetManifest,
    poses: BufWriter<File>,
    next: u32,
}

impl DatasetWriter {
    pub fn create(root: &Path, manifest: DatasetManifest, pile: Option<&Pile>) -> Result<DatasetWriter, ExportError> {
        let mut manifest = manifest;
        for dir in [root.to_path_buf(), root.join("rgb"), root.join("depth")] {
            fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        }
        if let Some(pile) = pile {
            export_stl(pile, &root.join(STL_FILE))?;
            manifest.stl = Some(STL_FILE.into());
        }
        let gt = root.join(GROUNDTRUTH_FILE);
        let poses = BufWriter::new(File::create(&gt).map_err(io_err(&gt))?);
        Ok(DatasetWriter {
            root: root.to_path_buf(),
            manifest,
            poses,
            next: 0,
        })
    }

    /// Index the next frame must carry.
    pub fn frames_written(&self) -> u32 {
        self.next
    }

    pub fn write_frame(&mut self, frame: &Frame) -> Result<(), ExportError> {
        if frame.frame_index != self.next {
            return Err(ExportError::IndexGap {
                expected: self.next,
                got: frame.frame_index,
            });
        }
        if frame.width != self.manifest.width || frame.height != self.manifest.height {
            return Err(ExportError::SizeMismatch {
                index: frame.frame_index,
                width: frame.width,
                height: frame.height,
                expected_width: self.manifest.width,
                expected_height: self.manifest.height,
            });
        }
        let rgb_path = self.root.join(frame_path(&self.manifest.rgb_pattern, frame.frame_index));
        let img: ImageBuffer<Rgb<u8>, _> =
            ImageBuffer::from_raw(frame.width, frame.height, frame.rgb.as_slice()).expect("rgb buffer matches frame size");
        img.save(&rgb_path).map_err(|e| ExportError::Image {
            path: rgb_path.clone(),
            msg: e.to_string(),
        })?;
        let depth_path = self.root.join(frame_path(&self.manifest.depth_pattern, frame.frame_index));
        let mm: Vec<u16> = frame.depth.iter().map(|&d| depth_to_mm(d)).collect();
        let img: ImageBuffer<Luma<u16>, _> = ImageBuffer::from_raw(frame.width, frame.height, mm).expect("depth buffer matches frame size");
        img.save(&depth_path).map_err(|e| ExportError::Image {
            path: depth_path.clone(),
            msg: e.to_string(),
        })?;
        let gt = self.root.join(GROUNDTRUTH_FILE);
        writeln!(self.poses, "{}", pose_row(frame.timestamp, &frame.pose)).map_err(io_err(&gt))?;
        self.next += 1;
        Ok(())
    }

    pub fn finish(mut self) -> Result<DatasetManifest, ExportError> {
        let gt = self.root.join(GROUNDTRUTH_FILE);
        self.poses.flush().map_err(io_err(&gt))?;
        self.manifest.frame_count = self.next;
        let path = self.root.join(MANIFEST_FILE);
        fs::write(&path, self.manifest.to_text()).map_err(io_err(&path))?;
        Ok(self.manifest)
    }
}

/// Writes every frame of `frames` in order, then the manifest.
pub fn write_dataset<I>(frames: I, manifest: DatasetManifest, root: &Path, pile: Option<&Pile>) -> Result<DatasetManifest, ExportError>
where
    I: IntoIterator<Item = Frame>,
{
    let mut writer = DatasetWriter::create(root, manifest, pile)?;
    for frame in frames {
        writer.write_frame(&frame)?;
    }
    writer.finish()
}

/// Renders a trajectory and writes it as a dataset. Rendering runs on a
/// separate thread at most [`QUEUE_DEPTH`] frames ahead of the writer.
pub fn record_dataset(
    scene: &Scene,
    trajectory: &Trajectory,
    rig: &LightingRig,
    fog: &FogField,
    manifest: DatasetManifest,
    root: &Path,
    pile: Option<&Pile>,
    progress: &mut dyn FnMut(u32, usize),
) -> Result<DatasetManifest, ExportError> {
    let mut manifest = manifest;
    manifest.rate = trajectory.rate;
    let mut writer = DatasetWriter::create(root, manifest, pile)?;
    let total = trajectory.len();
    std::thread::scope(|s| {
        let (tx, rx) = sync_channel::<Frame>(QUEUE_DEPTH);
        s.spawn(move || {
            for (i, (t, cam)) in trajectory.samples.iter().enumerate() {
                let mut frame = render_frame(scene, cam, rig, fog, *t);
                frame.frame_index = i as u32;
                if tx.send(frame).is_err() {
                    // writer failed and hung up
                    return;
                }
            }
        });
        for frame in rx {
            writer.write_frame(&frame)?;
            progress(frame.frame_index, total);
        }
        Ok::<(), ExportError>(())
    })?;
    writer.finish()
}

/// Depth PNG back to meters.
pub fn read_depth_png(path: &Path) -> Result<(u32, u32, Vec<f32>), ExportError> {
    let img = image::open(path)
        .map_err(|e| ExportError::Image {
            path: path.to_path_buf(),
            msg: e.to_string(),
        })?
        .into_luma16();
    let (w, h) = img.dimensions();
    Ok((w, h, img.into_raw().into_iter().map(|mm| mm as f32 / 1000.0).collect()))
}
