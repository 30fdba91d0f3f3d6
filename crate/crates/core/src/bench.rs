//! Scores an external structure-from-motion reconstruction of a dataset
//! against its ground-truth poses.
//!
//! Each reconstructed model is aligned to ground truth with a similarity
//! transform. A frame is on track when it is registered and its aligned
//! position is within the threshold; a segment is a maximal run of
//! consecutive on-track frames in one model.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Point3, Quaternion, Rotation3, UnitQuaternion, Vector3};

use crate::export::{load_groundtruth, DatasetManifest, ExportError, PoseRow, GROUNDTRUTH_FILE};

pub const DEFAULT_ONTRACK_THRESHOLD: f64 = 0.10;

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}:{line}: {msg}", path.display())]
    Malformed { path: PathBuf, line: usize, msg: String },
    #[error("{}: duplicate image name `{name}`", path.display())]
    DuplicateImage { path: PathBuf, name: String },
    #[error("image `{0}` has no frame index in its name")]
    UnknownImage(String),
    #[error("image `{name}` maps to frame {index}, past the {frames} ground-truth frames")]
    OutOfRange { name: String, index: usize, frames: usize },
    #[error("alignment needs at least 3 correspondences, got {0}")]
    TooFewPoints(usize),
    #[error("ground-truth positions are collinear; rotation is undetermined")]
    Degenerate,
    #[error(transparent)]
    Dataset(#[from] ExportError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageRecord {
    pub name: String,
    pub registered: bool,
    pub model_id: i64,
    /// Camera centre in the model frame.
    pub position: Point3<f64>,
    /// Camera-to-model rotation.
    pub orientation: UnitQuaternion<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EstimatedTrajectory {
    pub images: Vec<ImageRecord>,
    pub points_per_model: BTreeMap<i64, u64>,
}

impl EstimatedTrajectory {
    pub fn points(&self) -> u64 {
        self.points_per_model.values().sum()
    }

    /// Registered image count per model.
    pub fn model_histogram(&self) -> BTreeMap<i64, usize> {
        let mut h = BTreeMap::new();
        for im in self.images.iter().filter(|i| i.registered) {
            *h.entry(im.model_id).or_insert(0) += 1;
        }
        h
    }

    fn check_duplicates(&self, path: &Path) -> Result<(), BenchError> {
        let mut seen = HashSet::new();
        for im in &self.images {
            if !seen.insert(im.name.as_str()) {
                return Err(BenchError::DuplicateImage {
                    path: path.to_path_buf(),
                    name: im.name.clone(),
                });
            }
        }
        Ok(())
    }
}

fn read(path: &Path) -> Result<String, BenchError> {
    fs::read_to_string(path).map_err(|source| BenchError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn malformed(path: &Path, line: usize, msg: impl Into<String>) -> BenchError {
    BenchError::Malformed {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

/// Loads an estimate from
///
/// * a directory holding `images.txt` (and optionally `points3D.txt`) of one
///   model, or numbered subdirectories `0/`, `1/`, ... with one model each,
///   as written by COLMAP's text export;
/// * an `images.txt` file directly;
/// * any other file as pose rows `name tx ty tz qx qy qz qw model_id`, with
///   optional `# points <model_id> <count>` lines.
pub fn load_estimate(path: &Path) -> Result<EstimatedTrajectory, BenchError> {
    let mut est = EstimatedTrajectory::default();
    if path.is_dir() {
        if path.join("images.txt").is_file() {
            load_colmap_model(path, 0, &mut est)?;
        } else {
            let mut models: Vec<(i64, PathBuf)> = fs::read_dir(path)
                .map_err(|source| BenchError::Io {
                    path: path.to_path_buf(),
                    source,
                })?
                .filter_map(|e| e.ok())
                .filter_map(|e| {
                    let id = e.file_name().to_str()?.parse().ok()?;
                    e.path().join("images.txt").is_file().then(|| (id, e.path()))
                })
                .collect();
            models.sort();
            for (id, dir) in models {
                load_colmap_model(&dir, id, &mut est)?;
            }
        }
    } else if path.file_name().is_some_and(|n| n == "images.txt") {
        let text = read(path)?;
        parse_colmap_images(&text, path, 0, &mut est)?;
    } else {
        let text = read(path)?;
        est = parse_pose_rows(&text, path)?;
    }
    est.check_duplicates(path)?;
    Ok(est)
}

fn load_colmap_model(dir: &Path, model: i64, est: &mut EstimatedTrajectory) -> Result<(), BenchError> {
    let images = dir.join("images.txt");
    parse_colmap_images(&read(&images)?, &images, model, est)?;
    let points = dir.join("points3D.txt");
    let count = if points.is_file() {
        read(&points)?
            .lines()
            .filter(|l| {
                let l = l.trim();
                !l.is_empty() && !l.starts_with('#')
            })
            .count() as u64
    } else {
        0
    };
    est.points_per_model.insert(model, count);
    Ok(())
}

/// COLMAP `images.txt`: each image takes two lines, the pose line
/// `IMAGE_ID QW QX QY QZ TX TY TZ CAMERA_ID NAME` and its 2D points line.
/// The pose maps world to camera, so the centre is `-Rᵀ t`.
pub fn parse_colmap_images(text: &str, path: &Path, model: i64, est: &mut EstimatedTrajectory) -> Result<(), BenchError> {
    let mut expect_pose = true;
    for (i, line) in text.lines().enumerate() {
        if line.starts_with('#') {
            continue;
        }
        if !expect_pose {
            expect_pose = true;
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() < 10 {
            return Err(malformed(path, i + 1, format!("expected 10 fields, got {}", f.len())));
        }
        let num = |k: usize| f[k].parse::<f64>().map_err(|e| malformed(path, i + 1, format!("field {}: {e}", k + 1)));
        let q = UnitQuaternion::new_normalize(Quaternion::new(num(1)?, num(2)?, num(3)?, num(4)?));
        let t = Vector3::new(num(5)?, num(6)?, num(7)?);
        let centre = -(q.inverse() * t);
        est.images.push(ImageRecord {
            name: f[9..].join(" "),
            registered: true,
            model_id: model,
            position: Point3::from(centre),
            orientation: q.inverse(),
        });
        expect_pose = false;
    }
    Ok(())
}

/// Pose rows `name tx ty tz qx qy qz qw model_id`; a row with only a name
/// marks an unregistered image.
pub fn parse_pose_rows(text: &str, path: &Path) -> Result<EstimatedTrajectory, BenchError> {
    let mut est = EstimatedTrajectory::default();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if let Some(rest) = line.strip_prefix('#') {
            let f: Vec<&str> = rest.split_whitespace().collect();
            if f.first() == Some(&"points") {
                let (Some(m), Some(c)) = (f.get(1).and_then(|v| v.parse().ok()), f.get(2).and_then(|v| v.parse().ok())) else {
                    return Err(malformed(path, i + 1, "expected `# points <model_id> <count>`"));
                };
                est.points_per_model.insert(m, c);
            }
            continue;
        }
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() == 1 {
            est.images.push(ImageRecord {
                name: f[0].into(),
                registered: false,
                model_id: -1,
                position: Point3::origin(),
                orientation: UnitQuaternion::identity(),
            });
            continue;
        }
        if f.len() != 9 {
            return Err(malformed(path, i + 1, format!("expected 1 or 9 fields, got {}", f.len())));
        }
        let v: Vec<f64> = f[1..8]
            .iter()
            .map(|s| s.parse())
            .collect::<Result<_, _>>()
            .map_err(|e| malformed(path, i + 1, format!("{e}")))?;
        let model = f[8].parse().map_err(|e| malformed(path, i + 1, format!("model id: {e}")))?;
        est.images.push(ImageRecord {
            name: f[0].into(),
            registered: true,
            model_id: model,
            position: Point3::new(v[0], v[1], v[2]),
            orientation: UnitQuaternion::new_normalize(Quaternion::new(v[6], v[3], v[4], v[5])),
        });
    }
    Ok(est)
}

/// Frame index from an image name: the last run of digits in the file stem,
/// so `rgb/000042.png`, `000042.png` and `42` all give 42.
pub fn frame_index(name: &str) -> Option<usize> {
    let stem = Path::new(name).file_stem()?.to_str()?;
    let end = stem.rfind(|c: char| c.is_ascii_digit())? + 1;
    let start = stem[..end].rfind(|c: char| !c.is_ascii_digit()).map_or(0, |i| i + 1);
    stem[start..end].parse().ok()
}

/// `x ↦ s·R·x + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Similarity {
    pub scale: f64,
    pub rotation: Rotation3<f64>,
    pub translation: Vector3<f64>,
}

impl Similarity {
    pub fn identity() -> Similarity {
        Similarity {
            scale: 1.0,
            rotation: Rotation3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn apply(&self, p: &Point3<f64>) -> Point3<f64> {
        Point3::from(self.scale * (self.rotation * p.coords) + self.translation)
    }
}

/// Least-squares similarity taking `est` onto `gt` (Umeyama), with its RMSE.
pub fn align_model(est: &[Point3<f64>], gt: &[Point3<f64>], with_scale: bool) -> Result<(Similarity, f64), BenchError> {
    assert_eq!(est.len(), gt.len(), "correspondences must pair up");
    let n = est.len();
    if n < 3 {
        return Err(BenchError::TooFewPoints(n));
    }
    let mean = |ps: &[Point3<f64>]| ps.iter().map(|p| p.coords).sum::<Vector3<f64>>() / n as f64;
    let (me, mg) = (mean(est), mean(gt));
    let mut cov = Matrix3::zeros();
    let mut var_e = 0.0;
    let mut gt_cov = Matrix3::zeros();
    for (e, g) in est.iter().zip(gt) {
        let (de, dg) = (e.coords - me, g.coords - mg);
        cov += dg * de.transpose();
        gt_cov += dg * dg.transpose();
        var_e += de.norm_squared();
    }
    cov /= n as f64;
    var_e /= n as f64;
    let gsv = gt_cov.svd(false, false).singular_values;
    let gmax = gsv.max();
    let mut gsorted = [gsv[0], gsv[1], gsv[2]];
    gsorted.sort_by(|a, b| b.total_cmp(a));
    if gmax <= 0.0 || gsorted[1] <= 1e-12 * gmax {
        return Err(BenchError::Degenerate);
    }
    let svd = cov.svd(true, true);
    let (u, vt) = (svd.u.expect("u requested"), svd.v_t.expect("v_t requested"));
    let mut d = Matrix3::identity();
    if (u * vt).determinant() < 0.0 {
        // reflection: flip the axis of the smallest singular value
        let k = (0..3)
            .min_by(|&a, &b| svd.singular_values[a].total_cmp(&svd.singular_values[b]))
            .expect("three singular values");
        d[(k, k)] = -1.0;
    }
    let r = u * d * vt;
    let scale = if with_scale {
        if var_e <= 0.0 {
            return Err(BenchError::Degenerate);
        }
        (svd.singular_values.component_mul(&d.diagonal())).sum() / var_e
    } else {
        1.0
    };
    let rotation = Rotation3::from_matrix_unchecked(r);
    let translation = mg - scale * (rotation * me);
    let sim = Similarity {
        scale,
        rotation,
        translation,
    };
    let sse: f64 = est.iter().zip(gt).map(|(e, g)| (sim.apply(e) - g).norm_squared()).sum();
    Ok((sim, (sse / n as f64).sqrt()))
}

/// Number of maximal runs of consecutive frames that are on track in the
/// same model. `flags[i]` is the model of frame `i` when on track.
pub fn count_segments(flags: &[Option<i64>]) -> usize {
    let mut segments = 0;
    let mut prev = None;
    for &f in flags {
        if f.is_some() && f != prev {
            segments += 1;
        }
        prev = f;
    }
    segments
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub sequence_length: usize,
    pub track_segments: usize,
    pub pct_on_track: f64,
    pub points: u64,
    /// Model of each on-track frame.
    pub on_track: Vec<Option<i64>>,
    /// Alignment and RMSE per model, or why it failed.
    pub alignments: BTreeMap<i64, Result<(Similarity, f64), String>>,
}

impl BenchReport {
    /// Assembles a report from per-frame flags; segments and percentage are
    /// derived from them.
    pub fn from_flags(on_track: Vec<Option<i64>>, points: u64) -> BenchReport {
        let n = on_track.len();
        let hits = on_track.iter().filter(|f| f.is_some()).count();
        BenchReport {
            sequence_length: n,
            track_segments: count_segments(&on_track),
            pct_on_track: if n == 0 { 0.0 } else { 100.0 * hits as f64 / n as f64 },
            points,
            on_track,
            alignments: BTreeMap::new(),
        }
    }

    /// `length segments pct points`, as a results table row.
    pub fn table_row(&self) -> String {
        format!("{} {} {:.1} {}", self.sequence_length, self.track_segments, self.pct_on_track, self.points)
    }

    pub fn key_values(&self) -> String {
        format!(
            "sequence_length={} track_segments={} pct_on_track={:.1} points={}",
            self.sequence_length, self.track_segments, self.pct_on_track, self.points
        )
    }
}

impl fmt::Display for BenchReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.table_row())
    }
}

/// Aligns every model independently and flags frames within `threshold`
/// meters of ground truth. A model that cannot be aligned leaves all of its
/// frames off track.
pub fn compute_report(est: &EstimatedTrajectory, gt: &[PoseRow], threshold: f64) -> Result<BenchReport, BenchError> {
    let mut by_model: BTreeMap<i64, Vec<(usize, Point3<f64>)>> = BTreeMap::new();
    for im in est.images.iter().filter(|i| i.registered) {
        let index = frame_index(&im.name).ok_or_else(|| BenchError::UnknownImage(im.name.clone()))?;
        if index >= gt.len() {
            return Err(BenchError::OutOfRange {
                name: im.name.clone(),
                index,
                frames: gt.len(),
            });
        }
        by_model.entry(im.model_id).or_default().push((index, im.position));
    }
    let mut on_track = vec![None; gt.len()];
    let mut alignments = BTreeMap::new();
    for (&model, frames) in &by_model {
        let e: Vec<_> = frames.iter().map(|f| f.1).collect();
        let g: Vec<_> = frames.iter().map(|f| gt[f.0].position).collect();
        match align_model(&e, &g, true) {
            Ok((sim, rmse)) => {
                for ((index, p), g) in frames.iter().zip(&g) {
                    if (sim.apply(p) - g).norm() < threshold {
                        on_track[*index] = Some(model);
                    }
                }
                alignments.insert(model, Ok((sim, rmse)));
            }
            Err(e) => {
                alignments.insert(model, Err(e.to_string()));
            }
        }
    }
    let mut report = BenchReport::from_flags(on_track, est.points());
    report.alignments = alignments;
    Ok(report)
}

/// Scores an estimate against a recorded dataset directory.
pub fn bench_dataset(dataset: &Path, estimate: &Path, threshold: f64) -> Result<BenchReport, BenchError> {
    let manifest = DatasetManifest::load(dataset)?;
    let gt = load_groundtruth(&dataset.join(GROUNDTRUTH_FILE))?;
    if gt.len() != manifest.frame_count as usize {
        return Err(malformed(
            &dataset.join(GROUNDTRUTH_FILE),
            0,
            format!("{} pose rows for {} frames", gt.len(), manifest.frame_count),
        ));
    }
    compute_report(&load_estimate(estimate)?, &gt, threshold)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cloud(rng: &mut ChaCha8Rng, n: usize) -> Vec<Point3<f64>> {
        (0..n)
            .map(|_| Point3::new(rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0)))
            .collect()
    }

    #[test]
    fn identity_alignment() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = cloud(&mut rng, 10);
        let (sim, rmse) = align_model(&p, &p, true).unwrap();
        assert!((sim.scale - 1.0).abs() < 1e-12);
        assert!((sim.rotation.matrix() - Matrix3::identity()).norm() < 1e-9);
        assert!(sim.translation.norm() < 1e-9);
        assert!(rmse < 1e-12);
    }

    #[test]
    fn recovers_constructed_similarity() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let gt = cloud(&mut rng, 12);
        let r = Rotation3::from_euler_angles(0.3, -1.1, 2.0);
        let t = Vector3::new(1.0, -2.0, 0.5);
        // est = 2 R gt + t, so the alignment est -> gt is the inverse
        let est: Vec<_> = gt.iter().map(|g| Point3::from(2.0 * (r * g.coords) + t)).collect();
        let (sim, rmse) = align_model(&gt, &est, true).unwrap();
        assert!((sim.scale - 2.0).abs() < 1e-9);
        assert!((sim.rotation.matrix() - r.matrix()).norm() < 1e-9);
        assert!((sim.translation - t).norm() < 1e-9);
        assert!(rmse < 1e-9);
    }

    #[test]
    fn alignment_errors() {
        let p = [Point3::origin(), Point3::new(1.0, 0.0, 0.0)];
        assert!(matches!(align_model(&p, &p, true), Err(BenchError::TooFewPoints(2))));
        let line: Vec<_> = (0..5).map(|i| Point3::new(i as f64, 0.0, 0.0)).collect();
        assert!(matches!(align_model(&line, &line, true), Err(BenchError::Degenerate)));
    }

    #[test]
    fn segments_and_percentage() {
        let flags: Vec<Option<i64>> = (0..88)
            .map(|i| match i {
                0..=28 => Some(0),
                29..=57 => None,
                _ => Some(1),
            })
            .collect();
        let r = BenchReport::from_flags(flags, 10);
        assert_eq!(r.track_segments, 2);
        assert_eq!(format!("{:.1}", r.pct_on_track), "67.0");
        // adjacent frames in different models are separate segments
        assert_eq!(count_segments(&[Some(0), Some(1), Some(1), None, Some(1)]), 3);
        assert_eq!(count_segments(&[]), 0);
    }

    #[test]
    fn frame_indices_from_names() {
        assert_eq!(frame_index("rgb/000042.png"), Some(42));
        assert_eq!(frame_index("frame_7.jpg"), Some(7));
        assert_eq!(frame_index("12"), Some(12));
        assert_eq!(frame_index("cover.png"), None);
    }

    #[test]
    fn pose_rows_with_points_and_gaps() {
        let text = "# points 0 40\n# points 1 20\n000000.png 0 0 0 0 0 0 1 0\n000001.png\n000002.png 1 0 0 0 0 0 1 1\n";
        let est = parse_pose_rows(text, Path::new("est")).unwrap();
        assert_eq!(est.points(), 60);
        assert_eq!(est.images.len(), 3);
        assert!(!est.images[1].registered);
        assert_eq!(est.model_histogram(), BTreeMap::from([(0, 1), (1, 1)]));
        assert!(parse_pose_rows("a 1 2", Path::new("est")).is_err());
    }

    #[test]
    fn colmap_centre_from_world_to_camera_pose() {
        // camera at (1,2,3) with identity rotation has t = -C
        let text = "# header\n1 1 0 0 0 -1 -2 -3 1 000005.png\n10.0 20.0 -1\n";
        let mut est = EstimatedTrajectory::default();
        parse_colmap_images(text, Path::new("images.txt"), 3, &mut est).unwrap();
        assert_eq!(est.images.len(), 1);
        assert_eq!(est.images[0].model_id, 3);
        assert!((est.images[0].position - Point3::new(1.0, 2.0, 3.0)).norm() < 1e-12);
    }

    #[test]
    fn empty_estimate() {
        let est = parse_pose_rows("", Path::new("est")).unwrap();
        assert!(est.images.is_empty());
        assert!(est.model_histogram().is_empty());
    }
}
