use std::path::Path;

use nalgebra::{Point3, Rotation3, UnitQuaternion, Vector3};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rubble_core::bench::*;
use rubble_core::export::PoseRow;

/// Segments by definition: frames where a new on-track run starts.
fn segments_brute_force(flags: &[Option<i64>]) -> usize {
    (0..flags.len())
        .filter(|&i| flags[i].is_some() && (i == 0 || flags[i - 1] != flags[i]))
        .count()
}

#[test]
fn segments_match_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..1000 {
        let n = rng.gen_range(0..200);
        let models = rng.gen_range(1..4);
        let flags: Vec<Option<i64>> = (0..n)
            .map(|_| rng.gen_bool(0.7).then(|| rng.gen_range(0..models)))
            .collect();
        assert_eq!(count_segments(&flags), segments_brute_force(&flags));
        let report = BenchReport::from_flags(flags.clone(), 0);
        let hits = flags.iter().filter(|f| f.is_some()).count();
        assert!(report.track_segments <= hits);
        assert!((0.0..=100.0).contains(&report.pct_on_track));
    }
}

fn random_path(rng: &mut ChaCha8Rng, n: usize) -> Vec<Point3<f64>> {
    let mut p = Point3::origin();
    (0..n)
        .map(|_| {
            p += Vector3::new(rng.gen_range(-0.3..0.3), rng.gen_range(-0.3..0.3), rng.gen_range(-0.1..0.1));
            p
        })
        .collect()
}

proptest! {
    #[test]
    fn alignment_is_invariant_to_similarity(
        seed in any::<u64>(),
        scale in 0.1f64..10.0,
        angles in [-3.1f64..3.1, -1.5f64..1.5, -3.1f64..3.1],
        shift in [-100.0f64..100.0, -100.0f64..100.0, -100.0f64..100.0],
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gt = random_path(&mut rng, 30);
        let rot = Rotation3::from_euler_angles(angles[0], angles[1], angles[2]);
        let t = Vector3::from(shift);
        let est: Vec<_> = gt.iter().map(|p| Point3::from(scale * (rot * p.coords)) + t).collect();
        let (sim, rmse) = align_model(&est, &gt, true).unwrap();
        prop_assert!(rmse < 1e-6, "rmse {}", rmse);
        prop_assert!((sim.scale * scale - 1.0).abs() < 1e-6);
        for (e, g) in est.iter().zip(&gt) {
            prop_assert!((sim.apply(e) - g).norm() < 1e-6);
        }
    }
}

#[test]
fn noisy_alignment_rmse_monte_carlo() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let noise = Normal::new(0.0, 0.005).unwrap();
    for _ in 0..200 {
        let gt = random_path(&mut rng, 60);
        let rot = Rotation3::from_euler_angles(rng.gen_range(-3.0..3.0), rng.gen_range(-1.5..1.5), rng.gen_range(-3.0..3.0));
        let scale = rng.gen_range(0.2..5.0);
        let est: Vec<_> = gt
            .iter()
            .map(|p| {
                let jitter = Vector3::from_fn(|_, _| noise.sample(&mut rng));
                Point3::from(scale * (rot * (p.coords + jitter))) + Vector3::new(3.0, -1.0, 2.0)
            })
            .collect();
        let (sim, rmse) = align_model(&est, &gt, true).unwrap();
        assert!(rmse <= 0.02, "rmse {rmse}");
        assert!((sim.scale * scale - 1.0).abs() < 0.02);
    }
}

fn gt_rows(points: &[Point3<f64>]) -> Vec<PoseRow> {
    points
        .iter()
        .enumerate()
        .map(|(i, p)| PoseRow {
            timestamp: i as f64 / 30.0,
            position: *p,
            orientation: UnitQuaternion::identity(),
        })
        .collect()
}

#[test]
fn report_from_pose_rows_file_and_directory() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let gt = random_path(&mut rng, 40);
    let mut text = String::from("# points 0 500\n# points 1 250\n");
    for (i, p) in gt.iter().enumerate() {
        match i {
            0..=14 => {
                let q = Point3::from(2.0 * p.coords) + Vector3::new(1.0, 0.0, 0.0);
                text += &format!("{i:06}.png {} {} {} 0 0 0 1 0\n", q.x, q.y, q.z);
            }
            15..=19 => text += &format!("{i:06}.png\n"),
            _ => text += &format!("rgb/{i:06}.png {} {} {} 0 0 0 1 1\n", p.x, p.y, p.z),
        }
    }
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("poses.txt");
    std::fs::write(&file, &text).unwrap();
    let est = load_estimate(&file).unwrap();
    assert_eq!(est.points(), 750);
    let report = compute_report(&est, &gt_rows(&gt), DEFAULT_ONTRACK_THRESHOLD).unwrap();
    assert_eq!(report.table_row(), "40 2 87.5 750");

    // duplicate names are rejected
    std::fs::write(&file, format!("{text}000003.png\n")).unwrap();
    assert!(matches!(load_estimate(&file), Err(BenchError::DuplicateImage { .. })));
    // frames beyond the sequence are rejected
    std::fs::write(&file, format!("{text}000099.png 0 0 0 0 0 0 1 0\n")).unwrap();
    let est = load_estimate(&file).unwrap();
    assert!(matches!(compute_report(&est, &gt_rows(&gt), 0.1), Err(BenchError::OutOfRange { .. })));
}

#[test]
fn colmap_model_directories() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    for (model, frames) in [(0, 0..10), (1, 10..20)] {
        let m = root.join(model.to_string());
        std::fs::create_dir(&m).unwrap();
        let mut images = String::from("# Image list\n");
        let mut points = String::from("# 3D point list\n");
        for (k, i) in frames.enumerate() {
            // identity rotation: centre = -t
            images += &format!("{} 1 0 0 0 {} 0 0 1 {i:06}.png\n\n", k + 1, -(i as f64) * 0.5);
            points += &format!("{} 0 0 0 0 0 0 0\n", k + 1);
        }
        std::fs::write(m.join("images.txt"), images).unwrap();
        std::fs::write(m.join("points3D.txt"), points).unwrap();
    }
    let est = load_estimate(root).unwrap();
    assert_eq!(est.images.len(), 20);
    assert_eq!(est.points(), 20);
    assert_eq!(est.model_histogram().into_iter().collect::<Vec<_>>(), vec![(0, 10), (1, 10)]);
    let gt: Vec<_> = (0..20).map(|i| Point3::new(i as f64 * 0.5, 0.0, 0.0)).collect();
    // collinear models cannot fix a rotation, so nothing is on track
    let report = compute_report(&est, &gt_rows(&gt), 0.1).unwrap();
    assert_eq!(report.table_row(), "20 0 0.0 20");
    assert!(report.alignments.values().all(|a| a.is_err()));
    assert!(load_estimate(Path::new("/nonexistent/estimate")).is_err());
}
