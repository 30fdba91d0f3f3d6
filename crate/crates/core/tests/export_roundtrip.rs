use std::collections::BTreeMap;

use nalgebra::Point3;
use rubble_core::camera::{run_script, Intrinsics, Waypoint};
use rubble_core::config::{config_hash, format_hash};
use rubble_core::export::*;
use rubble_core::render::{global_light_from_config, FogField};
use rubble_core::voids::{voxelize, voxelize_mesh, DEFAULT_MAX_CELLS};
use rubble_core::{build_pile, Catalog, SimConfig};

fn box_only_config(seed: u64) -> SimConfig {
    SimConfig {
        seed,
        num_layers: 2,
        num_objs: 30,
        spawn_bound: [2.0, 2.0, 0.25],
        asset_weights: BTreeMap::from([("cinder_block".to_string(), 1.0), ("slab".to_string(), 1.0)]),
        ..SimConfig::default()
    }
}

#[test]
fn stl_of_boxes_has_twelve_triangles_each() {
    let cfg = box_only_config(3);
    let pile = build_pile(&cfg, &Catalog::bundled()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("pile.stl");
    export_stl(&pile, &path).unwrap();
    let mesh = read_stl(&path).unwrap();
    assert_eq!(mesh.triangles.len(), 12 * pile.instances.len());
    assert!(mesh.header_text().contains(&format_hash(config_hash(&cfg))));
}

#[test]
fn single_box_stl_bounds() {
    let tris = rubble_core::render::box_triangles(Point3::new(-0.5, -0.5, 0.0), Point3::new(0.5, 0.5, 1.0));
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("box.stl");
    std::fs::write(&path, stl_bytes(&tris, 1)).unwrap();
    let mesh = read_stl(&path).unwrap();
    assert_eq!(mesh.triangles.len(), 12);
    let pts: Vec<_> = mesh.triangles.iter().flatten().collect();
    let lo = pts.iter().fold(Point3::new(f64::MAX, f64::MAX, f64::MAX), |a, p| a.inf(p));
    let hi = pts.iter().fold(Point3::new(f64::MIN, f64::MIN, f64::MIN), |a, p| a.sup(p));
    assert!((lo - Point3::new(-0.5, -0.5, 0.0)).norm() < 1e-6);
    assert!((hi - Point3::new(0.5, 0.5, 1.0)).norm() < 1e-6);
}

#[test]
fn stl_revoxelizes_to_the_same_solid() {
    let cfg = SimConfig {
        seed: 5,
        num_layers: 3,
        num_objs: 30,
        spawn_bound: [3.0, 3.0, 0.25],
        ..SimConfig::default()
    };
    let pile = build_pile(&cfg, &Catalog::bundled()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("pile.stl");
    export_stl(&pile, &path).unwrap();
    let mesh = read_stl(&path).unwrap();
    let direct = voxelize(&pile, 0.05).unwrap();
    let from_stl = voxelize_mesh(&mesh.triangles, 0.05, DEFAULT_MAX_CELLS).unwrap();
    let (a, b) = (direct.solid_count() as f64, from_stl.solid_count() as f64);
    assert!(a > 1000.0);
    assert!((a - b).abs() / a < 0.01, "direct {a} vs stl {b}");
}

#[test]
fn dataset_contract_small_frames() {
    let cfg = SimConfig {
        num_layers: 2,
        num_objs: 30,
        spawn_bound: [2.0, 2.0, 0.25],
        ..SimConfig::default()
    };
    let pile = build_pile(&cfg, &Catalog::bundled()).unwrap();
    let intr = Intrinsics {
        width: 48,
        height: 40,
        ..Intrinsics::default()
    };
    let path = [
        Waypoint::new(Point3::new(-6.0, 0.0, 2.0), Point3::new(0.0, 0.0, 0.0)),
        Waypoint::new(Point3::new(-3.0, 0.0, 2.0), Point3::new(0.0, 0.0, 0.0)),
    ];
    let traj = run_script(&path, 30.0, 1.0, intr).unwrap();
    assert_eq!(traj.len(), 91);
    let rig = global_light_from_config(&cfg, &mut rand::thread_rng());
    let fog = FogField::from_config(&cfg, pile.aabb());
    let dir = tempfile::tempdir().unwrap();
    let m = record_dataset(
        &pile.scene(),
        &traj,
        &rig,
        &fog,
        DatasetManifest::new(&cfg, 30.0, &intr),
        dir.path(),
        Some(&pile),
        &mut |_, _| {},
    )
    .unwrap();
    assert_eq!(m.frame_count, 91);
    assert_eq!(std::fs::read_dir(dir.path().join("rgb")).unwrap().count(), 91);
    assert_eq!(std::fs::read_dir(dir.path().join("depth")).unwrap().count(), 91);
    let gt = load_groundtruth(&dir.path().join(GROUNDTRUTH_FILE)).unwrap();
    assert_eq!(gt.len(), 91);
    let text = std::fs::read_to_string(dir.path().join(GROUNDTRUTH_FILE)).unwrap();
    for (row, (t, _)) in text.lines().zip(&traj.samples) {
        assert_eq!(row.split(' ').next().unwrap(), format!("{t:.9}"));
        let q: Vec<f64> = row.split(' ').skip(4).map(|v| v.parse().unwrap()).collect();
        let norm = q.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-6);
    }
    assert_eq!(DatasetManifest::load(dir.path()).unwrap(), m);

    // depth read back within the quantization bound; far ground saturates
    // the 16-bit millimetre range
    let frame = {
        let (t, cam) = traj.samples[45];
        rubble_core::render::render_frame(&pile.scene(), &cam, &rig, &fog, t)
    };
    let (w, h, depth) = read_depth_png(&dir.path().join(frame_path(DEPTH_PATTERN, 45))).unwrap();
    assert_eq!((w, h), (48, 40));
    for (a, b) in depth.iter().zip(&frame.depth) {
        let b = b.min(u16::MAX as f32 / 1000.0);
        assert!((a - b).abs() <= 0.0005 + 1e-6, "{a} vs {b}");
    }
}
