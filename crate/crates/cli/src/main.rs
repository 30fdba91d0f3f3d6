use std::path::PathBuf;
use std::sync::Arc;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use nalgebra::Point3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use rubble_core::assets::load_catalog;
use rubble_core::bench::{bench_dataset, DEFAULT_ONTRACK_THRESHOLD};
use rubble_core::camera::{load_waypoints, run_script, CameraState, Intrinsics, Waypoint, DEFAULT_RATE_HZ};
use rubble_core::config::{config_hash, format_hash, ConfigArgs};
use rubble_core::deposition::{build_pile_with, BuildProgress, PhysicsParams, Pile};
use rubble_core::export::{export_stl, record_dataset, DatasetManifest};
use rubble_core::render::{global_light_from_config, render_frame_debug, write_f32_raw, FogField};
use rubble_core::voids::{analyze, report, voxelize};
use rubble_core::{Catalog, SimConfig};
use rubble_server::{overview_camera, serve, AppState, ServerConfig};

#[derive(Parser)]
#[command(name = "rubble", version, about = "Procedural rubble piles, RGB-D datasets and SfM scoring")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Build and settle a pile; optionally export it as STL.
    Generate {
        #[command(flatten)]
        pile: PileArgs,
        /// Binary STL output path.
        #[arg(long)]
        stl: Option<PathBuf>,
    },
    /// Voxelize a pile and list its void regions.
    Voids {
        #[command(flatten)]
        pile: PileArgs,
        /// Narrowest gap, in meters, that counts as a connection to the outside.
        #[arg(long, default_value_t = rubble_core::voids::DEFAULT_APERTURE)]
        aperture: f64,
    },
    /// Render one frame to PNG, with optional depth and float radiance dumps.
    Render {
        #[command(flatten)]
        pile: PileArgs,
        #[command(flatten)]
        view: ViewArgs,
        /// Camera position x,y,z; defaults to an overview of the pile.
        #[arg(long, value_parser = parse_point, allow_hyphen_values = true)]
        eye: Option<Point3<f64>>,
        /// Point the camera looks at.
        #[arg(long, value_parser = parse_point, allow_hyphen_values = true)]
        look: Option<Point3<f64>>,
        /// Scene time in seconds (fog noise and dust plumes).
        #[arg(long, default_value_t = 0.0)]
        time: f64,
        #[arg(long, default_value = "frame.png")]
        out: PathBuf,
        /// Raw little-endian f32 RGB radiance before quantization.
        #[arg(long)]
        debug_dump: Option<PathBuf>,
    },
    /// Render a scripted camera path into a dataset directory.
    Record {
        #[command(flatten)]
        pile: PileArgs,
        #[command(flatten)]
        view: ViewArgs,
        /// Waypoint script, lines `[t] px py pz lx ly lz`; defaults to a
        /// straight approach towards the pile.
        #[arg(long)]
        waypoints: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_RATE_HZ)]
        rate: f64,
        /// Camera speed along the path, m/s.
        #[arg(long, default_value_t = 1.0)]
        speed: f64,
        /// Length of the default path, seconds.
        #[arg(long, default_value_t = 3.0)]
        duration: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score an SfM reconstruction against a recorded dataset.
    Bench {
        #[arg(long)]
        dataset: PathBuf,
        /// COLMAP text model directory, images.txt, or pose rows file.
        #[arg(long)]
        estimate: PathBuf,
        #[arg(long, default_value_t = DEFAULT_ONTRACK_THRESHOLD)]
        ontrack_threshold: f64,
    },
    /// Host WebSocket teleoperation sessions.
    Serve {
        #[command(flatten)]
        pile: PileArgs,
        #[command(flatten)]
        view: ViewArgs,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        bind: String,
        #[arg(long, default_value_t = rubble_server::DEFAULT_RATE_HZ)]
        rate: f64,
        #[arg(long, default_value = "recordings")]
        record_dir: PathBuf,
    },
    /// Print the resolved configuration and its hash.
    Config {
        #[command(flatten)]
        config: ConfigArgs,
    },
}

#[derive(Args)]
struct PileArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Asset catalog directory; defaults to the bundled catalog.
    #[arg(long)]
    catalog: Option<PathBuf>,
    #[arg(long, short)]
    quiet: bool,
}

#[derive(Args)]
struct ViewArgs {
    #[arg(long, default_value_t = rubble_core::camera::IMAGE_SIZE)]
    width: u32,
    #[arg(long, default_value_t = rubble_core::camera::IMAGE_SIZE)]
    height: u32,
    /// Vertical field of view, degrees.
    #[arg(long, default_value_t = rubble_core::camera::DEFAULT_VFOV_DEG)]
    vfov: f64,
}

impl ViewArgs {
    fn intrinsics(&self) -> Result<Intrinsics> {
        let i = Intrinsics {
            width: self.width,
            height: self.height,
            vfov_deg: self.vfov,
        };
        i.validate()?;
        Ok(i)
    }
}

fn parse_point(s: &str) -> Result<Point3<f64>, String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|e| format!("{t:?}: {e}")))
        .collect::<Result<_, _>>()?;
    match v[..] {
        [x, y, z] => Ok(Point3::new(x, y, z)),
        _ => Err(format!("expected x,y,z, got {s:?}")),
    }
}

impl PileArgs {
    fn load(&self) -> Result<(SimConfig, Catalog, Pile)> {
        let cfg = self.config.resolve()?;
        let catalog = match &self.catalog {
            Some(dir) => load_catalog(dir)?,
            None => Catalog::bundled(),
        };
        let quiet = self.quiet;
        let started = Instant::now();
        let mut progress = |p: BuildProgress| {
            if !quiet && p.settled {
                eprintln!("layer {}/{} settled after {} steps", p.layer + 1, p.layers, p.step);
            }
        };
        let pile = build_pile_with(&cfg, &catalog, &PhysicsParams::default(), &mut progress)?;
        if !quiet {
            eprintln!(
                "{} instances, height {:.3} m, built in {:.1} s",
                pile.instances.len(),
                pile.max_height(),
                started.elapsed().as_secs_f64()
            );
        }
        Ok((cfg, catalog, pile))
    }
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match Cli::parse().command {
        Cmd::Generate { pile, stl } => {
            let (cfg, _, pile) = pile.load()?;
            let check = pile.check(PhysicsParams::default().contact_tolerance);
            println!("hash={}", format_hash(config_hash(&cfg)));
            println!("digest={}", pile.pose_digest());
            println!("instances={}", pile.instances.len());
            println!("max_height={:.4}", pile.max_height());
            println!("max_penetration={:.4}", check.max_penetration);
            println!("unsupported={}", check.unsupported.len());
            if let Some(path) = stl {
                export_stl(&pile, &path).with_context(|| format!("writing {}", path.display()))?;
                println!("stl={}", path.display());
            }
        }
        Cmd::Voids { pile, aperture } => {
            let (cfg, _, pile) = pile.load()?;
            let grid = voxelize(&pile, cfg.voxel_resolution)?;
            let a = analyze(&grid, aperture);
            print!("{}", report(&a.regions));
            eprintln!(
                "{} regions, {} solid cells, {} exterior cells",
                a.regions.len(),
                a.solid_cells,
                a.exterior_cells
            );
        }
        Cmd::Render {
            pile,
            view,
            eye,
            look,
            time,
            out,
            debug_dump,
        } => {
            let (cfg, _, pile) = pile.load()?;
            let intrinsics = view.intrinsics()?;
            let cam = camera(&pile, intrinsics, eye, look)?;
            let rig = global_light_from_config(&cfg, &mut ChaCha8Rng::seed_from_u64(cfg.seed));
            let fog = FogField::from_config(&cfg, pile.aabb());
            let (frame, debug) = render_frame_debug(&pile.scene(), &cam, &rig, &fog, time);
            image::save_buffer(&out, &frame.rgb, frame.width, frame.height, image::ExtendedColorType::Rgb8)
                .with_context(|| format!("writing {}", out.display()))?;
            if let Some(path) = debug_dump {
                write_f32_raw(&path, &debug.radiance).with_context(|| format!("writing {}", path.display()))?;
            }
        }
        Cmd::Record {
            pile,
            view,
            waypoints,
            rate,
            speed,
            duration,
            out,
        } => {
            let quiet = pile.quiet;
            let (cfg, _, pile) = pile.load()?;
            let intrinsics = view.intrinsics()?;
            let waypoints = match waypoints {
                Some(path) => load_waypoints(&path)?,
                None => default_path(&pile, intrinsics, speed, duration)?,
            };
            let trajectory = run_script(&waypoints, rate, speed, intrinsics)?;
            let rig = global_light_from_config(&cfg, &mut ChaCha8Rng::seed_from_u64(cfg.seed));
            let fog = FogField::from_config(&cfg, pile.aabb());
            let manifest = DatasetManifest::new(&cfg, rate, &intrinsics);
            let started = Instant::now();
            let m = record_dataset(&pile.scene(), &trajectory, &rig, &fog, manifest, &out, Some(&pile), &mut |i, n| {
                if !quiet {
                    eprint!("\rframe {}/{}", i + 1, n);
                }
            })?;
            if !quiet {
                eprintln!(" in {:.1} s", started.elapsed().as_secs_f64());
            }
            println!("frames={} dir={}", m.frame_count, out.display());
        }
        Cmd::Bench {
            dataset,
            estimate,
            ontrack_threshold,
        } => {
            if !(ontrack_threshold > 0.0) {
                bail!("--ontrack-threshold must be > 0");
            }
            let r = bench_dataset(&dataset, &estimate, ontrack_threshold)?;
            println!("{}", r.table_row());
            println!("{}", r.key_values());
        }
        Cmd::Serve {
            pile,
            view,
            port,
            bind,
            rate,
            record_dir,
        } => {
            if !(rate > 0.0 && rate.is_finite()) {
                bail!("--rate must be > 0");
            }
            let sim = pile.config.resolve()?;
            let catalog = match &pile.catalog {
                Some(dir) => load_catalog(dir)?,
                None => Catalog::bundled(),
            };
            let mut cfg = ServerConfig::new(sim, catalog);
            cfg.rate = rate;
            cfg.intrinsics = view.intrinsics()?;
            cfg.record_root = record_dir;
            eprintln!("building initial pile");
            let state = Arc::new(AppState::new(cfg)?);
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(async {
                let listener = tokio::net::TcpListener::bind((bind.as_str(), port)).await?;
                eprintln!("listening on ws://{}/ws", listener.local_addr()?);
                serve(listener, state).await
            })?;
        }
        Cmd::Config { config } => {
            let cfg = config.resolve()?;
            print!("{}", cfg.serialize());
            println!("# hash {}", format_hash(config_hash(&cfg)));
        }
    }
    Ok(())
}

fn camera(pile: &Pile, intrinsics: Intrinsics, eye: Option<Point3<f64>>, look: Option<Point3<f64>>) -> Result<CameraState> {
    let overview = overview_camera(pile, intrinsics);
    let eye = eye.unwrap_or(overview.position);
    let look = look.unwrap_or_else(|| eye + overview.forward());
    let mut cam = CameraState::looking_at(eye, look).context("--look must differ from --eye")?;
    cam.intrinsics = intrinsics;
    Ok(cam)
}

/// Straight approach from the overview position towards the pile.
fn default_path(pile: &Pile, intrinsics: Intrinsics, speed: f64, duration: f64) -> Result<Vec<Waypoint>> {
    if !(duration > 0.0) {
        bail!("--duration must be > 0");
    }
    let start = overview_camera(pile, intrinsics);
    let dir = start.forward();
    let end = start.position + dir * speed * duration;
    Ok(vec![
        Waypoint::new(start.position, start.position + dir),
        Waypoint::new(end, end + dir),
    ])
}
