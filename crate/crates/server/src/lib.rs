//! Live teleoperation sessions over WebSocket.
//!
//! Each connection gets its own session: a command task that owns the
//! mutable state and publishes immutable snapshots, a render thread that
//! always draws the newest snapshot, and an egress task that forwards only
//! the newest rendered frame. Slow clients lose frames instead of queueing
//! them.

pub mod protocol;

use std::io::Cursor;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::response::Response;
use axum::routing::get;
use axum::Router;
use futures_util::{SinkExt, StreamExt};
use nalgebra::Point3;
use tokio::net::TcpListener;
use tokio::sync::{mpsc, watch};

use rubble_core::camera::{apply_command, CameraState, Intrinsics, MotionCommand};
use rubble_core::deposition::{build_pile, DepositionError, Pile};
use rubble_core::export::{DatasetManifest, DatasetWriter};
use rubble_core::render::{global_light_from_config, render_frame, FogField, LightingRig, Scene};
use rubble_core::{Catalog, SimConfig};

use protocol::{Command, FrameHeader, Pose, Reply, FLAG_RECORDING, PAYLOAD_PNG_RGB8};

pub const DEFAULT_RATE_HZ: f64 = 15.0;
const MIN_COMMAND_DT: f64 = 1.0 / 240.0;
const MAX_COMMAND_DT: f64 = 0.25;
const TEXT_QUEUE: usize = 64;

#[derive(Debug, Clone)]
pub struct ServerConfig {
    pub rate: f64,
    pub sim: SimConfig,
    pub catalog: Arc<Catalog>,
    pub intrinsics: Intrinsics,
    /// Recordings go to numbered subdirectories of this directory.
    pub record_root: PathBuf,
}

impl ServerConfig {
    pub fn new(sim: SimConfig, catalog: Catalog) -> ServerConfig {
        ServerConfig {
            rate: DEFAULT_RATE_HZ,
            sim,
            catalog: Arc::new(catalog),
            intrinsics: Intrinsics::default(),
            record_root: PathBuf::from("recordings"),
        }
    }
}

/// Shared by all sessions.
pub struct AppState {
    cfg: ServerConfig,
    pile: Arc<Pile>,
    live_workers: Arc<AtomicUsize>,
    recordings: AtomicU64,
}

impl AppState {
    /// Builds the initial pile, which every new session starts from.
    pub fn new(cfg: ServerConfig) -> Result<AppState, DepositionError> {
        let pile = build_pile(&cfg.sim, &cfg.catalog)?;
        Ok(AppState {
            cfg,
            pile: Arc::new(pile),
            live_workers: Arc::new(AtomicUsize::new(0)),
            recordings: AtomicU64::new(0),
        })
    }

    /// Render threads currently running across all sessions.
    pub fn live_workers(&self) -> usize {
        self.live_workers.load(Ordering::SeqCst)
    }

    pub fn pile(&self) -> &Arc<Pile> {
        &self.pile
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new().route("/ws", get(upgrade)).with_state(state)
}

pub async fn serve(listener: TcpListener, state: Arc<AppState>) -> std::io::Result<()> {
    axum::serve(listener, router(state)).await
}

async fn upgrade(ws: WebSocketUpgrade, State(state): State<Arc<AppState>>) -> Response {
    ws.on_upgrade(move |socket| run_session(socket, state))
}

/// A camera outside the pile looking at its centre, or at the origin from
/// a few meters away when the pile is empty.
pub fn overview_camera(pile: &Pile, intrinsics: Intrinsics) -> CameraState {
    let (lo, hi) = pile
        .aabb()
        .unwrap_or((Point3::new(-1.0, -1.0, 0.0), Point3::new(1.0, 1.0, 1.0)));
    let centre = nalgebra::center(&lo, &hi);
    let reach = (hi.x - lo.x).max(hi.y - lo.y) * 0.5 + 3.0;
    let eye = Point3::new(centre.x - reach, centre.y, hi.z.max(1.0) + 1.5);
    let mut cam = CameraState::looking_at(eye, Point3::new(centre.x, centre.y, centre.z.max(0.0)))
        .expect("eye is never at the pile centre");
    cam.intrinsics = intrinsics;
    cam
}

/// Everything the renderer needs for one frame. Never mutated once
/// published.
#[derive(Debug, Clone)]
struct Snapshot {
    version: u64,
    epoch: u64,
    pile: Arc<Pile>,
    scene: Arc<Scene>,
    camera: CameraState,
    rig: LightingRig,
    fog: Arc<FogField>,
    recording: Option<PathBuf>,
}

/// Mutable session state, owned by the command task.
struct Control {
    state: Arc<AppState>,
    sim: SimConfig,
    snap: Snapshot,
    last_command: Option<Instant>,
}

impl Control {
    fn new(state: Arc<AppState>) -> Control {
        let sim = state.cfg.sim.clone();
        let pile = state.pile.clone();
        let snap = Snapshot {
            version: 0,
            epoch: 0,
            scene: pile.scene(),
            camera: overview_camera(&pile, state.cfg.intrinsics),
            rig: initial_rig(&sim),
            fog: Arc::new(FogField::from_config(&sim, pile.aabb())),
            pile,
            recording: None,
        };
        Control {
            state,
            sim,
            snap,
            last_command: None,
        }
    }

    fn ack(&self, cmd: &Command) -> Reply {
        Reply::Ack {
            cmd: cmd.name().into(),
            version: self.snap.version,
            epoch: self.snap.epoch,
            pose: Pose::from(&self.snap.camera),
            digest: matches!(cmd, Command::Regen { .. }).then(|| self.snap.pile.pose_digest()),
            recording: self.snap.recording.as_ref().map(|p| p.display().to_string()),
        }
    }

    /// Applies a command to a copy of the snapshot; the caller publishes it.
    async fn apply(&mut self, cmd: &Command) -> Result<(), String> {
        let mut next = self.snap.clone();
        match *cmd {
            Command::Move {
                roll,
                pitch,
                yaw,
                speed,
                headlamp,
            } => {
                let now = Instant::now();
                let dt = self
                    .last_command
                    .map_or(MIN_COMMAND_DT, |t| (now - t).as_secs_f64())
                    .clamp(MIN_COMMAND_DT, MAX_COMMAND_DT);
                self.last_command = Some(now);
                let mc = MotionCommand {
                    d_roll: roll,
                    d_pitch: pitch,
                    d_yaw: yaw,
                    axial_speed: speed,
                    headlamp_intensity: headlamp,
                };
                next.camera = apply_command(&next.camera, &mc, dt).map_err(|e| e.to_string())?;
                if let Some(h) = headlamp {
                    set_headlamp(&mut next.rig, h)?;
                }
            }
            Command::Light { headlamp, intensity } => {
                if let Some(h) = headlamp {
                    set_headlamp(&mut next.rig, h)?;
                }
                if let Some(i) = intensity {
                    non_negative("intensity", i)?;
                    next.rig.global.intensity = i;
                }
            }
            Command::Fog { density, intensity } => {
                density.map_or(Ok(()), |d| non_negative("density", d))?;
                intensity.map_or(Ok(()), |i| non_negative("intensity", i))?;
                let mut fog = (*next.fog).clone();
                if let Some(d) = density {
                    fog.sigma_base = d;
                    self.sim.fog_density = d;
                }
                if let Some(i) = intensity {
                    fog.noise_amplitude = i;
                    self.sim.fog_intensity = i;
                }
                next.fog = Arc::new(fog);
            }
            Command::Regen { seed } => {
                let mut sim = self.sim.clone();
                if let Some(s) = seed {
                    sim.seed = s;
                }
                let catalog = self.state.cfg.catalog.clone();
                let build_cfg = sim.clone();
                let pile = tokio::task::spawn_blocking(move || build_pile(&build_cfg, &catalog))
                    .await
                    .map_err(|e| format!("pile build panicked: {e}"))?
                    .map_err(|e| e.to_string())?;
                let pile = Arc::new(pile);
                next.scene = pile.scene();
                let mut fog = (*next.fog).clone();
                fog.plumes = FogField::from_config(&sim, pile.aabb()).plumes;
                next.fog = Arc::new(fog);
                next.pile = pile;
                next.epoch += 1;
                // a recording belongs to one pile
                next.recording = None;
                self.sim = sim;
            }
            Command::Record { on } => {
                next.recording = match (on, next.recording.take()) {
                    (true, Some(dir)) => Some(dir),
                    (true, None) => {
                        let n = self.state.recordings.fetch_add(1, Ordering::SeqCst);
                        Some(self.state.cfg.record_root.join(format!("recording-{n:04}")))
                    }
                    (false, _) => None,
                };
            }
        }
        next.version += 1;
        self.snap = next;
        Ok(())
    }
}

fn initial_rig(sim: &SimConfig) -> LightingRig {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(sim.seed);
    global_light_from_config(sim, &mut rng)
}

fn non_negative(name: &str, v: f64) -> Result<(), String> {
    if v.is_finite() && v >= 0.0 {
        Ok(())
    } else {
        Err(format!("{name} must be finite and >= 0, got {v}"))
    }
}

fn set_headlamp(rig: &mut LightingRig, intensity: f64) -> Result<(), String> {
    non_negative("headlamp", intensity)?;
    rig.headlamp_on = intensity > 0.0;
    rig.headlamp_intensity = intensity;
    Ok(())
}

/// A rendered, encoded frame ready to send.
struct Outgoing {
    binary: Vec<u8>,
    pose: String,
}

async fn run_session(socket: WebSocket, state: Arc<AppState>) {
    let (mut sink, mut stream) = socket.split();
    let mut control = Control::new(state.clone());
    let (snap_tx, snap_rx) = watch::channel(Arc::new(control.snap.clone()));
    let (frame_tx, mut frame_rx) = watch::channel::<Option<Arc<Outgoing>>>(None);
    let (text_tx, mut text_rx) = mpsc::channel::<String>(TEXT_QUEUE);

    let worker = spawn_worker(state.clone(), snap_rx, frame_tx, text_tx.clone());

    let egress = tokio::spawn(async move {
        loop {
            tokio::select! {
                text = text_rx.recv() => match text {
                    Some(t) => if sink.send(Message::Text(t)).await.is_err() { break },
                    None => break,
                },
                changed = frame_rx.changed() => {
                    if changed.is_err() {
                        break;
                    }
                    let latest = frame_rx.borrow_and_update().clone();
                    if let Some(f) = latest {
                        if sink.send(Message::Binary(f.binary.clone())).await.is_err()
                            || sink.send(Message::Text(f.pose.clone())).await.is_err()
                        {
                            break;
                        }
                    }
                }
            }
        }
        let _ = sink.close().await;
    });

    let hello = Reply::Hello {
        width: state.cfg.intrinsics.width,
        height: state.cfg.intrinsics.height,
        rate: state.cfg.rate,
        seed: control.sim.seed,
        instances: control.snap.pile.instances.len(),
        version: control.snap.version,
    };
    let _ = text_tx.send(hello.to_json()).await;

    while let Some(Ok(msg)) = stream.next().await {
        let text = match msg {
            Message::Text(t) => t,
            Message::Close(_) => break,
            _ => continue,
        };
        let reply = match serde_json::from_str::<Command>(&text) {
            Err(e) => Reply::Error {
                message: format!("bad command: {e}"),
            },
            Ok(cmd) => match control.apply(&cmd).await {
                Ok(()) => {
                    snap_tx.send_replace(Arc::new(control.snap.clone()));
                    control.ack(&cmd)
                }
                Err(message) => Reply::Error { message },
            },
        };
        if text_tx.send(reply.to_json()).await.is_err() {
            break;
        }
    }

    // closing the snapshot channel stops the worker, whose exit closes the
    // frame channel and with it the egress task
    drop(snap_tx);
    drop(text_tx);
    let _ = tokio::task::spawn_blocking(move || worker.join()).await;
    let _ = egress.await;
}

struct LiveGuard(Arc<AtomicUsize>);

impl Drop for LiveGuard {
    fn drop(&mut self) {
        self.0.fetch_sub(1, Ordering::SeqCst);
    }
}

fn spawn_worker(
    state: Arc<AppState>,
    snaps: watch::Receiver<Arc<Snapshot>>,
    frames: watch::Sender<Option<Arc<Outgoing>>>,
    text: mpsc::Sender<String>,
) -> JoinHandle<()> {
    state.live_workers.fetch_add(1, Ordering::SeqCst);
    let guard = LiveGuard(state.live_workers.clone());
    std::thread::spawn(move || {
        let _guard = guard;
        render_loop(&state, snaps, frames, text);
    })
}

fn render_loop(
    state: &AppState,
    mut snaps: watch::Receiver<Arc<Snapshot>>,
    frames: watch::Sender<Option<Arc<Outgoing>>>,
    text: mpsc::Sender<String>,
) {
    let period = Duration::from_secs_f64(1.0 / state.cfg.rate);
    let started = Instant::now();
    let mut epoch = 0;
    let mut index: u32 = 0;
    let mut recorder: Option<(PathBuf, DatasetWriter)> = None;
    let mut next_tick = Instant::now();
    loop {
        // an error means the session dropped its sender
        if snaps.has_changed().is_err() {
            break;
        }
        let snap = snaps.borrow_and_update().clone();
        if snap.epoch != epoch {
            epoch = snap.epoch;
            index = 0;
        }
        let t = started.elapsed().as_secs_f64();
        let mut frame = render_frame(&snap.scene, &snap.camera, &snap.rig, &snap.fog, t);
        frame.frame_index = index;

        if recorder.as_ref().map(|r| &r.0) != snap.recording.as_ref() {
            if let Some((_, w)) = recorder.take() {
                report(&text, w.finish().err());
            }
            if let Some(dir) = &snap.recording {
                let manifest = DatasetManifest::new(&snap.pile_config(state), state.cfg.rate, &snap.camera.intrinsics);
                match DatasetWriter::create(dir, manifest, Some(&snap.pile)) {
                    Ok(w) => recorder = Some((dir.clone(), w)),
                    Err(e) => report(&text, Some(e)),
                }
            }
        }
        if let Some((dir, w)) = &mut recorder {
            let mut rec = frame.clone();
            rec.frame_index = w.frames_written();
            if let Err(e) = w.write_frame(&rec) {
                log::warn!("recording to {} stopped: {e}", dir.display());
                report(&text, Some(e));
                recorder = None;
            }
        }

        let out = encode(&frame, &snap, recorder.is_some());
        if frames.send(Some(Arc::new(out))).is_err() {
            break;
        }
        index += 1;

        next_tick += period;
        let now = Instant::now();
        if next_tick > now {
            std::thread::sleep(next_tick - now);
        } else {
            // rendering lags; skip the missed ticks rather than bursting
            next_tick = now;
        }
    }
    if let Some((_, w)) = recorder {
        report(&text, w.finish().err());
    }
}

impl Snapshot {
    /// Configuration that produced the current pile.
    fn pile_config(&self, state: &AppState) -> SimConfig {
        SimConfig {
            seed: self.pile.seed,
            ..state.cfg.sim.clone()
        }
    }
}

fn report<E: std::fmt::Display>(text: &mpsc::Sender<String>, err: Option<E>) {
    if let Some(e) = err {
        let _ = text.try_send(
            Reply::Error {
                message: format!("recording: {e}"),
            }
            .to_json(),
        );
    }
}

fn encode(frame: &rubble_core::render::Frame, snap: &Snapshot, recording: bool) -> Outgoing {
    let mut png = Vec::new();
    image::write_buffer_with_format(
        &mut Cursor::new(&mut png),
        &frame.rgb,
        frame.width,
        frame.height,
        image::ExtendedColorType::Rgb8,
        image::ImageFormat::Png,
    )
    .expect("encoding an in-memory PNG cannot fail");
    let header = FrameHeader {
        frame_index: frame.frame_index,
        timestamp: frame.timestamp,
        width: frame.width as u16,
        height: frame.height as u16,
        payload_kind: PAYLOAD_PNG_RGB8,
        flags: if recording { FLAG_RECORDING } else { 0 },
        payload_len: png.len() as u32,
    };
    let mut binary = Vec::with_capacity(protocol::HEADER_LEN + png.len());
    binary.extend_from_slice(&header.encode());
    binary.extend_from_slice(&png);
    let pose = Reply::Pose {
        frame_index: frame.frame_index,
        timestamp: frame.timestamp,
        epoch: snap.epoch,
        version: snap.version,
        pose: Pose::from(&frame.pose),
    }
    .to_json();
    Outgoing { binary, pose }
}
