//! The teleoperation bridge: a WebSocket session that streams camera frames
//! out, takes steering deltas in and records demonstrations as episodes.
//!
//! Messages are binary, little-endian:
//!
//! ```text
//! FRAME    seq u32 | mode u8 | width u16 | height u16 | image [u8; w·h]
//!          | x, y, heading, steer, lateral_error: f32 | attention [u8; w·h]?
//! CONTROL  seq u32 | steer_delta f32 | record u8 (0 none, 1 start, 2 stop)
//! ```
//!
//! A plain HTTP request on the same port is answered with static assets.

use std::fs;
use std::io::{Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::path::{Component, Path, PathBuf};
use std::thread;
use std::time::{Duration, Instant};

use sdai_core::camera::{quantize, render_frame};
use sdai_core::rng::{derive_seed, seeded};
use sdai_core::slit::crop_columns;
use sdai_core::{CameraIntrinsics, Episode, EpisodeId, Sample, SimConfig, Source, Track, VehicleState};
use sdai_drive::{actuate, pid_step, PidGains, PidState, PolicyDriver};
use sdai_nn::gradcam::grad_cam_for;
use sdai_nn::{PolicyParams, PolicySpec};
use thiserror::Error;
use tungstenite::{Message, WebSocket};

use crate::commands::write_atomic;
use crate::config::ExperimentConfig;
use crate::{CliError, Result};

pub const MODE_TELEOP: u8 = 0;
pub const MODE_AUTONOMOUS: u8 = 1;
pub const RECORD_NONE: u8 = 0;
pub const RECORD_START: u8 = 1;
pub const RECORD_STOP: u8 = 2;
const CONTROL_LEN: usize = 9;
const FRAME_HEADER_LEN: usize = 9;
const STATE_LEN: usize = 20;

#[derive(Debug, Error, PartialEq)]
#[error("protocol violation: {0}")]
pub struct ProtocolViolation(pub String);

#[derive(Debug, Clone, PartialEq)]
pub struct FrameMsg {
    pub seq: u32,
    pub mode: u8,
    pub width: u16,
    pub height: u16,
    pub image: Vec<u8>,
    /// x, y, heading, steer, lateral error
    pub state: [f32; 5],
    pub attention: Option<Vec<u8>>,
}

impl FrameMsg {
    pub fn encode(&self) -> Vec<u8> {
        let mut b = Vec::with_capacity(FRAME_HEADER_LEN + 2 * self.image.len() + STATE_LEN);
        b.extend_from_slice(&self.seq.to_le_bytes());
        b.push(self.mode);
        b.extend_from_slice(&self.width.to_le_bytes());
        b.extend_from_slice(&self.height.to_le_bytes());
        b.extend_from_slice(&self.image);
        for v in self.state {
            b.extend_from_slice(&v.to_le_bytes());
        }
        if let Some(a) = &self.attention {
            b.extend_from_slice(a);
        }
        b
    }

    pub fn decode(b: &[u8]) -> Result<Self, ProtocolViolation> {
        if b.len() < FRAME_HEADER_LEN {
            return Err(ProtocolViolation(format!("FRAME of {} bytes", b.len())));
        }
        let seq = u32::from_le_bytes(b[0..4].try_into().unwrap());
        let mode = b[4];
        let width = u16::from_le_bytes(b[5..7].try_into().unwrap());
        let height = u16::from_le_bytes(b[7..9].try_into().unwrap());
        let n = width as usize * height as usize;
        let attention = match b.len().checked_sub(FRAME_HEADER_LEN + n + STATE_LEN) {
            Some(0) => false,
            Some(rest) if rest == n => true,
            _ => return Err(ProtocolViolation(format!("FRAME of {} bytes for a {width}×{height} image", b.len()))),
        };
        let image = b[FRAME_HEADER_LEN..FRAME_HEADER_LEN + n].to_vec();
        let mut state = [0f32; 5];
        for (k, v) in state.iter_mut().enumerate() {
            let o = FRAME_HEADER_LEN + n + 4 * k;
            *v = f32::from_le_bytes(b[o..o + 4].try_into().unwrap());
        }
        let attention = attention.then(|| b[FRAME_HEADER_LEN + n + STATE_LEN..].to_vec());
        Ok(Self { seq, mode, width, height, image, state, attention })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlMsg {
    pub seq: u32,
    pub steer_delta: f32,
    pub record: u8,
}

impl ControlMsg {
    pub fn encode(&self) -> Vec<u8> {
        let mut b = Vec::with_capacity(CONTROL_LEN);
        b.extend_from_slice(&self.seq.to_le_bytes());
        b.extend_from_slice(&self.steer_delta.to_le_bytes());
        b.push(self.record);
        b
    }

    pub fn decode(b: &[u8]) -> Result<Self, ProtocolViolation> {
        if b.len() != CONTROL_LEN {
            return Err(ProtocolViolation(format!("CONTROL of {} bytes", b.len())));
        }
        let c = Self {
            seq: u32::from_le_bytes(b[0..4].try_into().unwrap()),
            steer_delta: f32::from_le_bytes(b[4..8].try_into().unwrap()),
            record: b[8],
        };
        if !c.steer_delta.is_finite() {
            return Err(ProtocolViolation("non-finite steer_delta".into()));
        }
        if c.record > RECORD_STOP {
            return Err(ProtocolViolation(format!("record flag {}", c.record)));
        }
        Ok(c)
    }
}

#[derive(Debug, Clone)]
pub struct BridgeConfig {
    pub track: Track,
    pub sim: SimConfig,
    pub camera: CameraIntrinsics,
    pub pid: PidGains,
    pub n_frames: u8,
    pub m_steps: u8,
    pub depth_every: usize,
    /// width of the streamed center crop
    pub view_width: usize,
    /// where recorded episodes go
    pub out_dir: PathBuf,
    /// advance one tick per CONTROL message instead of on the wall clock
    pub lockstep: bool,
    pub tick: Duration,
    pub assets: Option<PathBuf>,
    /// drive autonomously with this policy and stream its attention
    pub model: Option<(PolicySpec, PolicyParams)>,
    pub seed: u64,
}

impl BridgeConfig {
    pub fn from_experiment(cfg: &ExperimentConfig, out_dir: PathBuf) -> Self {
        Self {
            track: cfg.track.clone(),
            sim: cfg.sim,
            camera: cfg.camera,
            pid: cfg.pid,
            n_frames: cfg.collect.n_frames,
            m_steps: cfg.collect.m_steps,
            depth_every: cfg.collect.depth_every,
            view_width: cfg.slit.crop_width,
            out_dir,
            lockstep: false,
            tick: Duration::from_secs_f64(cfg.sim.dt),
            assets: None,
            model: None,
            seed: cfg.seed,
        }
    }
}

struct Recorder {
    id: EpisodeId,
    samples: Vec<Sample>,
    targets: Vec<f64>,
}

/// Simulator state that outlives client sessions.
struct World {
    state: VehicleState,
    s: f64,
    lateral: f64,
    pid: PidState,
    target: f64,
    view: Vec<u8>,
    depth: Vec<f32>,
    recorder: Option<Recorder>,
    recordings: u64,
    frame_seq: u32,
}

pub struct Bridge {
    listener: TcpListener,
    cfg: BridgeConfig,
    world: World,
}

impl Bridge {
    pub fn bind(cfg: BridgeConfig, addr: impl ToSocketAddrs) -> Result<Self> {
        cfg.sim.validate()?;
        cfg.camera.validate()?;
        cfg.pid.validate()?;
        if cfg.view_width == 0 || cfg.view_width > cfg.camera.width_full || cfg.depth_every == 0 || cfg.m_steps == 0 {
            return Err(CliError::Usage("invalid bridge view width, depth interval or horizon".into()));
        }
        if let Some((spec, params)) = &cfg.model {
            PolicyDriver::new(params, spec, &cfg.camera, &cfg.sim)?;
        }
        fs::create_dir_all(&cfg.out_dir)?;
        let listener = TcpListener::bind(addr).map_err(|e| CliError::Data(format!("cannot bind bridge: {e}")))?;
        let mut world = World {
            state: VehicleState::on_track(&cfg.track, 0.0, 0.0, 0.0, cfg.sim.speed),
            s: 0.0,
            lateral: 0.0,
            pid: PidState::default(),
            target: 0.0,
            view: Vec::new(),
            depth: Vec::new(),
            recorder: None,
            recordings: 0,
            frame_seq: 0,
        };
        world.render(&cfg);
        Ok(Self { listener, cfg, world })
    }

    pub fn local_addr(&self) -> Result<SocketAddr> {
        Ok(self.listener.local_addr()?)
    }

    /// Serves one client at a time, forever.
    pub fn run(mut self) -> Result<()> {
        loop {
            let (stream, peer) = self.listener.accept()?;
            if let Err(e) = self.handle(stream) {
                log::warn!("session with {peer} ended: {e}");
            }
        }
    }

    pub fn spawn(self) -> Result<(SocketAddr, thread::JoinHandle<Result<()>>)> {
        let addr = self.local_addr()?;
        Ok((addr, thread::spawn(move || self.run())))
    }

    fn handle(&mut self, mut stream: TcpStream) -> Result<()> {
        let head = peek_head(&stream)?;
        if !head.to_ascii_lowercase().contains("upgrade: websocket") {
            return serve_static(&mut stream, &head, self.cfg.assets.as_deref());
        }
        stream.set_nodelay(true)?;
        let ws = tungstenite::accept(stream).map_err(|e| CliError::Data(format!("handshake failed: {e}")))?;
        let Self { cfg, world, .. } = self;
        let model = cfg.model.clone();
        let mut policy = match &model {
            Some((spec, params)) => Some(PolicyDriver::new(params, spec, &cfg.camera, &cfg.sim)?),
            None => None,
        };
        let result = Session { cfg, world, ws, last_control: None, policy: policy.as_mut(), ticks: 0 }.run();
        world.finish_recording(cfg)?;
        result
    }
}

fn peek_head(stream: &TcpStream) -> Result<String> {
    let deadline = Instant::now() + Duration::from_secs(5);
    let mut buf = [0u8; 8192];
    loop {
        let n = stream.peek(&mut buf)?;
        let text = String::from_utf8_lossy(&buf[..n]).into_owned();
        if text.contains("\r\n\r\n") || n == buf.len() {
            return Ok(text);
        }
        if n == 0 || Instant::now() > deadline {
            return Err(CliError::Data("incomplete HTTP request".into()));
        }
        thread::sleep(Duration::from_millis(5));
    }
}

const BUILTIN_INDEX: &str = "<!doctype html><title>sdai teleop bridge</title>\
<p>Bridge running. Connect a WebSocket client to this address.</p>\n";

fn content_type(path: &Path) -> &'static str {
    match path.extension().and_then(|e| e.to_str()) {
        Some("html") => "text/html; charset=utf-8",
        Some("js") | Some("mjs") => "text/javascript",
        Some("css") => "text/css",
        Some("json") => "application/json",
        Some("svg") => "image/svg+xml",
        Some("png") => "image/png",
        Some("wasm") => "application/wasm",
        _ => "application/octet-stream",
    }
}

/// Answers a plain HTTP GET from `assets` (or a built-in page at `/`).
fn serve_static(stream: &mut TcpStream, head: &str, assets: Option<&Path>) -> Result<()> {
    let end = head.find("\r\n\r\n").map(|i| i + 4).unwrap_or(head.len());
    let mut consumed = vec![0u8; end];
    stream.read_exact(&mut consumed)?;
    let mut parts = head.lines().next().unwrap_or("").split_whitespace();
    let (method, target) = (parts.next().unwrap_or(""), parts.next().unwrap_or("/"));
    let path = target.split('?').next().unwrap_or("/");
    let rel = Path::new(path.trim_start_matches('/'));
    let safe = rel.components().all(|c| matches!(c, Component::Normal(_)));
    let body = match (method, assets) {
        ("GET", _) if !safe => None,
        ("GET", Some(dir)) => {
            let file = if rel.as_os_str().is_empty() { dir.join("index.html") } else { dir.join(rel) };
            fs::read(&file).ok().map(|b| (b, content_type(&file)))
        }
        ("GET", None) if rel.as_os_str().is_empty() => Some((BUILTIN_INDEX.as_bytes().to_vec(), "text/html; charset=utf-8")),
        _ => None,
    };
    let (status, body, ctype) = match body {
        Some((b, t)) => ("200 OK", b, t),
        None => ("404 Not Found", b"not found\n".to_vec(), "text/plain"),
    };
    write!(stream, "HTTP/1.1 {status}\r\nContent-Type: {ctype}\r\nContent-Length: {}\r\nConnection: close\r\n\r\n", body.len())?;
    stream.write_all(&body)?;
    Ok(())
}

impl World {
    fn render(&mut self, cfg: &BridgeConfig) {
        let f = render_frame(&self.state, &cfg.track, &cfg.camera);
        self.view = f.pixels.iter().map(|&v| quantize(v)).collect();
        self.depth = f.depth.iter().map(|&d| d as f32).collect();
        let p = cfg.track.project_near(self.state.position(), self.s, 2.0 * cfg.sim.speed * cfg.sim.dt + 5.0);
        self.s = p.s;
        self.lateral = p.lateral;
    }

    fn reset(&mut self, cfg: &BridgeConfig) {
        self.state = VehicleState::on_track(&cfg.track, 0.0, 0.0, 0.0, cfg.sim.speed);
        self.s = 0.0;
        self.pid = PidState::default();
        self.target = 0.0;
        self.render(cfg);
    }

    fn start_recording(&mut self, cfg: &BridgeConfig) {
        if self.recorder.is_some() {
            return;
        }
        let id = loop {
            let id = EpisodeId::random(&mut seeded(derive_seed(cfg.seed, &self.recordings.to_le_bytes())));
            self.recordings += 1;
            if !episode_path(cfg, &id).exists() {
                break id;
            }
        };
        self.recorder = Some(Recorder { id, samples: Vec::new(), targets: Vec::new() });
    }

    /// Writes the current recording, if it has any samples, and stops it.
    fn finish_recording(&mut self, cfg: &BridgeConfig) -> Result<Option<PathBuf>> {
        let Some(rec) = self.recorder.take() else { return Ok(None) };
        if rec.samples.is_empty() {
            return Ok(None);
        }
        let m = cfg.m_steps as usize;
        let last = rec.targets.len() - 1;
        let mut samples = rec.samples;
        for (t, s) in samples.iter_mut().enumerate() {
            s.steer = (t..t + m).map(|k| rec.targets[k.min(last)]).collect();
        }
        let ep = Episode {
            id: rec.id,
            scenario_tag: "teleop".into(),
            dt: cfg.sim.dt,
            camera: cfg.camera,
            n_frames: cfg.n_frames,
            m_steps: cfg.m_steps,
            source: Source::Teleop,
            samples,
        };
        let path = episode_path(cfg, &ep.id);
        write_atomic(&path, &ep.encode()?)?;
        log::info!("recorded {} samples to {}", ep.samples.len(), path.display());
        Ok(Some(path))
    }

    fn apply(&mut self, cfg: &BridgeConfig, c: &ControlMsg) -> Result<()> {
        match c.record {
            RECORD_START => self.start_recording(cfg),
            RECORD_STOP => {
                self.finish_recording(cfg)?;
            }
            _ => {}
        }
        self.target = (self.target + c.steer_delta as f64).clamp(-cfg.sim.steer_max, cfg.sim.steer_max);
        Ok(())
    }

    /// One simulator tick toward the current target. A finished or departed
    /// run ends the recording and restarts at the track start.
    fn tick(&mut self, cfg: &BridgeConfig) -> Result<()> {
        if let Some(rec) = &mut self.recorder {
            let t = rec.samples.len();
            rec.samples.push(Sample {
                timestamp: t as f64 * cfg.sim.dt,
                state: self.state,
                pixels: self.view.clone(),
                depth: (t % cfg.depth_every == 0).then(|| self.depth.clone()),
                steer: Vec::new(),
            });
            rec.targets.push(self.target);
        }
        let (out, pid) = pid_step(&cfg.pid, &self.pid, self.target, self.state.steer, cfg.sim.dt);
        self.pid = pid;
        self.state = actuate(&self.state, out.rate, &cfg.sim);
        self.render(cfg);
        let done = !cfg.track.is_closed() && self.s >= cfg.track.total_length() - 1e-9;
        if done || self.lateral.abs() > cfg.track.lane_half_width() {
            self.finish_recording(cfg)?;
            self.reset(cfg);
        }
        Ok(())
    }

    fn crop(&self, cfg: &BridgeConfig) -> Vec<u8> {
        let start = (cfg.camera.width_full - cfg.view_width) / 2;
        crop_columns(&self.view, cfg.camera.width_full, cfg.camera.height, start, cfg.view_width)
    }
}

fn episode_path(cfg: &BridgeConfig, id: &EpisodeId) -> PathBuf {
    cfg.out_dir.join(format!("{}.sdep", id.to_hex()))
}

enum Incoming {
    Control(ControlMsg),
    Idle,
    Closed,
}

struct Session<'a, 'p> {
    cfg: &'a BridgeConfig,
    world: &'a mut World,
    ws: WebSocket<TcpStream>,
    last_control: Option<u32>,
    policy: Option<&'a mut PolicyDriver<'p>>,
    ticks: usize,
}

impl Session<'_, '_> {
    fn run(mut self) -> Result<()> {
        let r = self.drive();
        if let Err(CliError::Data(msg)) = &r {
            if msg.starts_with("protocol violation") {
                let _ = self.ws.close(None);
                let _ = self.ws.flush();
            }
        }
        r
    }

    fn drive(&mut self) -> Result<()> {
        self.decide()?;
        self.send_frame()?;
        let mut next = Instant::now() + self.cfg.tick;
        loop {
            if self.cfg.lockstep {
                match self.receive(None)? {
                    Incoming::Control(c) => self.control(&c)?,
                    Incoming::Idle => continue,
                    Incoming::Closed => return Ok(()),
                }
            } else {
                loop {
                    let now = Instant::now();
                    if now >= next {
                        break;
                    }
                    match self.receive(Some(next - now))? {
                        Incoming::Control(c) => self.control(&c)?,
                        Incoming::Idle => {}
                        Incoming::Closed => return Ok(()),
                    }
                }
                next = (next + self.cfg.tick).max(Instant::now());
            }
            self.world.tick(self.cfg)?;
            self.ticks += 1;
            self.decide()?;
            self.send_frame()?;
        }
    }

    fn control(&mut self, c: &ControlMsg) -> Result<()> {
        if self.last_control.is_some_and(|s| c.seq <= s) {
            return Err(violation(format!("CONTROL sequence {} not increasing", c.seq)));
        }
        self.last_control = Some(c.seq);
        if self.policy.is_none() {
            self.world.apply(self.cfg, c)?;
        }
        Ok(())
    }

    /// In autonomous mode, lets the policy set the target from the current view.
    fn decide(&mut self) -> Result<()> {
        if let Some(p) = self.policy.as_mut() {
            self.world.target = p.observe(self.ticks, &self.world.view)?;
        }
        Ok(())
    }

    fn receive(&mut self, wait: Option<Duration>) -> Result<Incoming> {
        self.ws.get_ref().set_read_timeout(wait.map(|d| d.max(Duration::from_millis(1))))?;
        match self.ws.read() {
            Ok(Message::Binary(b)) => Ok(Incoming::Control(ControlMsg::decode(&b).map_err(|e| violation(e.0))?)),
            Ok(Message::Close(_)) => Ok(Incoming::Closed),
            Ok(Message::Ping(_)) | Ok(Message::Pong(_)) | Ok(Message::Frame(_)) => Ok(Incoming::Idle),
            Ok(Message::Text(_)) => Err(violation("text message".into())),
            Err(tungstenite::Error::Io(e))
                if matches!(e.kind(), std::io::ErrorKind::WouldBlock | std::io::ErrorKind::TimedOut) =>
            {
                Ok(Incoming::Idle)
            }
            Err(tungstenite::Error::ConnectionClosed) | Err(tungstenite::Error::AlreadyClosed) => Ok(Incoming::Closed),
            Err(e) => Err(CliError::Data(format!("session: {e}"))),
        }
    }

    fn send_frame(&mut self) -> Result<()> {
        let cfg = self.cfg;
        let w = &*self.world;
        let attention = match self.policy.as_ref() {
            Some(p) => {
                let spec = &cfg.model.as_ref().expect("policy implies model").0;
                let params = &cfg.model.as_ref().expect("policy implies model").1;
                let mut d = vec![0.0; spec.m_steps];
                d[0] = 1.0;
                let map = grad_cam_for(params, spec, p.input(), &d)?;
                Some(map.values.iter().map(|&v| quantize(v)).collect())
            }
            None => None,
        };
        let (image, width) = match self.policy.as_ref() {
            Some(p) => (p.latest_crop().unwrap_or_default().to_vec(), cfg.model.as_ref().unwrap().0.width),
            None => (w.crop(cfg), cfg.view_width),
        };
        let s = &w.state;
        let msg = FrameMsg {
            seq: w.frame_seq,
            mode: if self.policy.is_some() { MODE_AUTONOMOUS } else { MODE_TELEOP },
            width: width as u16,
            height: cfg.camera.height as u16,
            image,
            state: [s.x as f32, s.y as f32, s.heading as f32, s.steer as f32, w.lateral as f32],
            attention,
        };
        self.world.frame_seq = self.world.frame_seq.wrapping_add(1);
        self.ws
            .send(Message::Binary(msg.encode().into()))
            .map_err(|e| CliError::Data(format!("session: {e}")))
    }
}

fn violation(msg: String) -> CliError {
    CliError::Data(ProtocolViolation(msg).to_string())
}
