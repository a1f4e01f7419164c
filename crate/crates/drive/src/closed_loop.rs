//! The autonomy loop: render → crop → frame stack → policy → PID → vehicle.

use sdai_core::camera::{quantize, render_frame};
use sdai_core::sim::{pure_pursuit_from, SimConfig, VehicleState};
use sdai_core::slit::{crop_columns, StackLayout};
use sdai_core::{CameraIntrinsics, Track};
use sdai_nn::{forward, PolicyParams, PolicySpec};

use crate::pid::{actuate, pid_step, PidGains, PidState};
use crate::telemetry::TelemetryRow;
use crate::{DriveError, Result};

/// Who provides the target steering angle each tick.
#[derive(Clone, Copy)]
pub enum Driver<'a> {
    Policy { params: &'a PolicyParams, spec: &'a PolicySpec },
    /// pure pursuit on the true pose; the camera is not used
    Expert { lookahead: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunOptions {
    pub max_steps: usize,
    /// initial offset from the centerline, meters, positive left
    pub start_lateral: f64,
    /// initial heading relative to the track direction, radians
    pub start_heading: f64,
}

impl RunOptions {
    /// Starts centered and aligned; allows twice the ticks needed to cover
    /// the track at the configured speed.
    pub fn for_track(track: &Track, sim: &SimConfig) -> Self {
        Self {
            max_steps: (2.0 * track.total_length() / (sim.speed * sim.dt)).ceil() as usize + 10,
            start_lateral: 0.0,
            start_heading: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeMetrics {
    pub mean_abs_lateral_error: f64,
    pub max_abs_lateral_error: f64,
    /// fraction of the track length covered, in [0, 1]
    pub completion: f64,
    pub departed: bool,
    pub steps: usize,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub metrics: EpisodeMetrics,
    pub telemetry: Vec<TelemetryRow>,
    pub final_state: VehicleState,
}

/// Arc-length progress along the track, followed locally so a closed track
/// wraps instead of jumping.
pub(crate) struct Progress {
    s: f64,
    travelled: f64,
}

impl Progress {
    pub(crate) fn new(track: &Track, state: &VehicleState) -> Self {
        Self { s: track.project(state.position()).s, travelled: 0.0 }
    }

    /// Updates progress and returns `(nearest arc-length, lateral error)`.
    pub(crate) fn update(&mut self, track: &Track, state: &VehicleState, window: f64) -> (f64, f64) {
        let p = track.project_near(state.position(), self.s, window);
        let mut ds = p.s - self.s;
        if track.is_closed() {
            let l = track.total_length();
            ds -= l * (ds / l).round();
        }
        self.travelled += ds;
        self.s = p.s;
        (p.s, p.lateral)
    }

    /// Fraction of the track covered: arc-length reached on open tracks,
    /// distance travelled on closed ones.
    pub(crate) fn completion(&self, track: &Track) -> f64 {
        let covered = if track.is_closed() { self.travelled } else { self.s };
        (covered.max(0.0) / track.total_length()).min(1.0)
    }

    pub(crate) fn finished(&self, track: &Track) -> bool {
        self.completion(track) >= 1.0 - 1e-9
    }
}

/// Per-tick policy evaluation on the centered crop of a full-width view,
/// keeping the frame history needed for the stack.
pub struct PolicyDriver<'a> {
    params: &'a PolicyParams,
    spec: &'a PolicySpec,
    window_start: usize,
    frame_stride: usize,
    history: Vec<Vec<u8>>,
    input: Vec<f64>,
}

impl<'a> PolicyDriver<'a> {
    pub fn new(params: &'a PolicyParams, spec: &'a PolicySpec, cam: &CameraIntrinsics, sim: &SimConfig) -> Result<Self> {
        spec.validate()?;
        if spec.width > cam.width_full || spec.height != cam.height {
            return Err(DriveError::ModelMismatch(format!(
                "policy input {}×{} vs camera {}×{}",
                spec.height, spec.width, cam.height, cam.width_full
            )));
        }
        if params.tensors().iter().any(|t| !t.all_finite()) {
            return Err(DriveError::NonFiniteParams);
        }
        Ok(Self {
            params,
            spec,
            window_start: (cam.width_full - spec.width) / 2,
            frame_stride: StackLayout::for_dt(sim.dt).frame_stride,
            history: Vec::new(),
            input: Vec::new(),
        })
    }

    fn target(&mut self, step: usize, state: &VehicleState, track: &Track, cam: &CameraIntrinsics) -> Result<f64> {
        let frame = render_frame(state, track, cam);
        let full: Vec<u8> = frame.pixels.iter().map(|&v| quantize(v)).collect();
        self.observe(step, &full)
    }

    /// Pushes a full-width quantized frame and returns the first predicted
    /// steering step.
    pub fn observe(&mut self, step: usize, full: &[u8]) -> Result<f64> {
        let width_full = full.len() / self.spec.height;
        let keep = (self.spec.n_frames - 1) * self.frame_stride + 1;
        if self.history.len() >= 2 * keep {
            self.history.drain(..self.history.len() - keep + 1);
        }
        self.history.push(crop_columns(full, width_full, self.spec.height, self.window_start, self.spec.width));
        let now = self.history.len() - 1;
        self.input.clear();
        for k in 0..self.spec.n_frames {
            let f = &self.history[now.saturating_sub(k * self.frame_stride)];
            self.input.extend(f.iter().map(|&v| v as f64 / 255.0));
        }
        let out = forward(self.params, self.spec, &self.input)?;
        let target = out.steer[0];
        if !target.is_finite() {
            return Err(DriveError::NonFiniteOutput { step });
        }
        Ok(target)
    }

    /// The scaled frame stack fed to the last [`observe`](Self::observe) call.
    pub fn input(&self) -> &[f64] {
        &self.input
    }

    /// The newest cropped frame.
    pub fn latest_crop(&self) -> Option<&[u8]> {
        self.history.last().map(Vec::as_slice)
    }
}

/// Drives `track` until its end, a lane departure or `max_steps`. Each tick
/// takes the first predicted step as the target angle and actuates it
/// through the PID loop.
pub fn closed_loop_run(
    driver: Driver<'_>,
    track: &Track,
    sim: &SimConfig,
    cam: &CameraIntrinsics,
    gains: &PidGains,
    opts: &RunOptions,
) -> Result<RunResult> {
    sim.validate()?;
    cam.validate()?;
    gains.validate()?;
    let mut policy = match driver {
        Driver::Policy { params, spec } => Some(PolicyDriver::new(params, spec, cam, sim)?),
        Driver::Expert { lookahead } if lookahead > 0.0 => None,
        Driver::Expert { lookahead } => {
            return Err(DriveError::Config(format!("lookahead must be positive, got {lookahead}")));
        }
    };

    let mut state = VehicleState::on_track(track, 0.0, opts.start_lateral, opts.start_heading, sim.speed);
    let mut progress = Progress::new(track, &state);
    let window = 2.0 * sim.speed * sim.dt + 5.0;
    let mut pid = PidState::default();
    let mut telemetry = Vec::new();
    let mut lats = Vec::new();
    let mut departed = false;

    for step in 0.. {
        let (s, lat) = progress.update(track, &state, window);
        lats.push(lat.abs());
        if lat.abs() > track.lane_half_width() {
            departed = true;
            break;
        }
        if progress.finished(track) || step >= opts.max_steps {
            break;
        }
        let target = match (&mut policy, driver) {
            (Some(p), _) => p.target(step, &state, track, cam)?,
            (None, Driver::Expert { lookahead }) => pure_pursuit_from(&state, track, s, lookahead, sim),
            (None, Driver::Policy { .. }) => unreachable!(),
        };
        let (out, next) = pid_step(gains, &pid, target, state.steer, sim.dt);
        pid = next;
        telemetry.push(TelemetryRow {
            step,
            time_s: step as f64 * sim.dt,
            target,
            actual: state.steer,
            pid_p: out.p,
            pid_i: out.i,
            pid_d: out.d,
            lateral_error: lat,
        });
        state = actuate(&state, out.rate, sim);
    }

    let metrics = EpisodeMetrics {
        mean_abs_lateral_error: lats.iter().sum::<f64>() / lats.len() as f64,
        max_abs_lateral_error: lats.iter().cloned().fold(0.0, f64::max),
        completion: progress.completion(track),
        departed,
        steps: telemetry.len(),
    };
    Ok(RunResult { metrics, telemetry, final_state: state })
}
