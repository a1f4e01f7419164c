//! Kinematic bicycle model at constant speed and the pure-pursuit expert.
//!
//! Sign convention: positive steering turns left (counterclockwise) and a
//! positive lateral error means the vehicle is left of the centerline.

use std::f64::consts::PI;

use crate::kv::KvMap;
use crate::track::{Point2, Track};
use crate::{Error, Result};

/// Lookahead used by the scripted expert unless configured otherwise.
pub const DEFAULT_LOOKAHEAD: f64 = 2.5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VehicleState {
    pub x: f64,
    pub y: f64,
    /// radians in (-π, π]
    pub heading: f64,
    pub speed: f64,
    /// actual road-wheel steering angle
    pub steer: f64,
}

impl VehicleState {
    pub fn position(&self) -> Point2 {
        Point2::new(self.x, self.y)
    }

    /// Pose on the centerline at arc-length `s`, shifted `lateral` meters to
    /// the left and rotated by `heading_offset`, with zero steering.
    pub fn on_track(track: &Track, s: f64, lateral: f64, heading_offset: f64, speed: f64) -> Self {
        let h = track.heading_at(s);
        let p = track.point_at(s) + Point2::new(-h.sin(), h.cos()) * lateral;
        Self {
            x: p.x,
            y: p.y,
            heading: normalize_angle(h + heading_offset),
            speed,
            steer: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimConfig {
    pub wheelbase: f64,
    pub dt: f64,
    pub speed: f64,
    pub steer_max: f64,
    pub steer_rate_max: f64,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            wheelbase: 2.9,
            dt: 0.1,
            speed: 5.0,
            steer_max: 0.5,
            steer_rate_max: 1.0,
            seed: 0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let pos = [
            ("wheelbase", self.wheelbase),
            ("dt", self.dt),
            ("speed", self.speed),
            ("steer_max", self.steer_max),
            ("steer_rate_max", self.steer_rate_max),
        ];
        for (name, v) in pos {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidConfig(format!("{name} must be positive, got {v}")));
            }
        }
        if self.dt > 0.5 {
            return Err(Error::InvalidConfig(format!("dt must be in (0, 0.5], got {}", self.dt)));
        }
        Ok(())
    }

    pub fn from_kv(kv: &KvMap) -> Result<Self> {
        let d = Self::default();
        let cfg = Self {
            wheelbase: kv.get_f64("wheelbase")?.unwrap_or(d.wheelbase),
            dt: kv.get_f64("dt")?.unwrap_or(d.dt),
            speed: kv.get_f64("speed")?.unwrap_or(d.speed),
            steer_max: kv.get_f64("steer_max")?.unwrap_or(d.steer_max),
            steer_rate_max: kv.get_f64("steer_rate_max")?.unwrap_or(d.steer_rate_max),
            seed: kv.get("sim_seed")?.unwrap_or(d.seed),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn start_state(&self, track: &Track, lateral: f64) -> VehicleState {
        VehicleState::on_track(track, 0.0, lateral, 0.0, self.speed)
    }
}

/// Wraps an angle into (-π, π].
pub fn normalize_angle(a: f64) -> f64 {
    let w = a.rem_euclid(2.0 * PI);
    if w > PI {
        w - 2.0 * PI
    } else {
        w
    }
}

/// Advances the vehicle by one `dt`. The commanded angle is clamped to
/// ±steer_max and approached at no more than steer_rate_max; the pose is
/// integrated with explicit Euler using the updated steering angle.
pub fn step(state: &VehicleState, steer_command: f64, cfg: &SimConfig) -> VehicleState {
    let target = steer_command.clamp(-cfg.steer_max, cfg.steer_max);
    let max_delta = cfg.steer_rate_max * cfg.dt;
    let steer = (state.steer + (target - state.steer).clamp(-max_delta, max_delta))
        .clamp(-cfg.steer_max, cfg.steer_max);
    let v = cfg.speed;
    let (sin_h, cos_h) = state.heading.sin_cos();
    VehicleState {
        x: state.x + v * cos_h * cfg.dt,
        y: state.y + v * sin_h * cfg.dt,
        heading: normalize_angle(state.heading + v / cfg.wheelbase * steer.tan() * cfg.dt),
        speed: v,
        steer,
    }
}

/// Signed perpendicular distance to the nearest centerline point; positive
/// when the vehicle is left of the track direction.
pub fn lateral_error(state: &VehicleState, track: &Track) -> f64 {
    track.project(state.position()).lateral
}

/// Pure-pursuit steering toward the centerline point `lookahead` meters of
/// arc-length past the nearest point.
pub fn pure_pursuit_steer(state: &VehicleState, track: &Track, lookahead: f64, cfg: &SimConfig) -> f64 {
    let s = track.project(state.position()).s;
    pure_pursuit_from(state, track, s, lookahead, cfg)
}

/// Same as [`pure_pursuit_steer`] with a precomputed nearest arc-length.
pub fn pure_pursuit_from(state: &VehicleState, track: &Track, s_nearest: f64, lookahead: f64, cfg: &SimConfig) -> f64 {
    let target = track.point_at(s_nearest + lookahead);
    let bearing = (target.y - state.y).atan2(target.x - state.x);
    let alpha = normalize_angle(bearing - state.heading);
    let delta = (2.0 * cfg.wheelbase * alpha.sin() / lookahead).atan();
    delta.clamp(-cfg.steer_max, cfg.steer_max)
}
