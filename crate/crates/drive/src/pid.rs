//! PID tracking of a target steering angle. The output is a steering rate.

use sdai_core::kv::KvMap;
use sdai_core::sim::{step, SimConfig, VehicleState};

use crate::{DriveError, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PidGains {
    pub kp: f64,
    pub ki: f64,
    pub kd: f64,
    /// bound on the error integral, radian-seconds
    pub integral_limit: f64,
    /// bound on the rate command, radians per second
    pub output_limit: f64,
}

impl Default for PidGains {
    fn default() -> Self {
        Self {
            kp: 8.0,
            ki: 0.5,
            kd: 0.1,
            integral_limit: 0.5,
            output_limit: SimConfig::default().steer_rate_max,
        }
    }
}

impl PidGains {
    /// Default gains with the output limit matched to the actuator.
    pub fn for_sim(sim: &SimConfig) -> Self {
        Self {
            output_limit: sim.steer_rate_max,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("kp", self.kp), ("ki", self.ki), ("kd", self.kd)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(DriveError::Config(format!("{name} must be non-negative, got {v}")));
            }
        }
        for (name, v) in [("integral_limit", self.integral_limit), ("output_limit", self.output_limit)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(DriveError::Config(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }

    /// Reads `pid_kp`, `pid_ki`, `pid_kd`, `pid_integral_limit` and
    /// `pid_output_limit`, falling back to [`PidGains::for_sim`].
    pub fn from_kv(kv: &KvMap, sim: &SimConfig) -> Result<Self> {
        let d = Self::for_sim(sim);
        let get = |key: &str, default: f64| -> Result<f64> { Ok(kv.get_f64(key)?.unwrap_or(default)) };
        let g = Self {
            kp: get("pid_kp", d.kp)?,
            ki: get("pid_ki", d.ki)?,
            kd: get("pid_kd", d.kd)?,
            integral_limit: get("pid_integral_limit", d.integral_limit)?,
            output_limit: get("pid_output_limit", d.output_limit)?,
        };
        g.validate()?;
        Ok(g)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PidState {
    pub integral: f64,
    pub prev_error: f64,
}

/// One controller update: the clamped rate command and its three terms
/// before clamping.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PidOutput {
    pub rate: f64,
    pub p: f64,
    pub i: f64,
    pub d: f64,
}

/// `dt` must be positive.
pub fn pid_step(gains: &PidGains, state: &PidState, target: f64, actual: f64, dt: f64) -> (PidOutput, PidState) {
    let e = target - actual;
    let integral = (state.integral + e * dt).clamp(-gains.integral_limit, gains.integral_limit);
    let p = gains.kp * e;
    let i = gains.ki * integral;
    let d = gains.kd * (e - state.prev_error) / dt;
    let rate = (p + i + d).clamp(-gains.output_limit, gains.output_limit);
    (PidOutput { rate, p, i, d }, PidState { integral, prev_error: e })
}

/// Applies a steering-rate command for one tick: the actuator is driven
/// toward `steer + rate·dt` under its own rate and angle limits.
pub fn actuate(state: &VehicleState, rate: f64, sim: &SimConfig) -> VehicleState {
    step(state, state.steer + rate * sim.dt, sim)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn p_only(kp: f64, limit: f64) -> PidGains {
        PidGains { kp, ki: 0.0, kd: 0.0, integral_limit: 0.5, output_limit: limit }
    }

    #[test]
    fn proportional_and_saturation() {
        let (out, _) = pid_step(&p_only(1.0, 1.0), &PidState::default(), 0.2, 0.0, 0.1);
        assert!((out.rate - 0.2).abs() < 1e-15);
        let (out, _) = pid_step(&p_only(10.0, 1.0), &PidState::default(), 0.5, 0.0, 0.1);
        assert_eq!(out.rate, 1.0);
        assert_eq!(out.p, 5.0);
    }

    /// Independent discrete simulation of the loop: integral, derivative on
    /// error, rate clamp, then the actuator integrating the rate.
    fn oracle_step_response(g: &PidGains, dt: f64, ticks: usize) -> Vec<f64> {
        let (mut a, mut integ, mut prev) = (0.0f64, 0.0f64, 0.0f64);
        let mut out = Vec::new();
        for _ in 0..ticks {
            let e = 0.2 - a;
            integ = (integ + e * dt).max(-g.integral_limit).min(g.integral_limit);
            let u = (g.kp * e + g.ki * integ + g.kd * (e - prev) / dt).max(-g.output_limit).min(g.output_limit);
            prev = e;
            a += u * dt;
            out.push(a);
        }
        out
    }

    #[test]
    fn step_response_settles_without_large_overshoot() {
        let sim = SimConfig::default();
        let g = PidGains::default();
        let oracle = oracle_step_response(&g, sim.dt, 40);
        let mut veh = VehicleState { x: 0.0, y: 0.0, heading: 0.0, speed: sim.speed, steer: 0.0 };
        let mut st = PidState::default();
        let mut trace = Vec::new();
        for _ in 0..40 {
            let (out, next) = pid_step(&g, &st, 0.2, veh.steer, sim.dt);
            st = next;
            veh = actuate(&veh, out.rate, &sim);
            trace.push(veh.steer);
        }
        for (a, b) in trace.iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(trace.iter().all(|&s| s <= 0.2 * 1.2));
        // within 0.01 rad from 2.0 s (tick 20) on
        assert!(trace[19..].iter().all(|s| (s - 0.2).abs() < 0.01), "{trace:?}");
    }

    #[test]
    fn rejects_bad_gains() {
        assert!(PidGains { kp: -1.0, ..PidGains::default() }.validate().is_err());
        assert!(PidGains { output_limit: 0.0, ..PidGains::default() }.validate().is_err());
        let kv = KvMap::parse("pid_kp=1.5\n").unwrap();
        let g = PidGains::from_kv(&kv, &SimConfig::default()).unwrap();
        assert_eq!((g.kp, g.ki), (1.5, 0.5));
    }

    proptest! {
        #[test]
        fn integral_never_exceeds_limit(targets in prop::collection::vec(-3.0f64..3.0, 1..200)) {
            let g = PidGains::default();
            let mut st = PidState::default();
            // actuator stuck at zero: persistent saturation
            for t in targets {
                let (out, next) = pid_step(&g, &st, t, 0.0, 0.1);
                prop_assert!(next.integral.abs() <= g.integral_limit);
                prop_assert!(out.rate.abs() <= g.output_limit);
                st = next;
            }
        }
    }
}
