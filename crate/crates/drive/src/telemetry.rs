//! Per-tick control traces and their CSV form.

use std::fmt::Write as _;

use crate::pid::{pid_step, PidGains, PidState};
use crate::{DriveError, Result};

pub const CSV_HEADER: &str = "step,time_s,target_rad,actual_rad,pid_p,pid_i,pid_d,lateral_error_m";

/// One control tick. `actual` is the steering angle the controller measured
/// at the start of the tick; the PID terms are those computed from it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TelemetryRow {
    pub step: usize,
    pub time_s: f64,
    pub target: f64,
    pub actual: f64,
    pub pid_p: f64,
    pub pid_i: f64,
    pub pid_d: f64,
    pub lateral_error: f64,
}

/// Floats are written in shortest round-trip form, so parsing the CSV gives
/// back the exact values.
pub fn to_csv(rows: &[TelemetryRow]) -> String {
    let mut s = String::with_capacity(64 * (rows.len() + 1));
    s.push_str(CSV_HEADER);
    s.push('\n');
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{}",
            r.step, r.time_s, r.target, r.actual, r.pid_p, r.pid_i, r.pid_d, r.lateral_error
        );
    }
    s
}

pub fn parse_csv(text: &str) -> Result<Vec<TelemetryRow>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == CSV_HEADER => {}
        _ => {
            return Err(DriveError::Telemetry { line: 1, message: "missing header".into() });
        }
    }
    let mut rows = Vec::new();
    for (idx, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |message: String| DriveError::Telemetry { line: idx + 1, message };
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 8 {
            return Err(bad(format!("expected 8 fields, got {}", fields.len())));
        }
        let step = fields[0].parse().map_err(|e| bad(format!("step: {e}")))?;
        let mut v = [0.0; 7];
        for (slot, f) in v.iter_mut().zip(&fields[1..]) {
            *slot = f.parse().map_err(|e| bad(format!("{f:?}: {e}")))?;
        }
        rows.push(TelemetryRow {
            step,
            time_s: v[0],
            target: v[1],
            actual: v[2],
            pid_p: v[3],
            pid_i: v[4],
            pid_d: v[5],
            lateral_error: v[6],
        });
    }
    Ok(rows)
}

/// Feeds the recorded targets and measurements back through [`pid_step`]
/// from a fresh state; true when every term matches bit for bit.
pub fn replays_exactly(rows: &[TelemetryRow], gains: &PidGains, dt: f64) -> bool {
    let mut st = PidState::default();
    rows.iter().all(|r| {
        let (out, next) = pid_step(gains, &st, r.target, r.actual, dt);
        st = next;
        out.p.to_bits() == r.pid_p.to_bits() && out.i.to_bits() == r.pid_i.to_bits() && out.d.to_bits() == r.pid_d.to_bits()
    })
}

/// RMS of `target − actual` over ticks at or after `after_s` seconds; `None`
/// when no tick qualifies.
pub fn tracking_rms(rows: &[TelemetryRow], after_s: f64) -> Option<f64> {
    let errs: Vec<f64> = rows.iter().filter(|r| r.time_s >= after_s).map(|r| r.target - r.actual).collect();
    (!errs.is_empty()).then(|| (errs.iter().map(|e| e * e).sum::<f64>() / errs.len() as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trips_exactly() {
        let rows = vec![
            TelemetryRow { step: 0, time_s: 0.0, target: 0.1, actual: 0.0, pid_p: 0.4, pid_i: 0.005, pid_d: 0.1, lateral_error: -0.0 },
            TelemetryRow { step: 1, time_s: 0.1, target: 1.0 / 3.0, actual: 1e-300, pid_p: -2.5e-7, pid_i: 0.0, pid_d: f64::MIN_POSITIVE, lateral_error: 0.3 },
        ];
        let text = to_csv(&rows);
        assert!(text.starts_with("step,time_s,target_rad,"));
        let back = parse_csv(&text).unwrap();
        assert_eq!(back.len(), 2);
        for (a, b) in rows.iter().zip(&back) {
            assert_eq!(format!("{a:?}"), format!("{b:?}"));
            assert_eq!(a.target.to_bits(), b.target.to_bits());
        }
    }

    #[test]
    fn malformed_csv_is_rejected() {
        assert!(parse_csv("").is_err());
        assert!(parse_csv(&format!("{CSV_HEADER}\n1,2,3\n")).is_err());
        assert!(parse_csv(&format!("{CSV_HEADER}\n0,0,x,0,0,0,0,0\n")).is_err());
    }

    #[test]
    fn rms_ignores_the_transient() {
        let row = |t: f64, e: f64| TelemetryRow { step: 0, time_s: t, target: e, actual: 0.0, pid_p: 0.0, pid_i: 0.0, pid_d: 0.0, lateral_error: 0.0 };
        let rows = [row(0.0, 1.0), row(1.0, 0.03), row(1.1, -0.04)];
        assert!((tracking_rms(&rows, 1.0).unwrap() - (0.0025f64 / 2.0).sqrt()).abs() < 1e-15);
        assert_eq!(tracking_rms(&rows, 5.0), None);
    }
}
