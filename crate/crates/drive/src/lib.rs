//! Steering actuation and closed-loop driving: the PID loop that tracks a
//! target angle, the runner that lets a policy (or the scripted expert)
//! drive the simulator, and expert demonstration recording.

pub mod closed_loop;
pub mod collect;
pub mod pid;
pub mod telemetry;

mod error;

pub use closed_loop::{closed_loop_run, Driver, PolicyDriver, EpisodeMetrics, RunOptions, RunResult};
pub use collect::{collect_expert_episode, CollectConfig};
pub use error::{DriveError, Result};
pub use pid::{actuate, pid_step, PidGains, PidOutput, PidState};
pub use telemetry::TelemetryRow;
