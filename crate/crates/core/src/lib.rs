//! Simulation side of the imitation-driving pipeline.
//!
//! * [`track`] and [`sim`]: parametric tracks, the kinematic bicycle model and
//!   the scripted pure-pursuit expert.
//! * [`camera`]: the synthetic pinhole front camera with analytic ground depth.
//! * [`episode`]: recorded demonstrations and their canonical binary encoding.
//! * [`slit`]: crop-window pseudo-displacement augmentation with label correction.
//! * [`kv`]: the plain-text `key=value` config format shared by the tools.

pub mod camera;
pub mod episode;
pub mod kv;
pub mod rng;
pub mod sim;
pub mod slit;
pub mod track;

mod error;

pub use camera::{CameraFrame, CameraIntrinsics, SceneStyle};
pub use episode::{Episode, EpisodeError, EpisodeId, Sample, Source};
pub use error::{Error, Result};
pub use sim::{SimConfig, VehicleState};
pub use slit::SlitConfig;
pub use track::{Track, TrackKind};
