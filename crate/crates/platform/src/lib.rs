//! The data side of the pipeline: a content-addressed store for recorded
//! episodes and model files, a small TCP service for uploading runs and
//! distributing models, and the builder that turns stored runs into a
//! training dataset.

pub mod client;
pub mod dataset;
pub mod protocol;
pub mod server;
pub mod storage;

mod error;

pub use client::Client;
pub use dataset::{augment_episodes, build_dataset, DatasetFilter};
pub use error::{PlatformError, Result};
pub use server::Server;
pub use storage::{ModelManifest, RunManifest, Storage, UploadOutcome};
