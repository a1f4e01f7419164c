//! From-scratch f64 neural engine for the steering policy: conv kernels,
//! the residual policy network with reverse-mode gradients, training,
//! Grad-CAM, depth-head scoring, model files and training datasets.

pub mod conv;
pub mod dataset;
pub mod depth;
pub mod gradcam;
pub mod gradcheck;
pub mod loss;
pub mod model;
pub mod policy;
pub mod tensor;
pub mod train;

mod bytes;
mod error;

pub use dataset::{Dataset, DatasetEntry};
pub use error::{NnError, Result};
pub use gradcam::{grad_cam, AttentionMap, CamTarget};
pub use loss::{loss, LossWeights};
pub use policy::{backward, forward, BlockSpec, Cache, Forward, PolicyParams, PolicySpec};
pub use tensor::Tensor;
pub use train::{train, Optimizer, TrainConfig, TrainOutcome};
