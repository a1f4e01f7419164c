use thiserror::Error;

pub type Result<T, E = DriveError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum DriveError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] sdai_core::Error),
    #[error(transparent)]
    Nn(#[from] sdai_nn::NnError),
    #[error("model does not fit the camera: {0}")]
    ModelMismatch(String),
    #[error("model parameters contain non-finite values")]
    NonFiniteParams,
    #[error("policy produced a non-finite steering target at step {step}")]
    NonFiniteOutput { step: usize },
    #[error("telemetry line {line}: {message}")]
    Telemetry { line: usize, message: String },
}
