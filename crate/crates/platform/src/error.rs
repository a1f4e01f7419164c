use thiserror::Error;

pub type Result<T, E = PlatformError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum PlatformError {
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("episode rejected: {0}")]
    Episode(#[from] sdai_core::EpisodeError),
    #[error("digest mismatch: payload does not match the declared digest")]
    DigestMismatch,
    #[error("not found: {0}")]
    NotFound(String),
    #[error("invalid request: {0}")]
    Invalid(String),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("server error: {0}")]
    Remote(String),
    #[error("storage is corrupt: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Core(#[from] sdai_core::Error),
    #[error(transparent)]
    Nn(#[from] sdai_nn::NnError),
}
