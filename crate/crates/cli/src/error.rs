use sdai_drive::DriveError;
use sdai_nn::NnError;
use sdai_platform::PlatformError;
use thiserror::Error;

/// Command failure, classified by process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;

impl CliError {
    /// 1 usage, 2 data error, 3 numerical failure.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

impl From<sdai_core::Error> for CliError {
    fn from(e: sdai_core::Error) -> Self {
        match e {
            sdai_core::Error::NotAugmentable(_) | sdai_core::Error::NoGroundIntersection { .. } => {
                CliError::Data(e.to_string())
            }
            _ => CliError::Usage(e.to_string()),
        }
    }
}

impl From<sdai_core::EpisodeError> for CliError {
    fn from(e: sdai_core::EpisodeError) -> Self {
        CliError::Data(format!("episode: {e}"))
    }
}

impl From<NnError> for CliError {
    fn from(e: NnError) -> Self {
        match e {
            NnError::NonFinite { .. } => CliError::Numerical(e.to_string()),
            NnError::Config(_) => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<DriveError> for CliError {
    fn from(e: DriveError) -> Self {
        match e {
            DriveError::Core(e) => e.into(),
            DriveError::Nn(e) => e.into(),
            DriveError::NonFiniteParams | DriveError::NonFiniteOutput { .. } => CliError::Numerical(e.to_string()),
            DriveError::Config(_) => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<PlatformError> for CliError {
    fn from(e: PlatformError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}
