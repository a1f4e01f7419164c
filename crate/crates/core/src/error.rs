use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, PartialEq)]
pub enum Error {
    #[error("invalid track parameter: {0}")]
    InvalidTrack(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("no ground intersection for row {row}")]
    NoGroundIntersection { row: usize },
    #[error("slit offset {offset} outside [-{max}, {max}]")]
    OffsetOutOfRange { offset: i32, max: u32 },
    #[error("episode not augmentable: {0}")]
    NotAugmentable(String),
    #[error("config line {line}: {message}")]
    Parse { line: usize, message: String },
}
