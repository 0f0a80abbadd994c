use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("event {index} at ({x}, {y}) lies outside the {width}x{height} sensor")]
    OutOfBounds {
        index: usize,
        x: u32,
        y: u32,
        width: u32,
        height: u32,
    },
    #[error("event {index} has polarity {polarity}, expected -1 or +1")]
    BadPolarity { index: usize, polarity: i32 },
    #[error("event {index} has timestamp {t} outside the window [{start}, {end}]")]
    OutOfWindow { index: usize, t: u64, start: u64, end: u64 },
    #[error("invalid sensor geometry: {0}")]
    BadGeometry(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("gathered index lists differ")]
    IndexMismatch,
    #[error("sequence has odd length {0}")]
    OddLength(usize),
    #[error("index {index} out of range for {len} tokens")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn parse(location: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse {
            location: location.into(),
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
