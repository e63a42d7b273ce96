use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("events not sorted by timestamp at index {index}")]
    Unsorted { index: usize },

    #[error("invalid window bounds: t0={t0} must be < t1={t1}")]
    Bounds { t0: i64, t1: i64 },

    #[error("event {index} at t={t} lies outside window [{t0}, {t1})")]
    EventOutsideWindow { index: usize, t: i64, t0: i64, t1: i64 },

    #[error("event {index} at ({x}, {y}) outside sensor {width}x{height}")]
    OutOfSensor {
        index: usize,
        x: u32,
        y: u32,
        width: usize,
        height: usize,
    },

    #[error("invalid polarity {0}, expected +1 or -1")]
    Polarity(i64),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("index {index} out of range (len {len})")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("under-constrained: {0}")]
    UnderConstrained(String),

    #[error("under-sampled rendering: max log change {max_change:.4} per frame >= 4C; need frame_rate >= {required_rate:.1} Hz")]
    UnderSampled { max_change: f64, required_rate: f64 },

    #[error("format error at byte {offset}: {msg}")]
    Format { offset: u64, msg: String },

    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
