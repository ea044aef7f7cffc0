use thiserror::Error;

/// Errors raised by the identification library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("empty sequence")]
    EmptySequence,

    #[error("frame of {frame_len} samples is shorter than kernel length {kernel_len}")]
    InsufficientFrame { frame_len: usize, kernel_len: usize },

    #[error("sequence of {len} samples is shorter than one frame of {frame_len}")]
    TooShort { len: usize, frame_len: usize },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("model spec error: {0}")]
    Spec(String),

    #[error("parse error at position {position}: {message}")]
    Parse { position: usize, message: String },

    #[error("target has zero energy; normalization undefined")]
    UndefinedNormalization,

    #[error("least-squares design is ill-conditioned: {0}")]
    Conditioning(String),

    #[error("calibration failed: {0}")]
    Calibration(String),

    #[error("incompatible checkpoint: {0}")]
    Incompatible(String),

    #[error("non-finite gradient in stage {stage} ({name}) at epoch {epoch}")]
    NonFiniteGradient {
        stage: usize,
        name: String,
        epoch: usize,
    },

    #[error("loss became non-finite at epoch {epoch}; last good epoch {last_good:?}")]
    Diverged {
        epoch: usize,
        last_good: Option<usize>,
    },

    #[error("invalid file format: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
