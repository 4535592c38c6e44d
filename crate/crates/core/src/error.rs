use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("unsupported configuration: {0}")]
    Unsupported(String),

    #[error("singular operator: {0}")]
    SingularOperator(String),

    #[error("non-finite value in {stage}")]
    NumericFailure { stage: String },

    #[error("training diverged at step {step}: {detail}")]
    Diverged { step: usize, detail: String },

    #[error("sample rate mismatch: checkpoint {checkpoint} Hz, audio {audio} Hz")]
    SampleRateMismatch { checkpoint: u32, audio: u32 },

    #[error("wav {path}: {detail}")]
    Wav { path: PathBuf, detail: String },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("csv {path}: {detail}")]
    Csv { path: PathBuf, detail: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}
