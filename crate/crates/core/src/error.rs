use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("input too short: {0}")]
    InputTooShort(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("timestamp misalignment in track `{track_id}`: {detail}")]
    TimestampMisalignment { track_id: String, detail: String },
    #[error("schema violation: {0}")]
    SchemaViolation(String),
    #[error("scorer failure on segment {0}")]
    ScorerFailure(String),
    #[error("frame alignment failure: {0}")]
    FrameAlignment(String),
    #[error("numerical divergence: {0}")]
    NumericalDivergence(String),
    #[error("numerical failure: {0}")]
    NumericalFailure(String),
    #[error("insufficient samples: {0}")]
    InsufficientSamples(String),
    #[error("no concepts supplied")]
    NoConcepts,
    #[error("duration policy violation: {0}")]
    DurationPolicy(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("checkpoint {path}: {detail}")]
    Checkpoint { path: PathBuf, detail: String },
    #[error("empty training set: {0}")]
    EmptyTrainingSet(String),
    #[error(transparent)]
    Tensor(#[from] candle_core::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Wav(#[from] hound::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
