use thiserror::Error;

#[derive(Debug, Error)]
pub enum DiffError {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("unknown parameter `{0}`")]
    UnknownParameter(String),

    #[error("parameter `{0}` registered twice")]
    DuplicateParameter(String),

    #[error("masked loss selects no entries")]
    EmptyMask,

    #[error("sequence of length {len} is shorter than the required {required} frames")]
    TooShort { len: usize, required: usize },

    #[error("model dimension {dim} is not divisible by {heads} heads")]
    HeadCount { dim: usize, heads: usize },

    #[error("backward requires a 1x1 loss, got {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, DiffError>;

pub(crate) fn shape_err<T>(op: &'static str, detail: impl Into<String>) -> Result<T> {
    Err(DiffError::Shape {
        op,
        detail: detail.into(),
    })
}
