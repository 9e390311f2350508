use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed or truncated file contents.
    #[error("format error: {0}")]
    Format(String),

    /// Array shapes, dimensions or class counts do not agree.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// The input leaves the requested quantity undefined (e.g. no labelled voxel).
    #[error("degenerate input: {0}")]
    Degenerate(String),

    /// A synthetic scene description that cannot be realised.
    #[error("invalid scene spec: {0}")]
    Spec(String),

    /// A loss became NaN or infinite during optimisation.
    #[error("non-finite loss at step {step}")]
    Numerical { step: usize },

    /// A value violates a type invariant.
    #[error("invalid value: {0}")]
    Invalid(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}
