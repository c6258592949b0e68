use thiserror::Error;

/// Errors produced by construction, solving and estimation routines.
#[derive(Debug, Error)]
pub enum Error {
    /// A probability vector or matrix row failed validation.
    #[error("invalid distribution in {context}: {detail}")]
    InvalidDistribution { context: String, detail: String },

    /// Shape or index mismatch between inputs.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// A parameter was outside its valid range.
    #[error("invalid parameter {name}: {detail}")]
    InvalidParameter { name: String, detail: String },

    /// The dense linear solver hit a (numerically) singular system.
    #[error("singular linear system: {0}")]
    SingularSystem(String),

    /// An operation that needs recorded start states got none.
    #[error("dataset has no recorded start states")]
    EmptyStartStates,

    /// An operation that needs transitions got an empty dataset.
    #[error("dataset has no transitions")]
    EmptyDataset,

    /// Every oracle entry was masked, so the requested metric is undefined.
    #[error("ratio oracle has no defined entries")]
    AllMasked,

    /// Configuration file or record failed validation.
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    /// Serialization or file I/O failure.
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    /// JSON encode/decode failure.
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid_dist(context: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::InvalidDistribution {
            context: context.into(),
            detail: detail.into(),
        }
    }

    pub(crate) fn bad_param(name: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name: name.into(),
            detail: detail.into(),
        }
    }
}
