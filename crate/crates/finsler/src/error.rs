use thiserror::Error;

/// Error taxonomy shared by every module. Variants map one-to-one onto the
/// failure classes surfaced by the CLI: user input problems exit with 2,
/// failed checks with 1.
#[derive(Debug, Error)]
pub enum FinslerError {
    /// Caller handed in something structurally unusable (zero vector where a
    /// direction is required, mismatched grids, a non-symmetric norm to the
    /// symmetric pipeline, ...).
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A quantity that must be invertible or uniquely defined degenerated:
    /// singular fundamental tensor, flat indicatrix arc with no unique
    /// maximizer, and the like.
    #[error("singularity: {0}")]
    Singular(String),

    /// An iteration failed to converge or a solver left its validity region.
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// The run configuration is self-inconsistent (r <= eps, patch larger
    /// than the chart domain, smallness budget exceeded, ...).
    #[error("configuration error: {0}")]
    Configuration(String),

    /// An object is used at the wrong pipeline stage, e.g. recovering a
    /// metric from an envelope that failed its enveloping checks.
    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, FinslerError>;
