use std::path::PathBuf;

use thiserror::Error;

use crate::types::ValidationReport;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("class `{0}` has no samples")]
    EmptyClass(String),

    #[error("requested {requested} neighbours but only {available} candidates are available")]
    InsufficientPool { requested: usize, available: usize },

    #[error("local subspace is rank deficient: rank {rank}, need {required}")]
    RankDeficient { rank: usize, required: usize },

    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },

    /// Eigenvalues `m` and `m + 1` of the summed projector coincide, so the
    /// extrinsic mean is not unique.
    #[error("extrinsic mean is not unique: eigenvalue gap {gap:e} at dimension {dim}")]
    DegenerateMean { dim: usize, gap: f64 },

    #[error("absorbing chain{}: transient state {state} cannot reach an absorbing state", pass.map(|p| format!(" (pass {p})")).unwrap_or_default())]
    StateUnreachable { state: usize, pass: Option<u8> },

    #[error("novel class `{class}`: {source}")]
    Estimation {
        class: String,
        #[source]
        source: Box<Error>,
    },

    #[error("class `{class}` needs {requested} shots but has {available} training samples")]
    InsufficientShots {
        class: String,
        requested: usize,
        available: usize,
    },

    #[error("invalid split: {0}")]
    Split(String),

    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("episode failed validation: {0}")]
    Validation(ValidationReport),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(offset: u64, message: impl Into<String>) -> Self {
        Error::Format {
            offset,
            message: message.into(),
        }
    }

    /// Innermost error, looking through class annotations.
    pub fn root(&self) -> &Error {
        match self {
            Error::Estimation { source, .. } => source.root(),
            other => other,
        }
    }

    /// True for failures caused by bad inputs rather than numerics.
    pub fn is_validation(&self) -> bool {
        matches!(
            self.root(),
            Error::Validation(_)
                | Error::Invalid(_)
                | Error::Split(_)
                | Error::DimensionMismatch { .. }
                | Error::InsufficientPool { .. }
                | Error::InsufficientShots { .. }
                | Error::Format { .. }
                | Error::Csv(_)
                | Error::Json(_)
        )
    }
}
