use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch at {layer}: expected {expected}, got {got}")]
    DimensionMismatch {
        layer: String,
        expected: usize,
        got: usize,
    },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite {quantity}")]
    NonFinite { quantity: String },

    #[error("non-finite gradient at parameter index {index}")]
    NonFiniteGradient { index: usize },

    #[error("variational optimisation diverged at iteration {iteration}")]
    Diverged { iteration: usize },

    #[error("sampler initialisation failed after {attempts} attempts")]
    InitializationFailed { attempts: usize },

    #[error("generalized Pareto fit failed: {0}")]
    GpdFit(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("missing artifact: {0}")]
    MissingArtifact(PathBuf),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn non_finite(quantity: impl Into<String>) -> Self {
        Error::NonFinite {
            quantity: quantity.into(),
        }
    }

    /// True for failures that originate in floating point (divergence, overflow).
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::NonFinite { .. }
                | Error::NonFiniteGradient { .. }
                | Error::Diverged { .. }
                | Error::InitializationFailed { .. }
                | Error::GpdFit(_)
        )
    }
}
