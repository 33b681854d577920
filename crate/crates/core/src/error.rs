use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("model error: {0}")]
    Model(String),

    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    Dimension {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("voltage profile error: {0}")]
    Profile(String),

    #[error("time step {dt} s is outside the trained range [0, {dt_max}] s of network '{component}'")]
    Domain {
        component: String,
        dt: f64,
        dt_max: f64,
    },

    #[error("weights layout mismatch: {0}")]
    LayoutMismatch(String),

    #[error("file not found: {}", .0.display())]
    NotFound(PathBuf),

    #[error("malformed file {}: {message}", path.display())]
    Malformed { path: PathBuf, message: String },

    #[error("case validation failed: {0}")]
    Validation(String),

    #[error("power flow did not converge after {iterations} iterations (mismatch history: {history:?})")]
    PowerFlowDivergence { iterations: usize, history: Vec<f64> },

    #[error("initialization error: {0}")]
    Initialization(String),

    #[error("newton iteration failed at t = {t}: {message}")]
    Newton { t: f64, message: String },

    #[error("linear solve failed: {0}")]
    Singular(String),

    #[error("reference verification failed: {0}")]
    Verification(String),

    #[error("training diverged at epoch {epoch}: {message}")]
    Divergence { epoch: usize, message: String },

    #[error("dataset generation failed: {0}")]
    Dataset(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Input errors (bad files, bad configuration) as opposed to numerical failures.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Validation(_)
                | Error::InvalidParameter(_)
                | Error::NotFound(_)
                | Error::Malformed { .. }
                | Error::LayoutMismatch(_)
                | Error::Domain { .. }
                | Error::Dimension { .. }
                | Error::Io(_)
        )
    }
}
