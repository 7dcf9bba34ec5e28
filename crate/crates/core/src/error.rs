use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, GfaError>;

#[derive(Debug, Error)]
pub enum GfaError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("state space too large: {0}")]
    Capacity(String),

    #[error("eps = {eps} outside (0, 1/max|Q_ii|) with max|Q_ii| = {max_exit_rate}")]
    EpsOutOfRange { eps: f64, max_exit_rate: f64 },

    #[error("graph is disconnected ({components} components)")]
    Disconnected { components: usize },

    #[error("eigensolver did not converge: worst relative residual {residual:.3e}")]
    NonConvergence { residual: f64 },

    #[error("kernel matrix not positive definite after jitter (smallest eigenvalue {min_eigenvalue:.3e})")]
    NotPositiveDefinite { min_eigenvalue: f64 },

    #[error("hyperparameter optimization diverged; last finite log-hyperparameters {last_finite:?}")]
    Divergence { last_finite: Vec<f64> },

    #[error("step size underflow at t = {t} (state {state:?})")]
    StepUnderflow { t: f64, state: Vec<f64> },

    #[error("generator is not diagonalizable with a real spectrum: {0}; spectral fluid is meant for symmetric generators")]
    Defective(String),

    #[error("could not find a valid transition-removal pattern after {attempts} attempts")]
    RemovalExhausted { attempts: usize },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<GfaError>,
    },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl GfaError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        GfaError::InvalidInput(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        GfaError::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by a bad configuration rather than by numerics.
    pub fn is_validation(&self) -> bool {
        match self {
            GfaError::InvalidInput(_)
            | GfaError::DimensionMismatch(_)
            | GfaError::Config(_)
            | GfaError::Parse(_)
            | GfaError::Capacity(_)
            | GfaError::EpsOutOfRange { .. } => true,
            GfaError::Stage { source, .. } => source.is_validation(),
            _ => false,
        }
    }
}
