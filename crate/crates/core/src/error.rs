use thiserror::Error;

#[derive(Debug, Error)]
pub enum QscopeError {
    #[error("invalid basis: {0}")]
    InvalidBasis(String),

    #[error("basis mismatch: {0}")]
    BasisMismatch(String),

    #[error("quadrature accuracy: order {order} and {doubled} differ by {diff:.3e} (tolerance {tol:.1e})")]
    QuadratureAccuracy {
        order: usize,
        doubled: usize,
        diff: f64,
        tol: f64,
    },

    #[error("degenerate Λ configuration at z = {z}: both Rabi frequencies vanish")]
    DegenerateConfiguration { z: f64 },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("step size too large at step {step}: {diagnostic}")]
    StepSize { step: usize, diagnostic: String },

    #[error("positivity violated at step {step}: minimum eigenvalue {min_eigenvalue:.3e}; reduce dt")]
    Positivity { step: usize, min_eigenvalue: f64 },

    #[error("degenerate statistics: {0}")]
    Degenerate(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("mode/state mismatch: {0}")]
    ModeMismatch(String),

    #[error("many-body basis overflow: {states} states exceeds the limit {limit}")]
    BasisOverflow { states: usize, limit: usize },

    #[error("guard refused run: {0}")]
    Guard(String),

    #[error("config error at `{key}`: {reason}")]
    Config { key: String, reason: String },

    #[error("ensemble aborted after {completed} of {requested} trajectories: {source}")]
    Ensemble {
        completed: usize,
        requested: usize,
        completed_streams: Vec<u64>,
        #[source]
        source: Box<QscopeError>,
    },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, QscopeError>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> QscopeError {
    QscopeError::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
