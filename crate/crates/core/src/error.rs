use thiserror::Error;

/// Errors raised by model construction, the oracles and the solvers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum IsingError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("graph error: {0}")]
    Graph(String),

    #[error("exact enumeration limited to {cap} spins, model has {vertices}")]
    TooLarge { vertices: usize, cap: usize },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    Convergence { iterations: usize, residual: f64 },

    #[error("linear algebra: {0}")]
    LinearAlgebra(String),

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error("divergence at iteration {iteration}: {reason}")]
    Divergence { iteration: usize, reason: String },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("i/o: {0}")]
    Io(String),
}

impl IsingError {
    /// Short machine-readable tag, used by the CLI error JSON.
    pub fn kind(&self) -> &'static str {
        match self {
            IsingError::InvalidInput(_) => "invalid_input",
            IsingError::Graph(_) => "graph",
            IsingError::TooLarge { .. } => "too_large",
            IsingError::Domain(_) => "domain",
            IsingError::Convergence { .. } => "convergence",
            IsingError::LinearAlgebra(_) => "linear_algebra",
            IsingError::UndefinedMetric(_) => "undefined_metric",
            IsingError::Divergence { .. } => "divergence",
            IsingError::Parse { .. } => "parse",
            IsingError::Io(_) => "io",
        }
    }
}

impl From<std::io::Error> for IsingError {
    fn from(e: std::io::Error) -> Self {
        IsingError::Io(e.to_string())
    }
}

impl From<serde_json::Error> for IsingError {
    fn from(e: serde_json::Error) -> Self {
        IsingError::InvalidInput(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, IsingError>;
