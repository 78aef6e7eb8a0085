use thiserror::Error;

/// Unified error type for the numerical core.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration: {0}")]
    Config(String),

    #[error("sizing: {0}")]
    Sizing(String),

    /// Time integration produced a non-finite state.
    #[error("simulation diverged in {context} at step {step}")]
    SimulationDiverged { context: String, step: usize },

    /// An intensity measure is undefined for the given record
    /// (e.g. Husid duration of a zero-energy motion).
    #[error("undefined intensity measure: {0}")]
    UndefinedIm(String),

    #[error("fit: {0}")]
    Fit(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("numerical: {0}")]
    Numerical(String),

    #[error("missing data: {0}")]
    MissingData(String),
}

pub type Result<T> = std::result::Result<T, Error>;
