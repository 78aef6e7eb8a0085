use thiserror::Error;

/// Pipeline-level errors, classified for process exit codes:
/// 2 configuration, 3 data/IO, 4 numerical.
#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("configuration: {0}")]
    Config(String),

    #[error("data: {0}")]
    Data(String),

    #[error("stale input: {0}")]
    StaleInput(String),

    #[error("numerical: {0}")]
    Numerical(String),

    #[error(transparent)]
    Core(#[from] fragsurr_core::Error),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl PipelineError {
    /// Process exit code of this error class.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 2,
            PipelineError::Data(_) | PipelineError::StaleInput(_) | PipelineError::Io(_) => 3,
            PipelineError::Numerical(_) => 4,
            PipelineError::Core(e) => match e {
                fragsurr_core::Error::Config(_) => 2,
                fragsurr_core::Error::Sizing(_) | fragsurr_core::Error::MissingData(_) => 3,
                _ => 4,
            },
        }
    }
}

pub type Result<T> = std::result::Result<T, PipelineError>;
