use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config schema: {0}")]
    Schema(String),

    #[error("config: {0}")]
    Config(String),

    #[error("{0}")]
    Core(#[from] metaqed_core::Error),

    #[error("i/o on {0}: {1}")]
    Io(String, #[source] std::io::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("resume refused: {0}")]
    Resume(String),

    /// Deliberate early stop, leaving a resumable partial table.
    #[error("run interrupted after {0} chunks; continue with --resume")]
    Interrupted(usize),
}

pub type Result<T> = std::result::Result<T, CliError>;
