use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A configuration value violates its documented range.
    #[error("configuration error: {0}")]
    Config(String),

    /// Caller-side contract violation (mismatched lengths, step counts, ...).
    #[error("contract error: {0}")]
    Contract(String),

    #[error("calibration error: {0}")]
    Calibration(String),

    /// A worker replied with something that is not a valid response line.
    #[error("protocol error: {message} (raw payload: {raw:?})")]
    Protocol { message: String, raw: String },

    /// A worker did not answer, died, or reported ERROR after all retries.
    #[error("worker error: {0}")]
    Worker(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    /// Short machine-readable tag used by the CLI when reporting failures.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Config(_) => "config",
            Error::Contract(_) => "contract",
            Error::Calibration(_) => "calibration",
            Error::Protocol { .. } => "protocol",
            Error::Worker(_) => "worker",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }
}
