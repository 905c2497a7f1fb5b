//! Error types shared across the crate.

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// A caller violated an operation precondition.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A numeric computation left the finite range.
    #[error("numeric failure: {0}")]
    Numeric(String),

    /// A binary dataset file did not match its expected layout.
    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    /// An experiment configuration failed to parse or validate.
    #[error("config error at `{key}`: {message}")]
    Config { key: String, message: String },

    /// An internal contract between two operations was violated.
    #[error("internal error: {0}")]
    Internal(String),

    /// An error propagated out of a named pipeline stage.
    #[error("stage {stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Wrap an error with the pipeline stage it escaped from.
    pub fn at_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

/// Attach a stage tag to the error side of a result.
pub trait StageExt<T> {
    fn stage(self, stage: &'static str) -> Result<T>;
}

impl<T> StageExt<T> for Result<T> {
    fn stage(self, stage: &'static str) -> Result<T> {
        self.map_err(|e| e.at_stage(stage))
    }
}
