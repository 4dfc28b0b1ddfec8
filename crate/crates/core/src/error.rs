use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("validation error: {0}")]
    Validation(String),

    #[error("dimension mismatch at frame {frame}: expected {expected:?}, found {found:?}")]
    Dimension {
        frame: usize,
        expected: (usize, usize),
        found: (usize, usize),
    },

    #[error("sequence too short: {0} frame(s), need at least 2")]
    SequenceTooShort(usize),

    #[error("index error: {0}")]
    Index(String),

    #[error("configuration error: {0}")]
    Configuration(String),

    #[error("refinement failed at frame {frame} (object {object_id}): {source}")]
    Refinement {
        frame: usize,
        object_id: u32,
        #[source]
        source: Box<Error>,
    },

    #[error("refiner process error: {0}")]
    Refiner(String),

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("instance too large: {0} variables (limit {1})")]
    Size(usize, usize),

    #[error("invalid scene specification: {0}")]
    Specification(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Configuration(msg.into())
    }

    /// True for failures raised by a refiner or its transport.
    pub fn is_refiner_failure(&self) -> bool {
        matches!(
            self,
            Error::Refinement { .. } | Error::Refiner(_) | Error::Protocol(_)
        )
    }
}
