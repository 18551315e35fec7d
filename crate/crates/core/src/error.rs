use thiserror::Error;

/// Errors produced anywhere in the dynamics, learning and planning stack.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid action: {0}")]
    InvalidAction(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("non-finite value at particle {index}")]
    NumericParticle { index: usize },

    #[error("non-finite value in layer {layer}")]
    NumericLayer { layer: usize },

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("tracking diverged (kp={kp}, ki={ki}, kd={kd}): mean error {error} exceeded {limit}")]
    Divergence {
        kp: f64,
        ki: f64,
        kd: f64,
        error: f64,
        limit: f64,
    },

    #[error("training diverged at epoch {epoch}")]
    Training { epoch: usize },

    #[error("planning failed: {0}")]
    Planning(String),

    #[error("io error: {0}")]
    Io(String),

    #[error("format error: {0}")]
    Format(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Format(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl Error {
    /// True for failures caused by values blowing up rather than bad input.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::NumericParticle { .. } | Error::NumericLayer { .. } | Error::Numeric(_) | Error::Divergence { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_len(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}
