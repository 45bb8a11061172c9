use thiserror::Error;

/// Errors surfaced by every layer of the library.
///
/// The variant names are stable identifiers; the CLI maps them onto exit
/// codes (see [`SldiError::exit_code`]).
#[derive(Debug, Error)]
pub enum SldiError {
    #[error("grid error: {0}")]
    GridError(String),

    #[error("numerical blowup at step {step}: {detail}")]
    NumericalBlowup { step: usize, detail: String },

    #[error("unsupported scheme: {0}")]
    UnsupportedScheme(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("shape error: {0}")]
    ShapeError(String),

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("numerics error: {0}")]
    NumericsError(String),

    #[error("format error: {0}")]
    FormatError(String),

    #[error("parse error at line {line}: {detail}")]
    ParseError { line: usize, detail: String },

    #[error("config error: {0}")]
    ConfigError(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, SldiError>;

impl SldiError {
    pub fn blowup(step: usize, detail: impl Into<String>) -> Self {
        SldiError::NumericalBlowup {
            step,
            detail: detail.into(),
        }
    }

    pub fn shape(detail: impl Into<String>) -> Self {
        SldiError::ShapeError(detail.into())
    }

    /// Process exit code used by the command-line driver.
    pub fn exit_code(&self) -> i32 {
        match self {
            SldiError::ConfigError(_)
            | SldiError::ParseError { .. }
            | SldiError::FormatError(_)
            | SldiError::InvalidInput(_) => 2,
            SldiError::NumericalBlowup { .. } | SldiError::NumericsError(_) => 3,
            _ => 1,
        }
    }
}

pub(crate) fn check_len(what: &str, got: usize, want: usize) -> Result<()> {
    if got != want {
        return Err(SldiError::shape(format!(
            "{what}: expected length {want}, got {got}"
        )));
    }
    Ok(())
}
