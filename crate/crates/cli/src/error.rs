use ionchain::ErrorClass;
use thiserror::Error;

pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_CONVERGENCE: i32 = 3;
pub const EXIT_PHYSICS: i32 = 4;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error at `{field}` (line {line}, column {column}): {message}")]
    Config {
        field: String,
        line: usize,
        column: usize,
        message: String,
    },

    #[error("invalid config `{field}`: {reason}")]
    Invalid { field: String, reason: String },

    #[error("{0}")]
    Usage(String),

    #[error("{0}")]
    Io(String),

    #[error(transparent)]
    Core(#[from] ionchain::Error),
}

impl CliError {
    pub(crate) fn invalid(field: &str, reason: impl Into<String>) -> Self {
        CliError::Invalid {
            field: field.to_string(),
            reason: reason.into(),
        }
    }

    pub(crate) fn missing(block: &str) -> Self {
        CliError::invalid(block, "block is required by this command")
    }

    /// Process exit status for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(e) => match e.class() {
                ErrorClass::Validation => EXIT_VALIDATION,
                ErrorClass::Convergence => EXIT_CONVERGENCE,
                ErrorClass::Physics => EXIT_PHYSICS,
            },
            _ => EXIT_VALIDATION,
        }
    }
}
