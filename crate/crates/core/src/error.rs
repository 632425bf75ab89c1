use thiserror::Error;

/// Errors raised by the toolkit. Variants are grouped so that front ends can
/// map them onto validation, convergence and physics failures.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: String, reason: String },

    #[error("species `{species}` is not confined: squared radial frequency {omega_sq:e} rad²/s² is not positive")]
    UnstableSpecies { species: String, omega_sq: f64 },

    #[error("ions {i} and {j} coincide")]
    CoincidentIons { i: usize, j: usize },

    #[error("{what} did not converge after {iterations} iterations")]
    NonConvergence { what: String, iterations: usize },

    #[error("linear chain is unstable in the {direction} direction (eigenvalue {eigenvalue:e})")]
    ZigzagInstability { direction: String, eigenvalue: f64 },

    #[error("ion {ion} left the trap region (|coordinate| = {extent:e} m)")]
    IonEjected { ion: usize, extent: f64 },

    #[error("temperature {temperature:e} K lies outside the simulated curve [{low:e}, {high:e}] K")]
    Extrapolation { temperature: f64, low: f64, high: f64 },

    #[error("division by zero: {0}")]
    DivisionByZero(String),

    #[error("row {row}: {message}")]
    Csv { row: usize, message: String },

    #[error("i/o error: {0}")]
    Io(String),
}

/// Broad failure class, used for exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Validation,
    Convergence,
    Physics,
}

impl Error {
    pub(crate) fn invalid(name: &str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name: name.to_string(),
            reason: reason.into(),
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::NonConvergence { .. } => ErrorClass::Convergence,
            Error::UnstableSpecies { .. }
            | Error::CoincidentIons { .. }
            | Error::ZigzagInstability { .. }
            | Error::IonEjected { .. } => ErrorClass::Physics,
            Error::InvalidParameter { .. }
            | Error::Extrapolation { .. }
            | Error::DivisionByZero(_)
            | Error::Csv { .. }
            | Error::Io(_) => ErrorClass::Validation,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
