use thiserror::Error;

/// Errors raised by the estimation and certification routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("model precondition violated: {0}")]
    Precondition(String),
    #[error("non-finite value at step {step}: {what}")]
    NonFinite { step: usize, what: String },
    #[error("model does not provide {0}")]
    MissingDerivative(&'static str),
    #[error("unsupported norm: {0}")]
    UnsupportedNorm(String),
    #[error("not contracting: {0}")]
    NotContracting(String),
    #[error("infeasible: {0}")]
    Infeasible(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl Error {
    /// Process exit status used by the command line front end.
    pub fn exit_status(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Dimension(_) => 2,
            Error::Precondition(_) | Error::NotContracting(_) | Error::Infeasible(_) => 3,
            Error::NonFinite { .. }
            | Error::MissingDerivative(_)
            | Error::UnsupportedNorm(_)
            | Error::Numerical(_) => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_dim(what: &str, got: usize, want: usize) -> Result<()> {
    if got != want {
        return Err(Error::Dimension(format!("{what}: expected {want}, got {got}")));
    }
    Ok(())
}
