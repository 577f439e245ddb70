use std::io::ErrorKind;

use thiserror::Error;

pub const EXIT_USAGE: i32 = 2;
pub const EXIT_MISSING: i32 = 3;
pub const EXIT_ACCEPTANCE: i32 = 4;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("missing input: {0}")]
    Missing(String),
    #[error("acceptance check failed: {0}")]
    Acceptance(String),
    #[error(transparent)]
    Core(#[from] aps_core::Error),
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn exit_code(&self) -> i32 {
        use aps_core::Error as E;
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Missing(_) => EXIT_MISSING,
            CliError::Acceptance(_) => EXIT_ACCEPTANCE,
            CliError::Core(E::InvalidArgument(_)) => EXIT_USAGE,
            CliError::Core(E::Io(e)) if e.kind() == ErrorKind::NotFound => EXIT_MISSING,
            CliError::Core(_) => 1,
        }
    }
}
