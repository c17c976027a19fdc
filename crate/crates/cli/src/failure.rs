use std::fmt;

use cvae_core::Error as CoreError;

/// Error carrying the process exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub error: anyhow::Error,
}

pub const EXIT_VALIDATION: u8 = 2;
pub const EXIT_IO: u8 = 3;
pub const EXIT_NUMERICAL: u8 = 4;

pub type CliResult<T> = std::result::Result<T, Failure>;

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#}", self.error)
    }
}

pub fn validation(e: impl Into<anyhow::Error>) -> Failure {
    Failure { code: EXIT_VALIDATION, error: e.into() }
}

pub fn io(e: impl Into<anyhow::Error>) -> Failure {
    Failure { code: EXIT_IO, error: e.into() }
}

pub fn numerical(e: impl Into<anyhow::Error>) -> Failure {
    Failure { code: EXIT_NUMERICAL, error: e.into() }
}

impl From<CoreError> for Failure {
    fn from(e: CoreError) -> Self {
        let code = match &e {
            CoreError::Io(_) => EXIT_IO,
            CoreError::NonFiniteGradient { .. }
            | CoreError::DegenerateSimilarity(_)
            | CoreError::AmbiguousRounding(_) => EXIT_NUMERICAL,
            _ => EXIT_VALIDATION,
        };
        Failure { code, error: e.into() }
    }
}

pub trait Context<T> {
    fn context(self, msg: impl fmt::Display + Send + Sync + 'static) -> CliResult<T>;
}

impl<T> Context<T> for CliResult<T> {
    fn context(self, msg: impl fmt::Display + Send + Sync + 'static) -> CliResult<T> {
        self.map_err(|f| Failure { code: f.code, error: f.error.context(msg) })
    }
}

impl<T> Context<T> for cvae_core::Result<T> {
    fn context(self, msg: impl fmt::Display + Send + Sync + 'static) -> CliResult<T> {
        self.map_err(Failure::from).context(msg)
    }
}
