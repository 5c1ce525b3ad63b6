use std::fmt;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_TOLERANCE: i32 = 3;

/// A command failure and the exit code it maps to.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub error: anyhow::Error,
}

impl Failure {
    pub fn usage(error: impl Into<anyhow::Error>) -> Self {
        Self { code: EXIT_USAGE, error: error.into() }
    }

    pub fn validation(error: impl Into<anyhow::Error>) -> Self {
        Self { code: EXIT_VALIDATION, error: error.into() }
    }

    pub fn tolerance(error: impl Into<anyhow::Error>) -> Self {
        Self { code: EXIT_TOLERANCE, error: error.into() }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#}", self.error)
    }
}

impl From<waterline_core::Error> for Failure {
    fn from(e: waterline_core::Error) -> Self {
        Self::validation(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Self::validation(e)
    }
}

pub type CmdResult<T = ()> = Result<T, Failure>;

pub fn usage(msg: impl fmt::Display) -> Failure {
    Failure::usage(anyhow::anyhow!("{msg}"))
}
