use std::fmt;

use qpadapt::Error;

pub const EXIT_USAGE: u8 = 1;
pub const EXIT_INVARIANT: u8 = 2;
pub const EXIT_IO: u8 = 3;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    /// An oracle or invariant check failed; the report has been printed.
    Invariant(String),
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Invariant(_) => EXIT_INVARIANT,
            CliError::Io(_) => EXIT_IO,
        }
    }

    pub fn usage(msg: impl Into<String>) -> Self {
        CliError::Usage(msg.into())
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Invariant(m) => write!(f, "check failed: {m}"),
            CliError::Io(m) => write!(f, "i/o error: {m}"),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Io(_) | Error::File { .. } | Error::Format { .. } => CliError::Io(e.to_string()),
            Error::Diverged { .. } | Error::NonFinite { .. } | Error::Degenerate(_) | Error::NegativeTheta { .. } => {
                CliError::Invariant(e.to_string())
            }
            Error::ShapeMismatch { .. } | Error::InvalidArgument { .. } | Error::QpOutOfRange(_) | Error::MissingQpContext { .. } => {
                CliError::Usage(e.to_string())
            }
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;
