use std::fmt;
use std::process::ExitCode;

/// Failure classes with their process exit codes.
#[derive(Debug, Clone, PartialEq)]
pub enum CliError {
    Usage(String),
    Data(String),
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numerical(_) => 3,
        })
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Data(m) => write!(f, "data error: {m}"),
            CliError::Numerical(m) => write!(f, "numerical failure: {m}"),
        }
    }
}

impl From<spinshape::Error> for CliError {
    fn from(e: spinshape::Error) -> Self {
        if e.is_numerical() {
            CliError::Numerical(e.to_string())
        } else {
            CliError::Data(e.to_string())
        }
    }
}

/// Maps a library error raised while checking command-line values.
pub fn usage(e: spinshape::Error) -> CliError {
    if e.is_numerical() {
        CliError::Numerical(e.to_string())
    } else {
        CliError::Usage(e.to_string())
    }
}
