use std::fmt;
use std::process::ExitCode;

use pact_core::PactError;

/// Exit status for argument and validation failures.
pub const EXIT_USAGE: u8 = 2;
/// Exit status for file system failures.
pub const EXIT_IO: u8 = 3;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Io(String),
}

impl CliError {
    pub fn usage(msg: impl Into<String>) -> Self {
        CliError::Usage(msg.into())
    }

    pub fn io(msg: impl Into<String>) -> Self {
        CliError::Io(msg.into())
    }

    pub fn exit_code(&self) -> ExitCode {
        match self {
            CliError::Usage(_) => ExitCode::from(EXIT_USAGE),
            CliError::Io(_) => ExitCode::from(EXIT_IO),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(msg) | CliError::Io(msg) => f.write_str(msg),
        }
    }
}

impl From<PactError> for CliError {
    fn from(e: PactError) -> Self {
        match e {
            PactError::Io(_) => CliError::Io(e.to_string()),
            other => CliError::Usage(other.to_string()),
        }
    }
}

/// Attaches the offending path to an I/O failure.
pub fn with_path(path: &std::path::Path) -> impl FnOnce(PactError) -> CliError + '_ {
    move |e| match e {
        PactError::Io(io) => CliError::Io(format!("{}: {io}", path.display())),
        other => CliError::Usage(format!("{}: {other}", path.display())),
    }
}
