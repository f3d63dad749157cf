use std::fmt;
use std::path::Path;

/// Process exit codes. Usage problems include bad flags, malformed config
/// files and missing input files.
pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_VALIDATION: i32 = 4;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Io(String),
    Validation(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Io(_) => EXIT_IO,
            CliError::Validation(_) => EXIT_VALIDATION,
        }
    }

    /// Wraps a core error with the file it came from.
    pub fn at(path: &Path, err: adcf_core::Error) -> Self {
        match err {
            adcf_core::Error::Io(e) => CliError::Io(format!("{}: {e}", path.display())),
            adcf_core::Error::Parse { .. } => CliError::Validation(err.to_string()),
            other => CliError::Validation(format!("{}: {other}", path.display())),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            // clap renders its own "error:" prefix
            CliError::Usage(m) if m.starts_with("error:") => f.write_str(m.trim_end()),
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Io(m) => write!(f, "i/o error: {m}"),
            CliError::Validation(m) => write!(f, "invalid input: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<adcf_core::Error> for CliError {
    fn from(err: adcf_core::Error) -> Self {
        match err {
            adcf_core::Error::Io(e) => CliError::Io(e.to_string()),
            other => CliError::Validation(other.to_string()),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

pub(crate) fn io_at(path: &Path, err: std::io::Error) -> CliError {
    CliError::Io(format!("{}: {err}", path.display()))
}
