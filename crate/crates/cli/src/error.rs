use std::fmt;
use std::path::Path;

use areltrend::Error;

#[derive(Debug)]
pub enum CliError {
    Core(Error),
    /// The fit directory cannot be summarized.
    Incomplete(String),
    Internal(String),
}

impl CliError {
    pub fn parse(path: &Path, e: impl fmt::Display) -> Self {
        CliError::Core(Error::Parse {
            context: path.display().to_string(),
            message: e.to_string(),
        })
    }

    /// 2 input or parse, 3 dimension mismatch, 4 numerical failure,
    /// 5 incomplete fit directory.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(Error::Io { .. } | Error::Parse { .. } | Error::InvalidInput(_)) => 2,
            CliError::Core(Error::Dimension(_)) => 3,
            CliError::Core(Error::Numerical(_)) => 4,
            CliError::Incomplete(_) => 5,
            CliError::Internal(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Core(e) => e.fmt(f),
            CliError::Incomplete(m) => write!(f, "incomplete fit directory: {m}"),
            CliError::Internal(m) => write!(f, "internal error: {m}"),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

pub fn io_error(path: &Path, source: std::io::Error) -> CliError {
    CliError::Core(Error::Io {
        path: path.to_path_buf(),
        source,
    })
}
