use std::fmt;
use std::io;

use fuzzywave::Error as CoreError;

/// Process exit codes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExitKind {
    NotFound = 2,
    Parse = 3,
    Validation = 4,
    Numerical = 5,
}

#[derive(Debug)]
pub struct CliError {
    pub kind: ExitKind,
    pub message: String,
}

impl CliError {
    pub fn new(kind: ExitKind, message: impl Into<String>) -> Self {
        Self {
            kind,
            message: message.into(),
        }
    }

    pub fn validation(message: impl Into<String>) -> Self {
        Self::new(ExitKind::Validation, message)
    }

    pub fn code(&self) -> i32 {
        self.kind as i32
    }

    /// Prefix the message with what was being done.
    pub fn context(mut self, what: impl fmt::Display) -> Self {
        self.message = format!("{what}: {}", self.message);
        self
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        let kind = match e.kind() {
            io::ErrorKind::NotFound => ExitKind::NotFound,
            io::ErrorKind::InvalidData => ExitKind::Parse,
            _ => ExitKind::Validation,
        };
        Self::new(kind, e.to_string())
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        let kind = match &e {
            CoreError::Io(io) if io.kind() == io::ErrorKind::NotFound => ExitKind::NotFound,
            CoreError::Parse(_) => ExitKind::Parse,
            CoreError::NotPositiveDefinite(_) | CoreError::DegenerateUPosterior | CoreError::Bracketing(_) => {
                ExitKind::Numerical
            }
            CoreError::NonFinite(_) => ExitKind::Numerical,
            _ => ExitKind::Validation,
        };
        Self::new(kind, e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        if e.is_io() {
            Self::validation(e.to_string())
        } else {
            Self::new(ExitKind::Parse, e.to_string())
        }
    }
}
