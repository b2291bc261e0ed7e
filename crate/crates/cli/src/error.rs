use std::fmt;
use std::path::Path;

use pixalign::Error;

/// Process exit status of a failed command.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExitKind {
    Config = 2,
    Data = 3,
    Training = 4,
}

impl ExitKind {
    pub fn code(self) -> u8 {
        self as u8
    }
}

#[derive(Debug, thiserror::Error)]
pub struct CliError {
    pub kind: ExitKind,
    pub message: String,
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let label = match self.kind {
            ExitKind::Config => "config error",
            ExitKind::Data => "data error",
            ExitKind::Training => "training failure",
        };
        write!(f, "{label}: {}", self.message)
    }
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn config(message: impl Into<String>) -> Self {
        Self {
            kind: ExitKind::Config,
            message: message.into(),
        }
    }

    pub fn data(message: impl Into<String>) -> Self {
        Self {
            kind: ExitKind::Data,
            message: message.into(),
        }
    }

    pub fn io(path: &Path, e: std::io::Error) -> Self {
        Self::data(format!("{}: {e}", path.display()))
    }
}

/// Maps a library error onto the exit-code categories.
pub fn kind_of(e: &Error) -> ExitKind {
    if e.is_training_failure() {
        return ExitKind::Training;
    }
    if e.is_data_error() {
        return ExitKind::Data;
    }
    match e {
        Error::Checkpoint(_) | Error::ShapeMismatch(_) => ExitKind::Data,
        Error::IgnoreInPrediction(_) => ExitKind::Training,
        _ => ExitKind::Config,
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        Self {
            kind: kind_of(&e),
            message: e.to_string(),
        }
    }
}
