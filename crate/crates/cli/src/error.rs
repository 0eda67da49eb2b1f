use std::path::{Path, PathBuf};

use thorax_core::Error as CoreError;

pub type IoResult<T> = Result<T, IoError>;

/// Exit codes shared by every subcommand.
pub mod exit {
    pub const OK: i32 = 0;
    pub const USAGE: i32 = 2;
    pub const NUMERIC: i32 = 3;
    pub const IO: i32 = 4;
}

#[derive(Debug, thiserror::Error)]
pub enum IoError {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}: cannot decode image: {message}", path.display())]
    Decode { path: PathBuf, message: String },
    #[error("{}: {message}", path.display())]
    Parse { path: PathBuf, message: String },
    #[error("missing input files:\n  {}", .0.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join("\n  "))]
    MissingFiles(Vec<PathBuf>),
    #[error("{0}")]
    Usage(String),
    #[error("{context}{source}")]
    Core { context: String, source: CoreError },
}

impl IoError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        IoError::Io { path: path.to_path_buf(), source }
    }

    pub fn parse(path: &Path, message: impl ToString) -> Self {
        IoError::Parse { path: path.to_path_buf(), message: message.to_string() }
    }

    /// Core error prefixed with what was being processed.
    pub fn core(context: impl std::fmt::Display, source: CoreError) -> Self {
        IoError::Core { context: format!("{context}: "), source }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            IoError::Io { .. } | IoError::MissingFiles(_) => exit::IO,
            IoError::Decode { .. } | IoError::Parse { .. } | IoError::Usage(_) => exit::USAGE,
            IoError::Core { source, .. } => core_exit_code(source),
        }
    }
}

/// Numerical failures exit with 3, everything else is bad input.
pub fn core_exit_code(err: &CoreError) -> i32 {
    match err {
        CoreError::Diverged { .. }
        | CoreError::EmptySide(_)
        | CoreError::DegenerateFit
        | CoreError::EmptyOverlap
        | CoreError::NonFinite
        | CoreError::Unnormalized => exit::NUMERIC,
        _ => exit::USAGE,
    }
}

impl From<CoreError> for IoError {
    fn from(source: CoreError) -> Self {
        IoError::Core { context: String::new(), source }
    }
}
