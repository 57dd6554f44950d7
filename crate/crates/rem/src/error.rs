use std::path::{Path, PathBuf};

/// Errors surfaced by the command line and file formats.
#[derive(Debug, thiserror::Error)]
pub enum RemError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("missing file: {}", .0.display())]
    MissingFile(PathBuf),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("config: {0}")]
    Config(String),
    #[error("{}: {message}", path.display())]
    Format { path: PathBuf, message: String },
    #[error(transparent)]
    Core(#[from] rem_core::Error),
}

pub type Result<T> = std::result::Result<T, RemError>;

impl RemError {
    /// Process exit code: 2 usage, 3 missing input, 4 divergence, 1 other.
    pub fn exit_code(&self) -> i32 {
        match self {
            RemError::Usage(_) | RemError::Config(_) => 2,
            RemError::MissingFile(_) => 3,
            RemError::Core(rem_core::Error::Divergence { .. }) => 4,
            _ => 1,
        }
    }

    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        if source.kind() == std::io::ErrorKind::NotFound {
            RemError::MissingFile(path.to_path_buf())
        } else {
            RemError::Io {
                path: path.to_path_buf(),
                source,
            }
        }
    }

    pub(crate) fn format(path: &Path, message: impl Into<String>) -> Self {
        RemError::Format {
            path: path.to_path_buf(),
            message: message.into(),
        }
    }
}
