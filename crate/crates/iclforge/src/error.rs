use std::io;
use std::path::{Path, PathBuf};

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    /// Malformed input file; `offset` is the byte (or line, for text
    /// formats) where decoding stopped.
    #[error("{}: {what} at byte {offset}: {detail}", path.display())]
    Format {
        path: PathBuf,
        what: &'static str,
        offset: u64,
        detail: String,
    },
    #[error("config: {0}")]
    Config(String),
    #[error("{what} hash mismatch: expected {expected}, found {found}")]
    HashMismatch {
        what: String,
        expected: String,
        found: String,
    },
    #[error("{failed} of {total} sweep children failed")]
    Sweep { failed: usize, total: usize },
    #[error(transparent)]
    Core(#[from] iclforge_core::Error),
}

impl Error {
    pub fn io(path: impl AsRef<Path>, source: io::Error) -> Self {
        Error::Io {
            path: path.as_ref().to_path_buf(),
            source,
        }
    }

    /// Process exit code: 2 config or flags, 3 I/O and file formats,
    /// 4 numeric failure, 5 hash mismatch, 6 failed sweep children.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Io { .. } | Error::Format { .. } => 3,
            Error::HashMismatch { .. } => 5,
            Error::Sweep { .. } => 6,
            Error::Core(e) => match e {
                iclforge_core::Error::NonFinite { .. } => 4,
                iclforge_core::Error::Config(_)
                | iclforge_core::Error::Recipe(_)
                | iclforge_core::Error::Spec(_)
                | iclforge_core::Error::Split(_) => 2,
                _ => 4,
            },
        }
    }
}
