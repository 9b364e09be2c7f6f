use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error on line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("missing column {0:?}")]
    Schema(String),

    #[error(transparent)]
    Core(#[from] stagecp::Error),
}

impl HarnessError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        HarnessError::Io { path: path.to_path_buf(), source }
    }

    /// Process exit code: 2 for configuration problems, 3 for file problems.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) | HarnessError::Core(_) => 2,
            HarnessError::Io { .. } | HarnessError::Parse { .. } | HarnessError::Schema(_) => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, HarnessError>;
