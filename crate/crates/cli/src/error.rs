use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("{0}")]
    Data(String),

    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error(transparent)]
    Core(#[from] poretail::Error),
}

impl CliError {
    pub fn file(path: &Path, source: std::io::Error) -> Self {
        CliError::File { path: path.to_path_buf(), source }
    }

    pub fn in_file(path: &Path, err: poretail::Error) -> Self {
        if err.is_statistical() {
            return CliError::Core(err);
        }
        CliError::Data(format!("{}: {err}", path.display()))
    }

    /// 1 usage, 2 data, 3 statistical precondition.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Core(e) if e.is_statistical() => 3,
            _ => 2,
        }
    }
}
