use std::path::{Path, PathBuf};

use thiserror::Error;

/// Errors of the std layer, split by the exit code they map to.
#[derive(Debug, Error)]
pub enum Error {
    /// Bad arguments, configuration or input contents. Exit code 1.
    #[error("{0}")]
    Invalid(String),
    /// Divergence, IO and other failures while running. Exit code 2.
    #[error("{0}")]
    Runtime(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Invalid(_) => 1,
            Error::Runtime(_) => 2,
        }
    }

    pub fn io(path: &Path, err: std::io::Error) -> Self {
        Error::Runtime(format!("{}: {err}", path.display()))
    }
}

impl From<sfmgtl_core::Error> for Error {
    fn from(e: sfmgtl_core::Error) -> Self {
        match e {
            sfmgtl_core::Error::Diverged { .. } => Error::Runtime(e.to_string()),
            _ => Error::Invalid(e.to_string()),
        }
    }
}

/// Attaches a path to IO results.
pub trait IoContext<T> {
    fn at(self, path: impl Into<PathBuf>) -> Result<T>;
}

impl<T> IoContext<T> for std::io::Result<T> {
    fn at(self, path: impl Into<PathBuf>) -> Result<T> {
        self.map_err(|e| Error::io(&path.into(), e))
    }
}
