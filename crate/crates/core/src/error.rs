use alloc::string::String;
use core::fmt;

/// Errors raised by the core library.
#[derive(Clone, Debug, PartialEq)]
pub enum Error {
    /// A precondition on an argument does not hold.
    InvalidArgument(String),
    /// Training produced a non-finite loss.
    Diverged { stage: &'static str, epoch: usize, iteration: usize },
    /// A checkpoint does not match the model it is loaded into.
    CheckpointMismatch(String),
}

pub type Result<T> = core::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::InvalidArgument(msg) => write!(f, "invalid argument: {msg}"),
            Error::Diverged { stage, epoch, iteration } => {
                write!(f, "loss became non-finite during {stage} (epoch {epoch}, iteration {iteration})")
            }
            Error::CheckpointMismatch(msg) => write!(f, "checkpoint mismatch: {msg}"),
        }
    }
}

impl core::error::Error for Error {}
