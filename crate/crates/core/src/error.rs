use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("eigensolver failed to converge (seed {seed})")]
    EigenNoConvergence { seed: u64 },
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("particle ordering lost after {halvings} step halvings at t = {t} (index {index})")]
    OrderingLost { halvings: u32, t: f64, index: usize },
    #[error("precondition: {0}")]
    Precondition(String),
    #[error("{failed} of {total} trials failed (limit 1%)")]
    TooManyFailures { failed: usize, total: usize },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Whether the error is a numerical failure, as opposed to bad input or a refused gate.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::EigenNoConvergence { .. }
                | Error::Numerical(_)
                | Error::OrderingLost { .. }
                | Error::TooManyFailures { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
