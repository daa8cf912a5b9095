use thiserror::Error;

use crate::checkpoint::CheckpointError;
use crate::kendall::KendallError;
use crate::tensor::TensorError;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Kendall(#[from] KendallError),
    /// Invalid input, configuration or request.
    #[error("validation: {0}")]
    Validation(String),
    /// The chosen encoder cannot handle the requested architecture or mode.
    #[error("capability: {0}")]
    Capability(String),
    /// Training produced a non-finite loss or parameter.
    #[error("divergence at epoch {epoch}: {msg}")]
    Divergence { epoch: usize, msg: String },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code: 2 validation, 3 capability, 4 divergence, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Validation(_) | Error::Checkpoint(_) | Error::Kendall(_) => 2,
            Error::Capability(_) => 3,
            Error::Divergence { .. } | Error::Tensor(TensorError::NonFinite { .. }) => 4,
            Error::Tensor(_) => 2,
            Error::Io(_) | Error::Json(_) => 1,
        }
    }
}

pub(crate) fn validation(msg: impl Into<String>) -> Error {
    Error::Validation(msg.into())
}
