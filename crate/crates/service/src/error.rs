use fmea_bn::{CompileError, InferenceError, NetworkError};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("{kind} {id:?} not found")]
    NotFound { kind: &'static str, id: String },
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Compile(#[from] CompileError),
    #[error(transparent)]
    Inference(#[from] InferenceError),
    /// Request body or argument that cannot be used as given.
    #[error("invalid request: {0}")]
    Invalid(String),
    /// The entity is in a state that forbids the operation.
    #[error("{0}")]
    Conflict(String),
    #[error("storage error: {0}")]
    Storage(#[from] std::io::Error),
    #[error("corrupt event log {path}: {message}")]
    Corrupt { path: String, message: String },
    #[error("cell table: {0}")]
    Cells(String),
}

impl ServiceError {
    pub(crate) fn not_found(kind: &'static str, id: &str) -> Self {
        ServiceError::NotFound {
            kind,
            id: id.to_string(),
        }
    }

    /// Stable machine-readable error code.
    pub fn code(&self) -> &'static str {
        match self {
            ServiceError::NotFound { .. } => "not_found",
            ServiceError::Network(_) => "invalid_network",
            ServiceError::Compile(_) => "compile_failed",
            ServiceError::Inference(InferenceError::ImpossibleEvidence) => "impossible_evidence",
            ServiceError::Inference(InferenceError::ConflictingEvidence { .. }) => {
                "conflicting_evidence"
            }
            ServiceError::Inference(_) => "invalid_evidence",
            ServiceError::Invalid(_) => "invalid_request",
            ServiceError::Conflict(_) => "conflict",
            ServiceError::Storage(_) | ServiceError::Corrupt { .. } => "storage",
            ServiceError::Cells(_) => "cell_table",
        }
    }
}

pub type Result<T, E = ServiceError> = std::result::Result<T, E>;
