use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Result<T, E = ProtocolError> = std::result::Result<T, E>;

/// Machine-readable reason carried in ERROR frames.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    Malformed,
    UnknownType,
    UnknownSession,
    Phase,
    Replay,
    Unauthorized,
    Data,
    Authenticity,
    Internal,
}

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed frame: {0}")]
    Malformed(String),
    #[error("unknown session {0:032x}")]
    UnknownSession(u128),
    #[error("session phase violation: {0}")]
    Phase(String),
    #[error("garbled input replayed for session {0:032x}")]
    Replay(u128),
    #[error("unauthorized: {0}")]
    Unauthorized(String),
    #[error(transparent)]
    Core(#[from] dash_core::Error),
    #[error("config: {0}")]
    Config(String),
    #[error("remote error ({code:?}): {message}")]
    Remote { code: ErrorCode, message: String },
}

impl ProtocolError {
    pub fn code(&self) -> ErrorCode {
        match self {
            ProtocolError::Io(_) | ProtocolError::Config(_) => ErrorCode::Internal,
            ProtocolError::Malformed(_) => ErrorCode::Malformed,
            ProtocolError::UnknownSession(_) => ErrorCode::UnknownSession,
            ProtocolError::Phase(_) => ErrorCode::Phase,
            ProtocolError::Replay(_) => ErrorCode::Replay,
            ProtocolError::Unauthorized(_) => ErrorCode::Unauthorized,
            ProtocolError::Core(dash_core::Error::Authenticity(_)) => ErrorCode::Authenticity,
            ProtocolError::Core(_) => ErrorCode::Data,
            ProtocolError::Remote { code, .. } => *code,
        }
    }

    /// True when a garbled output failed authentication, locally or remotely.
    pub fn is_authenticity(&self) -> bool {
        self.code() == ErrorCode::Authenticity
    }
}
