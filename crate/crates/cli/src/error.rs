//! One error type for the whole CLI with an exhaustive exit-code mapping.

use crate::ingest::IngestError;
use crate::trace_io::TraceIoError;
use splitglm_core::attack::AttackError;
use splitglm_core::fit::FitError;
use splitglm_core::stderr::StderrError;
use splitglm_protocol::{ProtocolError, TransportError};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid usage: {0}")]
    Usage(String),
    #[error(transparent)]
    Data(#[from] IngestError),
    #[error("target digests differ: the two parties do not hold identically ordered targets")]
    DigestMismatch,
    #[error("protocol version mismatch ({0})")]
    VersionMismatch(String),
    #[error("authentication failure: check that both parties hold the same pre-shared key")]
    AuthFailure,
    #[error("connect failure: {0}")]
    ConnectFailure(String),
    #[error("transport failure: {0}")]
    TransportFailure(String),
    #[error("session parameter mismatch: {0}")]
    ConfigMismatch(String),
    #[error("peer aborted: {0}")]
    PeerAbort(String),
    #[error("protocol violation: {0}")]
    ProtocolViolation(String),
    #[error("singular design: {0}")]
    Singular(String),
    #[error("family/target error: {0}")]
    Family(String),
    #[error("standard-error recovery failed: {0}")]
    Stderr(String),
    #[error("attack error: {0}")]
    Attack(String),
    #[error("trace file error: {0}")]
    TraceIo(#[from] TraceIoError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Exit code used when the session finished without converging (results are
/// still written).
pub const EXIT_NOT_CONVERGED: i32 = 12;

impl CliError {
    /// Stable exit codes, one per error class; documented in the README.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Data(_) => 3,
            CliError::DigestMismatch => 4,
            CliError::VersionMismatch(_) => 5,
            CliError::AuthFailure => 6,
            CliError::ConnectFailure(_) => 7,
            CliError::TransportFailure(_) => 8,
            CliError::ConfigMismatch(_) => 9,
            CliError::PeerAbort(_) => 10,
            CliError::ProtocolViolation(_) => 11,
            // 12 is EXIT_NOT_CONVERGED, not an error variant
            CliError::Singular(_) => 13,
            CliError::Family(_) => 14,
            CliError::Stderr(_) => 15,
            CliError::Attack(_) => 16,
            CliError::TraceIo(_) => 17,
            CliError::Io(_) => 18,
        }
    }
}

impl From<ProtocolError> for CliError {
    fn from(e: ProtocolError) -> Self {
        match e {
            ProtocolError::Transport(t) => t.into(),
            ProtocolError::DigestMismatch => CliError::DigestMismatch,
            ProtocolError::VersionMismatch { ours, theirs } => {
                CliError::VersionMismatch(format!("ours {ours}, theirs {theirs}"))
            }
            ProtocolError::ConfigMismatch(m) => CliError::ConfigMismatch(m),
            ProtocolError::PeerAbort(m) => CliError::PeerAbort(m),
            ProtocolError::UnexpectedMessage { expected, got, iteration } => {
                CliError::ProtocolViolation(format!(
                    "expected {expected}, got {got} at iteration {iteration}"
                ))
            }
            ProtocolError::InvalidConfig(m) => CliError::Usage(m),
            ProtocolError::Fit(f) => f.into(),
            ProtocolError::Family(f) => CliError::Family(f.to_string()),
        }
    }
}

impl From<TransportError> for CliError {
    fn from(e: TransportError) -> Self {
        match e {
            TransportError::AuthFailure => CliError::AuthFailure,
            TransportError::ConnectFailure(m) => CliError::ConnectFailure(m),
            TransportError::TransportFailure(m) => CliError::TransportFailure(m),
            TransportError::NonceReplay { .. }
            | TransportError::FrameTooLarge
            | TransportError::Decode(_) => CliError::ProtocolViolation(e.to_string()),
        }
    }
}

impl From<FitError> for CliError {
    fn from(e: FitError) -> Self {
        match e {
            FitError::SingularGram { .. } | FitError::DegenerateColumn => {
                CliError::Singular(e.to_string())
            }
            FitError::Family(f) => CliError::Family(f.to_string()),
            other => CliError::Usage(other.to_string()),
        }
    }
}

impl From<StderrError> for CliError {
    fn from(e: StderrError) -> Self {
        CliError::Stderr(e.to_string())
    }
}

impl From<AttackError> for CliError {
    fn from(e: AttackError) -> Self {
        CliError::Attack(e.to_string())
    }
}
