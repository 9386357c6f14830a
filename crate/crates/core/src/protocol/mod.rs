//! Capture protocol: wire framing, per-stream session logs, replay, and the
//! TCP hub that multiple sensor clients stream into.

mod hub;
mod session;
mod wire;

use thiserror::Error;

pub use hub::{run_hub, spawn_hub, HubClient, HubHandle, HubStats, ShutdownSignal};
pub use session::{replay_session, RawSession, Replay, SessionHeader, SESSION_DIR_ENV, SESSION_FORMAT_VERSION};
pub use wire::{
    decode_record, decode_stream, encode_record, Payload, RecordDecoder, StreamKind, WireRecord, HEADER_LEN, MAGIC,
    MAX_PAYLOAD,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProtocolError {
    #[error("bad magic (expected \"EXU1\")")]
    BadMagic,
    #[error("truncated record: need {needed} bytes, have {available}")]
    TruncatedRecord { needed: usize, available: usize },
    #[error("payload of {0} bytes exceeds the 1 MiB limit")]
    OversizePayload(usize),
    #[error("unknown stream id {0}")]
    UnknownStream(u8),
    #[error("malformed {kind:?} payload: {reason}")]
    MalformedPayload { kind: StreamKind, reason: String },
    #[error("non-finite timestamp")]
    NonFiniteTimestamp,
    #[error("{stream} log corrupt at byte {offset}: {reason}")]
    CorruptLog { stream: String, offset: u64, reason: String },
    #[error("{stream} record at t={t} does not advance past t={last}")]
    OutOfOrder { stream: String, t: f64, last: f64 },
    #[error("session header: {0}")]
    BadHeader(String),
    #[error("{path}: {msg}")]
    Io { path: String, msg: String },
}

impl ProtocolError {
    pub fn code(&self) -> &'static str {
        match self {
            ProtocolError::BadMagic => "BadMagic",
            ProtocolError::TruncatedRecord { .. } => "TruncatedRecord",
            ProtocolError::OversizePayload(_) => "OversizePayload",
            ProtocolError::UnknownStream(_) => "UnknownStream",
            ProtocolError::MalformedPayload { .. } => "MalformedPayload",
            ProtocolError::NonFiniteTimestamp => "NonFiniteTimestamp",
            ProtocolError::CorruptLog { .. } => "CorruptLog",
            ProtocolError::OutOfOrder { .. } => "OutOfOrder",
            ProtocolError::BadHeader(_) => "BadHeader",
            ProtocolError::Io { .. } => "IoError",
        }
    }

    pub(crate) fn io(path: &std::path::Path, e: std::io::Error) -> Self {
        ProtocolError::Io { path: path.display().to_string(), msg: e.to_string() }
    }
}
