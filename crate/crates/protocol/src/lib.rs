//! Two-party secure block coordinate descent over an authenticated
//! encrypted channel: the distributed counterpart of the local engine in
//! `splitglm-core`, exchanging only prediction vectors.

pub mod session;
pub mod transport;
pub mod wire;

pub use session::{
    handshake, predict_joint, run_party, target_digest, AgreedSession, FitResult,
    ProtocolError, SeSummary, SessionConfig,
};
pub use transport::{
    accept_tcp, audit_frames, connect_tcp, loopback_pair, new_tap, Direction, LoopbackPair,
    PartyRole, SecureChannel, TapHandle, TransportError,
};
pub use wire::{HelloPayload, ProtocolMessage, PROTOCOL_VERSION};
