//! Authenticated, encrypted, ordered message channel between the two
//! parties.
//!
//! Frames are `{nonce: 12 bytes, ciphertext_length: u32 LE, ciphertext}`
//! where the ciphertext is ChaCha20-Poly1305 over one encoded
//! [`ProtocolMessage`]. Each direction uses its own key, derived from
//! `(psk, session_id, direction)` with HKDF-SHA256, and a strictly
//! increasing counter nonce; any nonce that is not the expected next value
//! aborts the session.
//!
//! The initiator announces the 16-byte `session_id` in the clear before the
//! first frame (it is a salt, not a secret); everything after is encrypted.

use crate::wire::{DecodeFailure, ProtocolMessage};
use chacha20poly1305::aead::{Aead, KeyInit};
use chacha20poly1305::{ChaCha20Poly1305, Key, Nonce};
use hkdf::Hkdf;
use sha2::Sha256;
use std::io::{Read, Write};
use std::net::{TcpListener, TcpStream, ToSocketAddrs};
use std::sync::mpsc::{channel, Receiver, Sender};
use std::sync::{Arc, Mutex};
use thiserror::Error;

/// Frames larger than this are rejected outright.
pub const MAX_FRAME_BYTES: usize = 256 * 1024 * 1024;

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("connect failure: {0}")]
    ConnectFailure(String),
    #[error("authentication failure: frame did not decrypt under the session key")]
    AuthFailure,
    #[error("transport failure: {0}")]
    TransportFailure(String),
    #[error("nonce out of order: expected {expected}, got {got}")]
    NonceReplay { expected: u64, got: u64 },
    #[error("frame exceeds {MAX_FRAME_BYTES} bytes")]
    FrameTooLarge,
    #[error("decode failure after authentication: {0}")]
    Decode(#[from] DecodeFailure),
}

/// Which side of the session this endpoint plays. The initiator performs
/// the first coefficient update and speaks first on the wire.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PartyRole {
    Initiator,
    Responder,
}

impl PartyRole {
    pub fn peer(self) -> Self {
        match self {
            PartyRole::Initiator => PartyRole::Responder,
            PartyRole::Responder => PartyRole::Initiator,
        }
    }
}

/// Direction of a frame flow, used for key separation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    InitiatorToResponder,
    ResponderToInitiator,
}

impl Direction {
    fn info(self) -> &'static [u8] {
        match self {
            Direction::InitiatorToResponder => b"splitglm-v1 initiator->responder",
            Direction::ResponderToInitiator => b"splitglm-v1 responder->initiator",
        }
    }

    fn outbound_for(role: PartyRole) -> Self {
        match role {
            PartyRole::Initiator => Direction::InitiatorToResponder,
            PartyRole::Responder => Direction::ResponderToInitiator,
        }
    }
}

/// Per-direction session key from `(psk, session_id, direction)`.
pub fn derive_direction_key(
    psk: &[u8; 32],
    session_id: &[u8; 16],
    direction: Direction,
) -> [u8; 32] {
    let hk = Hkdf::<Sha256>::new(Some(session_id), psk);
    let mut okm = [0u8; 32];
    hk.expand(direction.info(), &mut okm)
        .expect("32 bytes is a valid HKDF output length");
    okm
}

fn nonce_bytes(counter: u64) -> [u8; 12] {
    let mut n = [0u8; 12];
    n[..8].copy_from_slice(&counter.to_le_bytes());
    n
}

/// Raw ordered byte-frame carrier; implementations must preserve frame
/// boundaries, order, and exactly-once delivery.
pub trait FrameCarrier: Send {
    fn send_frame(&mut self, frame: Vec<u8>) -> Result<(), TransportError>;
    fn recv_frame(&mut self) -> Result<Vec<u8>, TransportError>;
}

/// Shared capture of the raw (encrypted) frames crossing a channel, for
/// audits of what actually goes over the wire.
pub type TapHandle = Arc<Mutex<Vec<Vec<u8>>>>;

pub fn new_tap() -> TapHandle {
    Arc::new(Mutex::new(Vec::new()))
}

/// Encrypting endpoint over any frame carrier: one sender and one receiver
/// side, each with its own key and counter.
pub struct SecureChannel<C> {
    carrier: C,
    seal: ChaCha20Poly1305,
    open: ChaCha20Poly1305,
    send_counter: u64,
    recv_counter: u64,
    sent_tap: Option<TapHandle>,
}

impl<C: FrameCarrier> SecureChannel<C> {
    pub fn new(
        carrier: C,
        psk: &[u8; 32],
        session_id: &[u8; 16],
        role: PartyRole,
    ) -> Self {
        let out_dir = Direction::outbound_for(role);
        let in_dir = Direction::outbound_for(role.peer());
        let seal_key = derive_direction_key(psk, session_id, out_dir);
        let open_key = derive_direction_key(psk, session_id, in_dir);
        Self {
            carrier,
            seal: ChaCha20Poly1305::new(Key::from_slice(&seal_key)),
            open: ChaCha20Poly1305::new(Key::from_slice(&open_key)),
            send_counter: 0,
            recv_counter: 0,
            sent_tap: None,
        }
    }

    pub fn with_tap(mut self, tap: TapHandle) -> Self {
        self.sent_tap = Some(tap);
        self
    }

    pub fn send(&mut self, msg: &ProtocolMessage) -> Result<(), TransportError> {
        let plaintext = msg.encode();
        let nonce = nonce_bytes(self.send_counter);
        let ciphertext = self
            .seal
            .encrypt(Nonce::from_slice(&nonce), plaintext.as_slice())
            .map_err(|_| TransportError::TransportFailure("encryption failed".into()))?;
        if ciphertext.len() > MAX_FRAME_BYTES {
            return Err(TransportError::FrameTooLarge);
        }
        self.send_counter += 1;
        let mut frame = Vec::with_capacity(16 + ciphertext.len());
        frame.extend_from_slice(&nonce);
        frame.extend_from_slice(&(ciphertext.len() as u32).to_le_bytes());
        frame.extend_from_slice(&ciphertext);
        if let Some(tap) = &self.sent_tap {
            tap.lock().unwrap().push(frame.clone());
        }
        self.carrier.send_frame(frame)
    }

    pub fn receive(&mut self) -> Result<ProtocolMessage, TransportError> {
        let frame = self.carrier.recv_frame()?;
        open_frame(&self.open, &mut self.recv_counter, &frame)
    }
}

fn open_frame(
    cipher: &ChaCha20Poly1305,
    expected_counter: &mut u64,
    frame: &[u8],
) -> Result<ProtocolMessage, TransportError> {
    if frame.len() < 16 {
        return Err(TransportError::TransportFailure(format!(
            "frame too short: {} bytes",
            frame.len()
        )));
    }
    let nonce: [u8; 12] = frame[..12].try_into().unwrap();
    let declared = u32::from_le_bytes(frame[12..16].try_into().unwrap()) as usize;
    if declared > MAX_FRAME_BYTES {
        return Err(TransportError::FrameTooLarge);
    }
    let body = &frame[16..];
    if body.len() != declared {
        return Err(TransportError::TransportFailure(format!(
            "frame length mismatch: header {declared}, body {}",
            body.len()
        )));
    }
    let got = u64::from_le_bytes(nonce[..8].try_into().unwrap());
    if nonce[8..] != [0u8; 4] || got != *expected_counter {
        return Err(TransportError::NonceReplay { expected: *expected_counter, got });
    }
    let plaintext = cipher
        .decrypt(Nonce::from_slice(&nonce), body)
        .map_err(|_| TransportError::AuthFailure)?;
    *expected_counter += 1;
    Ok(ProtocolMessage::decode(&plaintext)?)
}

/// Decrypt a tapped frame sequence for auditing; the caller supplies the
/// session secrets, so this works only for sessions it could already read.
pub fn audit_frames(
    frames: &[Vec<u8>],
    psk: &[u8; 32],
    session_id: &[u8; 16],
    direction: Direction,
) -> Result<Vec<ProtocolMessage>, TransportError> {
    let key = derive_direction_key(psk, session_id, direction);
    let cipher = ChaCha20Poly1305::new(Key::from_slice(&key));
    let mut counter = 0u64;
    frames
        .iter()
        .map(|f| open_frame(&cipher, &mut counter, f))
        .collect()
}

// ---------------------------------------------------------------------------
// In-process loopback

/// One end of an in-process frame pipe.
pub struct LoopbackCarrier {
    tx: Sender<Vec<u8>>,
    rx: Receiver<Vec<u8>>,
}

impl FrameCarrier for LoopbackCarrier {
    fn send_frame(&mut self, frame: Vec<u8>) -> Result<(), TransportError> {
        self.tx
            .send(frame)
            .map_err(|_| TransportError::TransportFailure("peer closed".into()))
    }

    fn recv_frame(&mut self) -> Result<Vec<u8>, TransportError> {
        self.rx
            .recv()
            .map_err(|_| TransportError::TransportFailure("peer closed".into()))
    }
}

/// Connected pair of loopback endpoints. Each side gets its own psk so
/// tests can exercise key mismatches; healthy sessions pass the same psk
/// twice. The taps capture the encrypted frames each side sends.
pub struct LoopbackPair {
    pub initiator: SecureChannel<LoopbackCarrier>,
    pub responder: SecureChannel<LoopbackCarrier>,
    pub initiator_sent: TapHandle,
    pub responder_sent: TapHandle,
}

pub fn loopback_pair(
    initiator_psk: &[u8; 32],
    responder_psk: &[u8; 32],
    session_id: &[u8; 16],
) -> LoopbackPair {
    let (a_tx, b_rx) = channel();
    let (b_tx, a_rx) = channel();
    let initiator_sent = new_tap();
    let responder_sent = new_tap();
    let initiator = SecureChannel::new(
        LoopbackCarrier { tx: a_tx, rx: a_rx },
        initiator_psk,
        session_id,
        PartyRole::Initiator,
    )
    .with_tap(initiator_sent.clone());
    let responder = SecureChannel::new(
        LoopbackCarrier { tx: b_tx, rx: b_rx },
        responder_psk,
        session_id,
        PartyRole::Responder,
    )
    .with_tap(responder_sent.clone());
    LoopbackPair { initiator, responder, initiator_sent, responder_sent }
}

// ---------------------------------------------------------------------------
// TCP

pub struct TcpCarrier {
    stream: TcpStream,
}

impl FrameCarrier for TcpCarrier {
    fn send_frame(&mut self, frame: Vec<u8>) -> Result<(), TransportError> {
        self.stream
            .write_all(&frame)
            .map_err(|e| TransportError::TransportFailure(e.to_string()))
    }

    fn recv_frame(&mut self) -> Result<Vec<u8>, TransportError> {
        let mut header = [0u8; 16];
        self.stream
            .read_exact(&mut header)
            .map_err(|e| TransportError::TransportFailure(e.to_string()))?;
        let len = u32::from_le_bytes(header[12..16].try_into().unwrap()) as usize;
        if len > MAX_FRAME_BYTES {
            return Err(TransportError::FrameTooLarge);
        }
        let mut frame = vec![0u8; 16 + len];
        frame[..16].copy_from_slice(&header);
        self.stream
            .read_exact(&mut frame[16..])
            .map_err(|e| TransportError::TransportFailure(e.to_string()))?;
        Ok(frame)
    }
}

/// Dial a responder, announce the session id in the clear, and wrap the
/// stream in the encrypted channel.
pub fn connect_tcp<A: ToSocketAddrs>(
    addr: A,
    psk: &[u8; 32],
    session_id: [u8; 16],
) -> Result<SecureChannel<TcpCarrier>, TransportError> {
    let mut stream =
        TcpStream::connect(addr).map_err(|e| TransportError::ConnectFailure(e.to_string()))?;
    stream
        .set_nodelay(true)
        .map_err(|e| TransportError::ConnectFailure(e.to_string()))?;
    stream
        .write_all(&session_id)
        .map_err(|e| TransportError::TransportFailure(e.to_string()))?;
    Ok(SecureChannel::new(
        TcpCarrier { stream },
        psk,
        &session_id,
        PartyRole::Initiator,
    ))
}

/// Accept one session: read the cleartext session id, then speak encrypted
/// frames. Returns the channel and the session id the initiator announced.
pub fn accept_tcp(
    listener: &TcpListener,
    psk: &[u8; 32],
) -> Result<(SecureChannel<TcpCarrier>, [u8; 16]), TransportError> {
    let (mut stream, _peer) = listener
        .accept()
        .map_err(|e| TransportError::ConnectFailure(e.to_string()))?;
    stream
        .set_nodelay(true)
        .map_err(|e| TransportError::ConnectFailure(e.to_string()))?;
    let mut session_id = [0u8; 16];
    stream
        .read_exact(&mut session_id)
        .map_err(|e| TransportError::TransportFailure(e.to_string()))?;
    Ok((
        SecureChannel::new(TcpCarrier { stream }, psk, &session_id, PartyRole::Responder),
        session_id,
    ))
}
