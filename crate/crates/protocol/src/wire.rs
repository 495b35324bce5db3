//! Wire encoding of protocol messages.
//!
//! Every message is laid out as
//! `{kind: u8, iteration: u32 LE, payload_length: u32 LE, payload}` and
//! travels inside the encrypted channel provided by [`crate::transport`].
//!
//! Payloads:
//! * `HELLO` / `HELLO_ACK` — protocol version `u16`, family tag `u8`,
//!   `N u64`, tolerance `f64`, requested minimum iterations `u32`, and the
//!   32-byte target digest, all little-endian.
//! * `PREDICTION` — `N` IEEE-754 binary64 little-endian values followed by
//!   one binary64 `max_delta`.
//! * `CONVERGED_FLAG` — empty.
//! * `DONE` — one byte, `1` when converged, `0` when stopped at the
//!   iteration cap.
//! * `ABORT` — UTF-8 reason text.

use thiserror::Error;

pub const PROTOCOL_VERSION: u16 = 1;

pub const KIND_HELLO: u8 = 1;
pub const KIND_HELLO_ACK: u8 = 2;
pub const KIND_PREDICTION: u8 = 3;
pub const KIND_CONVERGED_FLAG: u8 = 4;
pub const KIND_DONE: u8 = 5;
pub const KIND_ABORT: u8 = 6;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DecodeFailure {
    #[error("message truncated: needed {needed} bytes, had {have}")]
    Truncated { needed: usize, have: usize },
    #[error("unknown message kind {0}")]
    UnknownKind(u8),
    #[error("payload length mismatch: header says {declared}, body has {actual}")]
    LengthMismatch { declared: usize, actual: usize },
    #[error("prediction payload must be a whole number of values plus a delta")]
    MalformedPrediction,
    #[error("abort reason is not valid UTF-8")]
    BadAbortText,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HelloPayload {
    pub version: u16,
    pub family_tag: u8,
    pub n: u64,
    pub tolerance: f64,
    pub min_iterations: u32,
    pub target_digest: [u8; 32],
}

#[derive(Debug, Clone, PartialEq)]
pub enum ProtocolMessage {
    Hello(HelloPayload),
    HelloAck(HelloPayload),
    Prediction {
        iteration: u32,
        values: Vec<f64>,
        max_delta: f64,
    },
    ConvergedFlag {
        iteration: u32,
    },
    Done {
        iteration: u32,
        converged: bool,
    },
    Abort {
        iteration: u32,
        reason: String,
    },
}

impl ProtocolMessage {
    pub fn kind(&self) -> u8 {
        match self {
            ProtocolMessage::Hello(_) => KIND_HELLO,
            ProtocolMessage::HelloAck(_) => KIND_HELLO_ACK,
            ProtocolMessage::Prediction { .. } => KIND_PREDICTION,
            ProtocolMessage::ConvergedFlag { .. } => KIND_CONVERGED_FLAG,
            ProtocolMessage::Done { .. } => KIND_DONE,
            ProtocolMessage::Abort { .. } => KIND_ABORT,
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            ProtocolMessage::Hello(_) => "HELLO",
            ProtocolMessage::HelloAck(_) => "HELLO_ACK",
            ProtocolMessage::Prediction { .. } => "PREDICTION",
            ProtocolMessage::ConvergedFlag { .. } => "CONVERGED_FLAG",
            ProtocolMessage::Done { .. } => "DONE",
            ProtocolMessage::Abort { .. } => "ABORT",
        }
    }

    pub fn iteration(&self) -> u32 {
        match self {
            ProtocolMessage::Hello(_) | ProtocolMessage::HelloAck(_) => 0,
            ProtocolMessage::Prediction { iteration, .. }
            | ProtocolMessage::ConvergedFlag { iteration }
            | ProtocolMessage::Done { iteration, .. }
            | ProtocolMessage::Abort { iteration, .. } => *iteration,
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let payload = self.encode_payload();
        let mut out = Vec::with_capacity(9 + payload.len());
        out.push(self.kind());
        out.extend_from_slice(&self.iteration().to_le_bytes());
        out.extend_from_slice(&(payload.len() as u32).to_le_bytes());
        out.extend_from_slice(&payload);
        out
    }

    fn encode_payload(&self) -> Vec<u8> {
        match self {
            ProtocolMessage::Hello(h) | ProtocolMessage::HelloAck(h) => {
                let mut p = Vec::with_capacity(55);
                p.extend_from_slice(&h.version.to_le_bytes());
                p.push(h.family_tag);
                p.extend_from_slice(&h.n.to_le_bytes());
                p.extend_from_slice(&h.tolerance.to_le_bytes());
                p.extend_from_slice(&h.min_iterations.to_le_bytes());
                p.extend_from_slice(&h.target_digest);
                p
            }
            ProtocolMessage::Prediction { values, max_delta, .. } => {
                let mut p = Vec::with_capacity(8 * values.len() + 8);
                for v in values {
                    p.extend_from_slice(&v.to_le_bytes());
                }
                p.extend_from_slice(&max_delta.to_le_bytes());
                p
            }
            ProtocolMessage::ConvergedFlag { .. } => Vec::new(),
            ProtocolMessage::Done { converged, .. } => vec![u8::from(*converged)],
            ProtocolMessage::Abort { reason, .. } => reason.as_bytes().to_vec(),
        }
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, DecodeFailure> {
        if bytes.len() < 9 {
            return Err(DecodeFailure::Truncated { needed: 9, have: bytes.len() });
        }
        let kind = bytes[0];
        let iteration = u32::from_le_bytes(bytes[1..5].try_into().unwrap());
        let declared = u32::from_le_bytes(bytes[5..9].try_into().unwrap()) as usize;
        let payload = &bytes[9..];
        if payload.len() != declared {
            return Err(DecodeFailure::LengthMismatch {
                declared,
                actual: payload.len(),
            });
        }
        match kind {
            KIND_HELLO | KIND_HELLO_ACK => {
                if payload.len() != 55 {
                    return Err(DecodeFailure::Truncated { needed: 55, have: payload.len() });
                }
                let h = HelloPayload {
                    version: u16::from_le_bytes(payload[0..2].try_into().unwrap()),
                    family_tag: payload[2],
                    n: u64::from_le_bytes(payload[3..11].try_into().unwrap()),
                    tolerance: f64::from_le_bytes(payload[11..19].try_into().unwrap()),
                    min_iterations: u32::from_le_bytes(payload[19..23].try_into().unwrap()),
                    target_digest: payload[23..55].try_into().unwrap(),
                };
                Ok(if kind == KIND_HELLO {
                    ProtocolMessage::Hello(h)
                } else {
                    ProtocolMessage::HelloAck(h)
                })
            }
            KIND_PREDICTION => {
                if payload.len() < 8 || !payload.len().is_multiple_of(8) {
                    return Err(DecodeFailure::MalformedPrediction);
                }
                let nvals = payload.len() / 8 - 1;
                let mut values = Vec::with_capacity(nvals);
                for i in 0..nvals {
                    values.push(f64::from_le_bytes(
                        payload[8 * i..8 * i + 8].try_into().unwrap(),
                    ));
                }
                let max_delta =
                    f64::from_le_bytes(payload[8 * nvals..].try_into().unwrap());
                Ok(ProtocolMessage::Prediction { iteration, values, max_delta })
            }
            KIND_CONVERGED_FLAG => {
                if !payload.is_empty() {
                    return Err(DecodeFailure::LengthMismatch {
                        declared: 0,
                        actual: payload.len(),
                    });
                }
                Ok(ProtocolMessage::ConvergedFlag { iteration })
            }
            KIND_DONE => {
                if payload.len() != 1 {
                    return Err(DecodeFailure::LengthMismatch {
                        declared: 1,
                        actual: payload.len(),
                    });
                }
                Ok(ProtocolMessage::Done { iteration, converged: payload[0] == 1 })
            }
            KIND_ABORT => {
                let reason = std::str::from_utf8(payload)
                    .map_err(|_| DecodeFailure::BadAbortText)?
                    .to_string();
                Ok(ProtocolMessage::Abort { iteration, reason })
            }
            other => Err(DecodeFailure::UnknownKind(other)),
        }
    }
}
