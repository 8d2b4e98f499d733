//! Typed payloads carried by frames. Vectors travel as little-endian `f32`.

use thiserror::Error;

use crate::wire::{put_str16, ReadError, Reader};

use super::frame::{decode_frame, encode_frame, Frame, FrameError, MsgType};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MessageError {
    #[error(transparent)]
    Frame(#[from] FrameError),
    #[error("malformed {msg_type} payload: {reason}")]
    Malformed { msg_type: MsgType, reason: String },
}

/// Raw sensor sample, zero-padded to a nominal on-wire size.
#[derive(Debug, Clone, PartialEq)]
pub struct RawSample {
    pub sample_id: u64,
    pub values: Vec<f32>,
    pub padding: u32,
}

impl RawSample {
    /// Pads so the payload is exactly `target_bytes` long when possible.
    pub fn padded_to(sample_id: u64, values: Vec<f32>, target_bytes: usize) -> Self {
        let body = 8 + 4 + 4 * values.len() + 4;
        Self {
            sample_id,
            values,
            padding: target_bytes.saturating_sub(body) as u32,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Message {
    QueryKnowledge(RawSample),
    PseudoResponse {
        sample_id: u64,
        class_name: String,
        confidence: f32,
        text_embedding: Vec<f32>,
    },
    InferRequest(RawSample),
    InferResponse {
        sample_id: u64,
        class_name: String,
        similarity: f32,
    },
    ModelUpdate {
        version: u64,
        checkpoint: Vec<u8>,
    },
    PoolUpdate {
        prompt: String,
        pool: Vec<u8>,
    },
    BwProbe {
        filler: Vec<u8>,
    },
    ProbeAck {
        received_bytes: u64,
    },
}

fn put_f32s(out: &mut Vec<u8>, values: &[f32]) {
    out.extend_from_slice(&(values.len() as u32).to_le_bytes());
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn read_f32s(cur: &mut Reader<'_>) -> Result<Vec<f32>, ReadError> {
    let n = cur.u32()? as usize;
    if cur.remaining() < 4 * n {
        return Err(ReadError::Eof { offset: cur.position(), needed: 4 * n - cur.remaining() });
    }
    (0..n).map(|_| cur.f32()).collect()
}

fn put_raw(out: &mut Vec<u8>, s: &RawSample) {
    out.extend_from_slice(&s.sample_id.to_le_bytes());
    put_f32s(out, &s.values);
    out.extend_from_slice(&s.padding.to_le_bytes());
    out.resize(out.len() + s.padding as usize, 0);
}

impl Message {
    pub fn msg_type(&self) -> MsgType {
        match self {
            Message::QueryKnowledge(_) => MsgType::QueryKnowledge,
            Message::PseudoResponse { .. } => MsgType::PseudoResponse,
            Message::InferRequest(_) => MsgType::InferRequest,
            Message::InferResponse { .. } => MsgType::InferResponse,
            Message::ModelUpdate { .. } => MsgType::ModelUpdate,
            Message::PoolUpdate { .. } => MsgType::PoolUpdate,
            Message::BwProbe { .. } => MsgType::BwProbe,
            Message::ProbeAck { .. } => MsgType::ProbeAck,
        }
    }

    pub fn payload(&self) -> Vec<u8> {
        let mut out = Vec::new();
        match self {
            Message::QueryKnowledge(s) | Message::InferRequest(s) => put_raw(&mut out, s),
            Message::PseudoResponse { sample_id, class_name, confidence, text_embedding } => {
                out.extend_from_slice(&sample_id.to_le_bytes());
                put_str16(&mut out, class_name);
                out.extend_from_slice(&confidence.to_le_bytes());
                put_f32s(&mut out, text_embedding);
            }
            Message::InferResponse { sample_id, class_name, similarity } => {
                out.extend_from_slice(&sample_id.to_le_bytes());
                put_str16(&mut out, class_name);
                out.extend_from_slice(&similarity.to_le_bytes());
            }
            Message::ModelUpdate { version, checkpoint } => {
                out.extend_from_slice(&version.to_le_bytes());
                out.extend_from_slice(checkpoint);
            }
            Message::PoolUpdate { prompt, pool } => {
                put_str16(&mut out, prompt);
                out.extend_from_slice(pool);
            }
            Message::BwProbe { filler } => out.extend_from_slice(filler),
            Message::ProbeAck { received_bytes } => out.extend_from_slice(&received_bytes.to_le_bytes()),
        }
        out
    }

    pub fn encode(&self) -> Result<Vec<u8>, MessageError> {
        Ok(encode_frame(self.msg_type(), &self.payload())?)
    }

    pub fn from_frame(frame: &Frame) -> Result<Self, MessageError> {
        let t = frame.msg_type;
        let malformed = |e: ReadError| MessageError::Malformed { msg_type: t, reason: e.to_string() };
        let mut cur = Reader::new(&frame.payload);
        let msg = match t {
            MsgType::QueryKnowledge | MsgType::InferRequest => {
                let sample_id = cur.u64().map_err(malformed)?;
                let values = read_f32s(&mut cur).map_err(malformed)?;
                let padding = cur.u32().map_err(malformed)?;
                if cur.bytes(padding as usize).map_err(malformed)?.iter().any(|&b| b != 0) {
                    return Err(MessageError::Malformed { msg_type: t, reason: "non-zero padding".into() });
                }
                let s = RawSample { sample_id, values, padding };
                if t == MsgType::QueryKnowledge {
                    Message::QueryKnowledge(s)
                } else {
                    Message::InferRequest(s)
                }
            }
            MsgType::PseudoResponse => Message::PseudoResponse {
                sample_id: cur.u64().map_err(malformed)?,
                class_name: cur.str16().map_err(malformed)?.to_owned(),
                confidence: cur.f32().map_err(malformed)?,
                text_embedding: read_f32s(&mut cur).map_err(malformed)?,
            },
            MsgType::InferResponse => Message::InferResponse {
                sample_id: cur.u64().map_err(malformed)?,
                class_name: cur.str16().map_err(malformed)?.to_owned(),
                similarity: cur.f32().map_err(malformed)?,
            },
            MsgType::ModelUpdate => {
                let version = cur.u64().map_err(malformed)?;
                let rest = cur.remaining();
                Message::ModelUpdate { version, checkpoint: cur.bytes(rest).map_err(malformed)?.to_vec() }
            }
            MsgType::PoolUpdate => {
                let prompt = cur.str16().map_err(malformed)?.to_owned();
                let rest = cur.remaining();
                Message::PoolUpdate { prompt, pool: cur.bytes(rest).map_err(malformed)?.to_vec() }
            }
            MsgType::BwProbe => {
                let rest = cur.remaining();
                Message::BwProbe { filler: cur.bytes(rest).map_err(malformed)?.to_vec() }
            }
            MsgType::ProbeAck => Message::ProbeAck { received_bytes: cur.u64().map_err(malformed)? },
        };
        cur.finish().map_err(malformed)?;
        Ok(msg)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, MessageError> {
        Self::from_frame(&decode_frame(bytes)?)
    }
}
