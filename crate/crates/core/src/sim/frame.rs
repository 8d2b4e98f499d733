//! `EFM1` framing: 4-byte magic, 1-byte message type, u32 LE payload length,
//! payload.

use std::fmt;

use thiserror::Error;

pub const MAGIC: [u8; 4] = *b"EFM1";
pub const HEADER_LEN: usize = 9;
pub const MAX_PAYLOAD: usize = 16 * 1024 * 1024;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FrameError {
    #[error("bad magic {0:02x?}")]
    BadMagic([u8; 4]),
    #[error("unknown message type 0x{0:02x}")]
    UnknownType(u8),
    #[error("truncated frame: need {needed} bytes, have {have}")]
    Truncated { needed: usize, have: usize },
    #[error("payload of {0} bytes exceeds the 16 MiB limit")]
    Oversize(usize),
    #[error("{0} bytes after the end of the frame")]
    TrailingBytes(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum MsgType {
    QueryKnowledge = 0x01,
    PseudoResponse = 0x02,
    InferRequest = 0x03,
    InferResponse = 0x04,
    ModelUpdate = 0x05,
    PoolUpdate = 0x06,
    BwProbe = 0x07,
    ProbeAck = 0x08,
}

impl MsgType {
    pub const ALL: [MsgType; 8] = [
        MsgType::QueryKnowledge,
        MsgType::PseudoResponse,
        MsgType::InferRequest,
        MsgType::InferResponse,
        MsgType::ModelUpdate,
        MsgType::PoolUpdate,
        MsgType::BwProbe,
        MsgType::ProbeAck,
    ];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn name(self) -> &'static str {
        match self {
            MsgType::QueryKnowledge => "QUERY_KNOWLEDGE",
            MsgType::PseudoResponse => "PSEUDO_RESPONSE",
            MsgType::InferRequest => "INFER_REQUEST",
            MsgType::InferResponse => "INFER_RESPONSE",
            MsgType::ModelUpdate => "MODEL_UPDATE",
            MsgType::PoolUpdate => "POOL_UPDATE",
            MsgType::BwProbe => "BW_PROBE",
            MsgType::ProbeAck => "PROBE_ACK",
        }
    }
}

impl TryFrom<u8> for MsgType {
    type Error = FrameError;

    fn try_from(code: u8) -> Result<Self, FrameError> {
        MsgType::ALL
            .into_iter()
            .find(|t| t.code() == code)
            .ok_or(FrameError::UnknownType(code))
    }
}

impl fmt::Display for MsgType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub msg_type: MsgType,
    pub payload: Vec<u8>,
}

impl Frame {
    pub fn encoded_len(&self) -> usize {
        HEADER_LEN + self.payload.len()
    }
}

pub fn encode_frame(msg_type: MsgType, payload: &[u8]) -> Result<Vec<u8>, FrameError> {
    if payload.len() > MAX_PAYLOAD {
        return Err(FrameError::Oversize(payload.len()));
    }
    let mut out = Vec::with_capacity(HEADER_LEN + payload.len());
    out.extend_from_slice(&MAGIC);
    out.push(msg_type.code());
    out.extend_from_slice(&(payload.len() as u32).to_le_bytes());
    out.extend_from_slice(payload);
    Ok(out)
}

/// Validates a header and returns the type and payload length.
pub fn decode_header(header: &[u8; HEADER_LEN]) -> Result<(MsgType, usize), FrameError> {
    let magic: [u8; 4] = header[..4].try_into().expect("slice of length 4");
    if magic != MAGIC {
        return Err(FrameError::BadMagic(magic));
    }
    let msg_type = MsgType::try_from(header[4])?;
    let len = u32::from_le_bytes(header[5..9].try_into().expect("slice of length 4")) as usize;
    if len > MAX_PAYLOAD {
        return Err(FrameError::Oversize(len));
    }
    Ok((msg_type, len))
}

/// Decodes one frame from the front of `bytes`, returning it and the number
/// of bytes consumed.
pub fn decode_prefix(bytes: &[u8]) -> Result<(Frame, usize), FrameError> {
    let header: &[u8; HEADER_LEN] = bytes
        .get(..HEADER_LEN)
        .and_then(|h| h.try_into().ok())
        .ok_or(FrameError::Truncated { needed: HEADER_LEN, have: bytes.len() })?;
    let (msg_type, len) = decode_header(header)?;
    let end = HEADER_LEN + len;
    if bytes.len() < end {
        return Err(FrameError::Truncated { needed: end, have: bytes.len() });
    }
    Ok((
        Frame {
            msg_type,
            payload: bytes[HEADER_LEN..end].to_vec(),
        },
        end,
    ))
}

/// Decodes exactly one complete frame.
pub fn decode_frame(bytes: &[u8]) -> Result<Frame, FrameError> {
    let (frame, used) = decode_prefix(bytes)?;
    if used != bytes.len() {
        return Err(FrameError::TrailingBytes(bytes.len() - used));
    }
    Ok(frame)
}
