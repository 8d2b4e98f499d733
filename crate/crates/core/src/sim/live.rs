//! The frame codec over real byte streams, plus a cloud-side request
//! handler for the two-process demo.

use std::io::{self, Read, Write};
use std::time::Instant;

use crate::embed::TextEmbeddingPool;
use crate::oracle::{Sample, SyntheticWorld};
use crate::scalar::Scalar;

use super::frame::{decode_header, Frame, HEADER_LEN};
use super::message::Message;
use super::SimError;

/// Reads one frame; `Ok(None)` on a clean end of stream before a header.
pub fn read_frame<R: Read>(r: &mut R) -> Result<Option<Frame>, SimError> {
    let mut header = [0u8; HEADER_LEN];
    let mut got = 0;
    while got < HEADER_LEN {
        match r.read(&mut header[got..])? {
            0 if got == 0 => return Ok(None),
            0 => return Err(io::Error::from(io::ErrorKind::UnexpectedEof).into()),
            n => got += n,
        }
    }
    let (msg_type, len) = decode_header(&header).map_err(super::MessageError::from)?;
    let mut payload = vec![0u8; len];
    r.read_exact(&mut payload)?;
    Ok(Some(Frame { msg_type, payload }))
}

pub fn write_message<W: Write>(w: &mut W, msg: &Message) -> Result<(), SimError> {
    w.write_all(&msg.encode()?)?;
    w.flush()?;
    Ok(())
}

pub fn read_message<R: Read>(r: &mut R) -> Result<Option<Message>, SimError> {
    match read_frame(r)? {
        Some(f) => Ok(Some(Message::from_frame(&f)?)),
        None => Ok(None),
    }
}

/// Cloud side: answers knowledge and inference queries with the FM and
/// keeps uploaded samples for later customization.
pub struct CloudService<T> {
    world: SyntheticWorld<T>,
    pool: TextEmbeddingPool<T>,
    uploads: Vec<Sample<T>>,
}

impl<T: Scalar> CloudService<T> {
    pub fn new(world: SyntheticWorld<T>, pool: TextEmbeddingPool<T>) -> Self {
        Self { world, pool, uploads: Vec::new() }
    }

    pub fn uploads(&self) -> &[Sample<T>] {
        &self.uploads
    }

    pub fn pool_update(&self) -> Message {
        Message::PoolUpdate { prompt: self.pool.prompt().pattern().to_owned(), pool: self.pool.to_bytes() }
    }

    pub fn handle(&mut self, msg: Message) -> Result<Message, SimError> {
        let decode = |v: &[f32]| -> Vec<T> { v.iter().map(|&x| T::from_wire(x)).collect() };
        Ok(match msg {
            Message::QueryKnowledge(s) => {
                let raw = decode(&s.values);
                let label = self.world.knowledge_query(&self.pool, &raw)?;
                self.uploads.push(Sample { id: s.sample_id, raw, true_class: String::new() });
                Message::PseudoResponse {
                    sample_id: s.sample_id,
                    class_name: label.class_name,
                    confidence: label.confidence.as_f32(),
                    text_embedding: label.text_embedding.as_slice().iter().map(|v| v.as_f32()).collect(),
                }
            }
            Message::InferRequest(s) => {
                let (class_name, sim) = self.world.fm_predict(&self.pool, &decode(&s.values))?;
                Message::InferResponse { sample_id: s.sample_id, class_name, similarity: sim.as_f32() }
            }
            Message::BwProbe { filler } => Message::ProbeAck { received_bytes: (HEADER_LEN + filler.len()) as u64 },
            other => return Err(SimError::Invariant(format!("cloud cannot handle {}", other.msg_type()))),
        })
    }

    /// Serves one connection until the peer closes it. Requests are
    /// processed strictly in order.
    pub fn serve<S: Read + Write>(&mut self, stream: &mut S) -> Result<usize, SimError> {
        let mut served = 0;
        while let Some(msg) = read_message(stream)? {
            let reply = self.handle(msg)?;
            write_message(stream, &reply)?;
            served += 1;
        }
        Ok(served)
    }
}

/// Sends a probe of `filler_bytes` and returns the measured round-trip
/// throughput in bits per second.
pub fn probe<S: Read + Write>(stream: &mut S, filler_bytes: usize) -> Result<f64, SimError> {
    let start = Instant::now();
    write_message(stream, &Message::BwProbe { filler: vec![0; filler_bytes] })?;
    match read_message(stream)? {
        Some(Message::ProbeAck { received_bytes }) => {
            let secs = start.elapsed().as_secs_f64().max(1e-9);
            Ok(received_bytes as f64 * 8.0 / secs)
        }
        other => Err(SimError::Invariant(format!("expected PROBE_ACK, got {other:?}"))),
    }
}
