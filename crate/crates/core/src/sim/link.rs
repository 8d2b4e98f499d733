//! One direction of the trace-driven link.

use crate::netadapt::BandwidthTrace;

pub const DEFAULT_PROPAGATION_MS: f64 = 5.0;

/// FIFO serializer: a frame starts transmitting when the previous one has
/// left, and arrives one propagation delay after its last bit.
#[derive(Debug, Clone)]
pub struct LinkState {
    trace: BandwidthTrace,
    propagation_s: f64,
    busy_until_s: f64,
}

impl LinkState {
    pub fn new(trace: BandwidthTrace, propagation_ms: f64) -> Self {
        Self {
            trace,
            propagation_s: propagation_ms / 1e3,
            busy_until_s: f64::NEG_INFINITY,
        }
    }

    pub fn trace(&self) -> &BandwidthTrace {
        &self.trace
    }

    pub fn propagation_ms(&self) -> f64 {
        self.propagation_s * 1e3
    }

    /// Arrival time in seconds of `bits` handed to the link at `t_send_s`.
    pub fn deliver_bits(&mut self, bits: f64, t_send_s: f64) -> f64 {
        let start = t_send_s.max(self.busy_until_s);
        let end = self.trace.transmit_end(start, bits);
        self.busy_until_s = end;
        end + self.propagation_s
    }

    /// Arrival time of an encoded frame.
    pub fn deliver(&mut self, frame: &[u8], t_send_s: f64) -> f64 {
        self.deliver_bits(frame.len() as f64 * 8.0, t_send_s)
    }

    /// Seconds a frame handed over now would wait before transmitting.
    pub fn backlog_s(&self, t_s: f64) -> f64 {
        (self.busy_until_s - t_s).max(0.0)
    }
}
