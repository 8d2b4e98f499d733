//! Edge/cloud discrete-event simulation, wire protocol and live sockets.

mod frame;
pub mod live;
mod link;
mod message;
mod report;
mod run;
mod scenario;

use thiserror::Error;

pub use frame::{decode_frame, decode_header, decode_prefix, encode_frame, Frame, FrameError, MsgType, HEADER_LEN, MAGIC, MAX_PAYLOAD};
pub use link::{LinkState, DEFAULT_PROPAGATION_MS};
pub use message::{Message, MessageError, RawSample};
pub use report::{ControlRecord, MetricsReport, SampleRecord, Summary, WindowStats};
pub use run::run_scenario;
pub use scenario::{ClassChange, Scenario, ScenarioError};

use crate::customizer::CustomizerError;
use crate::embed::EmbedError;
use crate::gate::GateError;
use crate::netadapt::NetAdaptError;
use crate::oracle::OracleError;

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    World(#[from] OracleError),
    #[error(transparent)]
    Train(#[from] CustomizerError),
    #[error(transparent)]
    Gate(#[from] GateError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    NetAdapt(#[from] NetAdaptError),
    #[error(transparent)]
    Message(#[from] MessageError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("invariant violated: {0}")]
    Invariant(String),
}
