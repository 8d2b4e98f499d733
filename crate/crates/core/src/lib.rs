//! Edge-cloud cooperative open-set inference.
//!
//! A small edge model is customized from a foundation model's knowledge,
//! routes confident samples locally and offloads the rest, with the routing
//! threshold re-solved as bandwidth changes. Numeric code is generic over
//! [`Scalar`] (`f32` or `f64`); the aliases below fix the common choices.

pub mod config;
pub mod customizer;
pub mod embed;
pub mod gate;
pub mod linalg;
pub mod netadapt;
pub mod oracle;
pub mod scalar;
pub mod select;
pub mod sim;
pub mod wire;

pub use config::RunConfig;
pub use customizer::{SmallModel, TrainConfig, Variant};
pub use embed::{Embedding, PromptTemplate, TextEmbeddingPool};
pub use gate::{Route, RouterDecision, UncertaintyScore};
pub use netadapt::{BandwidthEstimator, BandwidthTrace, LatencyModel, ThresholdTable};
pub use oracle::{Sample, SyntheticWorld, WorldConfig};
pub use scalar::Scalar;
pub use select::{DeviceProfile, ModelPool, ModelSpec, Priority};
pub use sim::{MetricsReport, Scenario};

pub type Embedding32 = Embedding<f32>;
pub type Embedding64 = Embedding<f64>;
pub type TextPool32 = TextEmbeddingPool<f32>;
pub type TextPool64 = TextEmbeddingPool<f64>;
pub type SmallModel32 = SmallModel<f32>;
pub type SmallModel64 = SmallModel<f64>;
pub type World32 = SyntheticWorld<f32>;
pub type World64 = SyntheticWorld<f64>;
pub type Sample32 = Sample<f32>;
pub type Sample64 = Sample<f64>;
