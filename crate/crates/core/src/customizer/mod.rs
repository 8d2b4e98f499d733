//! Small-model customization from FM knowledge.
//!
//! The semantic objective is `α_vis·L_vis + L_text` where `L_vis` is the MSE
//! between FM and small-model sensor embeddings and `L_text` is the
//! confidence-weighted bidirectional contrastive loss against pseudo text
//! embeddings. Two baselines share the same model and inference path:
//! `vanilla_kd` (MSE only) and `hard_ft` (cross-entropy on hard pseudo labels
//! over pool similarities).

mod loss;
mod model;
mod train;

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::embed::{EmbedError, Embedding, TextEmbeddingPool};
use crate::oracle::{OracleError, PseudoLabel};
use crate::scalar::Scalar;

pub use model::{Gradients, SmallModel};
pub use train::{is_holdout, pool_accuracy, prepare_batch, train, EpochRecord, TrainingLog};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CustomizerError {
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error("temperature must be positive")]
    NonPositiveTemperature,
    #[error("raw input dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("batch is empty")]
    EmptyBatch,
    #[error("bad checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
}

/// Training objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    Semantic,
    VanillaKd,
    HardFt,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Semantic, Variant::VanillaKd, Variant::HardFt];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Semantic => "semantic",
            Variant::VanillaKd => "vanilla_kd",
            Variant::HardFt => "hard_ft",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = CustomizerError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| CustomizerError::InvalidConfig(format!("unknown variant {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Weight of the sensor→text direction.
    pub lambda: f64,
    /// Softmax temperature.
    pub tau: f64,
    pub alpha_vis: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda: 0.5,
            tau: 1.0,
            alpha_vis: 1.0,
            learning_rate: 0.05,
            epochs: 40,
            batch_size: 16,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), CustomizerError> {
        let bad = |m: &str| Err(CustomizerError::InvalidConfig(m.to_owned()));
        if !(0.0..=1.0).contains(&self.lambda) {
            return bad("lambda must lie in [0, 1]");
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(CustomizerError::NonPositiveTemperature);
        }
        if !(self.alpha_vis >= 0.0 && self.alpha_vis.is_finite()) {
            return bad("alpha_vis must be finite and >= 0");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1");
        }
        if self.epochs == 0 {
            return bad("epochs must be >= 1");
        }
        Ok(())
    }
}

/// One distillation example: the raw sample, its FM sensor embedding and
/// its pseudo label (with the label's index in the pool).
#[derive(Debug, Clone, PartialEq)]
pub struct DistillItem<T> {
    pub id: u64,
    pub raw: Vec<T>,
    pub fm_embedding: Embedding<T>,
    pub pseudo: PseudoLabel<T>,
    pub pseudo_index: usize,
}

/// A mini-batch of distillation examples.
pub type DistillBatch<T> = [DistillItem<T>];

struct BatchForward<T> {
    forwards: Vec<model::Forward<T>>,
}

impl<T: Scalar> BatchForward<T> {
    fn run(model: &SmallModel<T>, batch: &DistillBatch<T>) -> Result<Self, CustomizerError> {
        if batch.is_empty() {
            return Err(CustomizerError::EmptyBatch);
        }
        let forwards = batch.iter().map(|it| model.forward(&it.raw)).collect::<Result<_, _>>()?;
        Ok(Self { forwards })
    }

    fn embeddings(&self) -> Vec<&[T]> {
        self.forwards.iter().map(|f| f.embedding.as_slice()).collect()
    }
}

fn text_inputs<T: Scalar>(batch: &DistillBatch<T>) -> (Vec<&[T]>, Vec<T>) {
    (
        batch.iter().map(|it| it.pseudo.text_embedding.as_slice()).collect(),
        batch.iter().map(|it| it.pseudo.confidence).collect(),
    )
}

fn check_tau(tau: f64) -> Result<(), CustomizerError> {
    if tau > 0.0 && tau.is_finite() {
        Ok(())
    } else {
        Err(CustomizerError::NonPositiveTemperature)
    }
}

/// Mean over the batch of the per-coordinate squared error between FM and
/// small-model sensor embeddings.
pub fn loss_vis<T: Scalar>(batch: &DistillBatch<T>, model: &SmallModel<T>) -> Result<T, CustomizerError> {
    let fw = BatchForward::run(model, batch)?;
    let fm: Vec<&[T]> = batch.iter().map(|it| it.fm_embedding.as_slice()).collect();
    Ok(loss::vis(&fm, &fw.embeddings()).0)
}

/// Confidence-weighted bidirectional contrastive loss.
pub fn loss_text<T: Scalar>(
    batch: &DistillBatch<T>,
    model: &SmallModel<T>,
    lambda: f64,
    tau: f64,
) -> Result<T, CustomizerError> {
    check_tau(tau)?;
    let fw = BatchForward::run(model, batch)?;
    let (t, w) = text_inputs(batch);
    Ok(loss::text(&fw.embeddings(), &t, &w, T::of(lambda), T::of(tau)).0)
}

/// `α_vis·L_vis + L_text`
pub fn loss_total<T: Scalar>(
    batch: &DistillBatch<T>,
    model: &SmallModel<T>,
    cfg: &TrainConfig,
) -> Result<T, CustomizerError> {
    Ok(objective(batch, model, cfg, Variant::Semantic, None)?.0)
}

/// Analytic gradient of [`loss_total`] with respect to every parameter.
pub fn grad<T: Scalar>(
    batch: &DistillBatch<T>,
    model: &SmallModel<T>,
    cfg: &TrainConfig,
) -> Result<Gradients<T>, CustomizerError> {
    Ok(objective(batch, model, cfg, Variant::Semantic, None)?.1)
}

/// Loss and parameter gradient of the chosen variant. `hard_ft` needs the
/// text pool its targets index into.
pub fn objective<T: Scalar>(
    batch: &DistillBatch<T>,
    model: &SmallModel<T>,
    cfg: &TrainConfig,
    variant: Variant,
    pool: Option<&TextEmbeddingPool<T>>,
) -> Result<(T, Gradients<T>), CustomizerError> {
    check_tau(cfg.tau)?;
    let fw = BatchForward::run(model, batch)?;
    let v = fw.embeddings();
    let (loss, grad_v) = match variant {
        Variant::Semantic | Variant::VanillaKd => {
            let fm: Vec<&[T]> = batch.iter().map(|it| it.fm_embedding.as_slice()).collect();
            let (lv, mut gv) = loss::vis(&fm, &v);
            let alpha = T::of(cfg.alpha_vis);
            if variant == Variant::VanillaKd {
                (lv, gv)
            } else {
                let (t, w) = text_inputs(batch);
                let (lt, gt) = loss::text(&v, &t, &w, T::of(cfg.lambda), T::of(cfg.tau));
                for (a, b) in gv.iter_mut().zip(gt) {
                    for (x, y) in a.iter_mut().zip(b) {
                        *x = alpha * *x + y;
                    }
                }
                (alpha * lv + lt, gv)
            }
        }
        Variant::HardFt => {
            let pool = pool.ok_or_else(|| CustomizerError::InvalidConfig("hard_ft needs the text pool".into()))?;
            let protos: Vec<&[T]> = pool.iter().map(|(_, e)| e.as_slice()).collect();
            let targets: Vec<usize> = batch.iter().map(|it| it.pseudo_index).collect();
            if targets.iter().any(|&y| y >= protos.len()) {
                return Err(CustomizerError::InvalidConfig("pseudo label index outside pool".into()));
            }
            loss::hard_ce(&v, &protos, &targets, T::of(cfg.tau))
        }
    };
    let mut acc = Gradients::zeros_like(model);
    for ((it, f), g) in batch.iter().zip(&fw.forwards).zip(&grad_v) {
        model.backprop(&it.raw, f, g, &mut acc);
    }
    Ok((loss, acc))
}
