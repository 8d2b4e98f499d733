use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::embed::TextEmbeddingPool;
use crate::oracle::{Sample, SyntheticWorld};
use crate::scalar::Scalar;

use super::{objective, CustomizerError, DistillItem, SmallModel, TrainConfig, Variant};

/// Held-out split: every fifth sample id (`id % 5 == 4`).
pub fn is_holdout(id: u64) -> bool {
    id % 5 == 4
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    /// `None` when the held-out split is empty.
    pub holdout_accuracy: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingLog {
    pub epochs: Vec<EpochRecord>,
}

impl TrainingLog {
    pub fn final_accuracy(&self) -> Option<f64> {
        self.epochs.last().and_then(|e| e.holdout_accuracy)
    }

    /// `epoch,loss,holdout_accuracy` CSV.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,loss,holdout_accuracy\n");
        for e in &self.epochs {
            let acc = e.holdout_accuracy.map_or_else(|| "nan".to_owned(), |a| format!("{a:.6}"));
            let _ = writeln!(out, "{},{:.9},{}", e.epoch, e.loss, acc);
        }
        out
    }
}

/// Queries the FM for every sample, producing distillation items.
pub fn prepare_batch<T: Scalar>(
    world: &SyntheticWorld<T>,
    pool: &TextEmbeddingPool<T>,
    samples: &[Sample<T>],
) -> Result<Vec<DistillItem<T>>, CustomizerError> {
    samples
        .iter()
        .map(|s| {
            let (fm_embedding, pseudo) = world.knowledge_query_full(pool, &s.raw)?;
            let pseudo_index = pool.index_of(&pseudo.class_name).expect("pseudo label comes from the pool");
            Ok(DistillItem {
                id: s.id,
                raw: s.raw.clone(),
                fm_embedding,
                pseudo,
                pseudo_index,
            })
        })
        .collect()
}

/// Fraction of `samples` whose small-model best match equals the true class.
pub fn pool_accuracy<T: Scalar>(
    model: &SmallModel<T>,
    pool: &TextEmbeddingPool<T>,
    samples: &[Sample<T>],
) -> Result<Option<f64>, CustomizerError> {
    if samples.is_empty() {
        return Ok(None);
    }
    let mut hits = 0usize;
    for s in samples {
        let m = pool.best_match(&model.embed(&s.raw)?)?;
        if pool.name(m.index) == s.true_class {
            hits += 1;
        }
    }
    Ok(Some(hits as f64 / samples.len() as f64))
}

/// Mini-batch gradient descent starting from `model`.
///
/// Samples with `is_holdout(id)` are excluded from training and scored after
/// every epoch.
pub fn train<T: Scalar>(
    world: &SyntheticWorld<T>,
    pool: &TextEmbeddingPool<T>,
    dataset: &[Sample<T>],
    cfg: &TrainConfig,
    variant: Variant,
    mut model: SmallModel<T>,
) -> Result<(SmallModel<T>, TrainingLog), CustomizerError> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(CustomizerError::InvalidConfig("dataset is empty".into()));
    }
    if model.input_dim() != world.input_dim() || model.embed_dim() != pool.dim() {
        return Err(CustomizerError::InvalidConfig("model dimensions do not match world/pool".into()));
    }
    let (holdout, train_set): (Vec<Sample<T>>, Vec<Sample<T>>) =
        dataset.iter().cloned().partition(|s| is_holdout(s.id));
    if train_set.is_empty() {
        return Err(CustomizerError::InvalidConfig("training split is empty".into()));
    }
    let items = prepare_batch(world, pool, &train_set)?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..items.len()).collect();
    let lr = T::of(cfg.learning_rate);
    let mut log = TrainingLog::default();
    let mut batch: Vec<DistillItem<T>> = Vec::with_capacity(cfg.batch_size);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| items[i].clone()));
            let (loss, g) = objective(&batch, &model, cfg, variant, Some(pool))?;
            model.apply(&g, lr);
            if !model.is_finite() {
                return Err(CustomizerError::InvalidConfig(format!(
                    "parameters diverged in epoch {epoch}; lower the learning rate"
                )));
            }
            loss_sum += loss.as_f64();
            batches += 1;
        }
        log.epochs.push(EpochRecord {
            epoch,
            loss: loss_sum / batches as f64,
            holdout_accuracy: pool_accuracy(&model, pool, &holdout)?,
        });
    }
    Ok((model, log))
}
