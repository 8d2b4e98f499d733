//! Margin-based uncertainty, upload gating and the edge/cloud router.
//!
//! The margin `unc = sim1 − sim2` measures *certainty*: a large margin means
//! the small model is confident, and the router keeps such samples on the
//! edge (`unc ≥ thre`). Upload gating uses the same margin with its own fixed
//! threshold.

use std::fmt;
use std::fmt::Write as _;

use thiserror::Error;

use crate::customizer::{CustomizerError, SmallModel};
use crate::embed::{EmbedError, TextEmbeddingPool};
use crate::scalar::Scalar;

/// Default upload threshold `V_thre`.
pub const DEFAULT_UPLOAD_THRESHOLD: f64 = 0.99;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GateError {
    #[error("threshold {0} outside [0, 1]")]
    InvalidThreshold(f64),
    #[error(transparent)]
    Model(#[from] CustomizerError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UncertaintyScore<T> {
    pub unc: T,
    pub sim1: T,
    pub sim2: T,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Route {
    Edge,
    Cloud,
}

impl Route {
    pub fn as_str(self) -> &'static str {
        match self {
            Route::Edge => "edge",
            Route::Cloud => "cloud",
        }
    }
}

impl fmt::Display for Route {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RouterDecision<T> {
    pub route: Route,
    pub unc: UncertaintyScore<T>,
    pub threshold_used: T,
    /// Small-model answer; present only for edge-routed samples.
    pub edge_prediction: Option<String>,
}

impl<T> RouterDecision<T> {
    /// Indicator `r(x)`: 1 for edge, 0 for cloud.
    pub fn r(&self) -> u8 {
        u8::from(self.route == Route::Edge)
    }
}

/// Margin together with the index of the top pool entry.
pub fn assess<T: Scalar>(
    model: &SmallModel<T>,
    pool: &TextEmbeddingPool<T>,
    raw: &[T],
) -> Result<(UncertaintyScore<T>, usize), GateError> {
    if pool.is_empty() {
        return Err(EmbedError::EmptyPool.into());
    }
    let m = pool.best_match(&model.embed(raw)?)?;
    let score = UncertaintyScore {
        unc: m.similarity - m.runner_up,
        sim1: m.similarity,
        sim2: m.runner_up,
    };
    Ok((score, m.index))
}

/// Top-two similarity margin of the small-model embedding against the pool.
/// A single-entry pool uses `sim2 = −1`.
pub fn uncertainty<T: Scalar>(
    model: &SmallModel<T>,
    pool: &TextEmbeddingPool<T>,
    raw: &[T],
) -> Result<UncertaintyScore<T>, GateError> {
    Ok(assess(model, pool, raw)?.0)
}

/// Uploads only samples the small model is unsure about (`unc < V_thre`).
pub fn should_upload<T: Scalar>(unc: &UncertaintyScore<T>, v_thre: T) -> bool {
    unc.unc < v_thre
}

/// Edge when `unc ≥ thre`, cloud otherwise.
pub fn route<T: Scalar>(
    model: &SmallModel<T>,
    pool: &TextEmbeddingPool<T>,
    raw: &[T],
    thre: T,
) -> Result<RouterDecision<T>, GateError> {
    if !(thre >= T::zero() && thre <= T::one()) {
        return Err(GateError::InvalidThreshold(thre.as_f64()));
    }
    let (unc, best) = assess(model, pool, raw)?;
    Ok(decide(unc, best, thre, pool))
}

pub(crate) fn decide<T: Scalar>(
    unc: UncertaintyScore<T>,
    best: usize,
    thre: T,
    pool: &TextEmbeddingPool<T>,
) -> RouterDecision<T> {
    let route = if unc.unc >= thre { Route::Edge } else { Route::Cloud };
    RouterDecision {
        route,
        unc,
        threshold_used: thre,
        edge_prediction: (route == Route::Edge).then(|| pool.name(best).to_owned()),
    }
}

/// One row of the router audit log.
#[derive(Debug, Clone, PartialEq)]
pub struct AuditRecord {
    pub time: f64,
    pub sample_id: u64,
    pub unc: f64,
    pub thre: f64,
    pub route: Route,
    pub predicted_class: String,
}

/// CSV `time,sample_id,unc,thre,route,predicted_class`.
pub fn audit_csv(records: &[AuditRecord]) -> String {
    let mut out = String::from("time,sample_id,unc,thre,route,predicted_class\n");
    for r in records {
        let _ = writeln!(
            out,
            "{:.6},{},{:.6},{:.4},{},{}",
            r.time, r.sample_id, r.unc, r.thre, r.route, r.predicted_class
        );
    }
    out
}
