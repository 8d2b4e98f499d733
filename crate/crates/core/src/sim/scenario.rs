use thiserror::Error;

use crate::customizer::{TrainConfig, Variant};
use crate::embed::PromptTemplate;
use crate::netadapt::{BandwidthTrace, LatencyModel, DEFAULT_BETA, DEFAULT_CALIBRATION_SIZE, DEFAULT_GRID_STEP};
use crate::oracle::{class_name, WorldConfig};
use crate::select::DeviceProfile;
use crate::gate::DEFAULT_UPLOAD_THRESHOLD;

use super::link::DEFAULT_PROPAGATION_MS;

#[derive(Debug, Error, Clone, PartialEq)]
#[error("invalid scenario: {0}")]
pub struct ScenarioError(pub String);

/// Classes that join the environment and the pool at `t_seconds`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassChange {
    pub t_seconds: f64,
    pub classes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub world: WorldConfig,
    /// Seeds arrivals, initial weights and retraining shuffles.
    pub seed: u64,
    pub prompt: PromptTemplate,
    pub initial_classes: Vec<String>,
    pub schedule: Vec<ClassChange>,
    pub arrival_rate_hz: f64,
    pub duration_s: f64,
    pub update_interval_s: f64,
    /// Virtual time a retraining run occupies before its model ships.
    pub retrain_cost_s: f64,
    /// New uploads required before a periodic update retrains.
    pub upload_trigger: usize,
    /// Uploads allowed per update cycle.
    pub upload_cap: usize,
    pub upload_threshold: f64,
    pub calibration_size: usize,
    /// Samples the initial model is customized on before the run starts.
    pub bootstrap_samples: usize,
    pub probe_interval_s: f64,
    pub propagation_ms: f64,
    pub latency: LatencyModel,
    pub profile: DeviceProfile,
    pub grid_step: f64,
    pub beta: f64,
    pub train: TrainConfig,
    pub variant: Variant,
    pub arch_id: String,
    pub hidden_dim: usize,
    pub trace: BandwidthTrace,
    /// Width of the summary's time windows.
    pub report_window_s: f64,
}

impl Default for Scenario {
    fn default() -> Self {
        let world = WorldConfig::default();
        Self {
            initial_classes: (0..world.num_classes).map(class_name).collect(),
            world,
            seed: 1,
            prompt: PromptTemplate::default(),
            schedule: Vec::new(),
            arrival_rate_hz: 2.0,
            duration_s: 600.0,
            update_interval_s: 200.0,
            retrain_cost_s: 10.0,
            upload_trigger: 100,
            upload_cap: 400,
            upload_threshold: DEFAULT_UPLOAD_THRESHOLD,
            calibration_size: DEFAULT_CALIBRATION_SIZE,
            bootstrap_samples: 400,
            probe_interval_s: 1.0,
            propagation_ms: DEFAULT_PROPAGATION_MS,
            latency: LatencyModel::default(),
            profile: DeviceProfile::default(),
            grid_step: DEFAULT_GRID_STEP,
            beta: DEFAULT_BETA,
            train: TrainConfig::default(),
            variant: Variant::Semantic,
            arch_id: "mobilenet_v2".into(),
            hidden_dim: 32,
            trace: BandwidthTrace::constant(123e6).expect("constant trace"),
            report_window_s: 50.0,
        }
    }
}

impl Scenario {
    /// Half the classes at start, the rest mid-run, over a link that
    /// alternates between 123 and 2 Mbps every minute.
    pub fn demo() -> Self {
        let base = Self::default();
        let names: Vec<String> = (0..base.world.num_classes).map(class_name).collect();
        let half = names.len() / 2;
        let duration_s = 800.0;
        Self {
            initial_classes: names[..half].to_vec(),
            schedule: vec![ClassChange { t_seconds: 300.0, classes: names[half..].to_vec() }],
            duration_s,
            trace: BandwidthTrace::square(123e6, 2e6, 60.0, duration_s).expect("valid square trace"),
            ..base
        }
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let bad = |m: String| Err(ScenarioError(m));
        let pos = |v: f64| v > 0.0 && v.is_finite();
        if !pos(self.duration_s) {
            return bad("duration must be positive".into());
        }
        if !pos(self.arrival_rate_hz) {
            return bad("arrival rate must be positive".into());
        }
        if !pos(self.update_interval_s) || !pos(self.probe_interval_s) || !pos(self.report_window_s) {
            return bad("intervals must be positive".into());
        }
        if !(self.retrain_cost_s >= 0.0 && self.retrain_cost_s < self.update_interval_s) {
            return bad("retrain cost must lie in [0, update interval)".into());
        }
        if !(self.propagation_ms >= 0.0 && self.propagation_ms.is_finite()) {
            return bad("propagation delay must be non-negative".into());
        }
        if !(0.0..=2.0).contains(&self.upload_threshold) {
            return bad("upload threshold must lie in [0, 2]".into());
        }
        if self.calibration_size == 0 {
            return bad("calibration size must be positive".into());
        }
        if self.hidden_dim == 0 {
            return bad("hidden dimension must be positive".into());
        }
        if !(self.beta > 0.0 && self.beta <= 1.0) {
            return bad("beta must lie in (0, 1]".into());
        }
        if !(self.grid_step > 0.0 && self.grid_step <= 0.5) {
            return bad("grid step must lie in (0, 0.5]".into());
        }
        self.latency.validate().map_err(|e| ScenarioError(e.to_string()))?;
        self.profile.validate().map_err(|e| ScenarioError(e.to_string()))?;
        self.train.validate().map_err(|e| ScenarioError(e.to_string()))?;
        let known: Vec<String> = (0..self.world.num_classes).map(class_name).collect();
        if self.initial_classes.is_empty() {
            return bad("no initial classes".into());
        }
        let mut seen: Vec<&str> = Vec::new();
        let check = |seen: &[&str], c: &str| -> Result<(), ScenarioError> {
            if !known.iter().any(|k| k == c) {
                return Err(ScenarioError(format!("class {c:?} is not part of the world")));
            }
            if seen.contains(&c) {
                return Err(ScenarioError(format!("class {c:?} added twice")));
            }
            Ok(())
        };
        for c in &self.initial_classes {
            check(&seen, c)?;
            seen.push(c);
        }
        let mut last = 0.0;
        for change in &self.schedule {
            if !(change.t_seconds >= last && change.t_seconds <= self.duration_s) {
                return bad(format!("schedule time {} out of order or beyond duration", change.t_seconds));
            }
            last = change.t_seconds;
            if change.classes.is_empty() {
                return bad(format!("schedule entry at {} adds no classes", change.t_seconds));
            }
            for c in &change.classes {
                check(&seen, c)?;
                seen.push(c);
            }
        }
        Ok(())
    }
}
