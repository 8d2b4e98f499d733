//! Line-oriented `key = value` run configuration with `[section]` headers.
//!
//! ```text
//! seed = 3
//! [world]
//! noise_sigma = 0.3
//! [scenario]
//! preset = demo
//! schedule = 300: sofa; spoon | 500: table
//! ```

use std::path::PathBuf;
use std::str::FromStr;

use thiserror::Error;

use crate::customizer::{TrainConfig, Variant};
use crate::embed::PromptTemplate;
use crate::netadapt::{BandwidthTrace, LatencyModel};
use crate::oracle::{class_name, WorldConfig};
use crate::select::{DeviceProfile, Priority};
use crate::sim::{ClassChange, Scenario};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: {reason}")]
    Syntax { line: usize, reason: String },
    #[error("line {line}: unknown key {key:?} in section [{section}]")]
    UnknownKey { line: usize, section: String, key: String },
    #[error("line {line}: bad value for {key}: {reason}")]
    Value { line: usize, key: String, reason: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub world: WorldConfig,
    pub prompt: PromptTemplate,
    /// Pool classes for customization and table building.
    pub classes: Vec<String>,
    pub train: TrainConfig,
    pub variants: Vec<Variant>,
    /// Unlabeled samples collected for customization.
    pub train_samples: usize,
    pub profile: DeviceProfile,
    pub grid_step: f64,
    pub beta: f64,
    pub calibration_size: usize,
    pub latency: LatencyModel,
    pub scenario: Scenario,
    pub trace_path: Option<PathBuf>,
    /// `(high_mbps, low_mbps, period_s)` square-wave trace over the run.
    pub trace_square: Option<[f64; 3]>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let world = WorldConfig::default();
        let scenario = Scenario::demo();
        Self {
            seed: 1,
            out_dir: PathBuf::from("out"),
            classes: (0..world.num_classes).map(class_name).collect(),
            world,
            prompt: PromptTemplate::default(),
            train: TrainConfig::default(),
            variants: Variant::ALL.to_vec(),
            train_samples: 800,
            profile: DeviceProfile::default(),
            grid_step: scenario.grid_step,
            beta: scenario.beta,
            calibration_size: scenario.calibration_size,
            latency: scenario.latency,
            scenario,
            trace_path: None,
            trace_square: None,
        }
    }
}

fn value<T: FromStr>(line: usize, key: &str, raw: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    raw.parse().map_err(|e: T::Err| ConfigError::Value { line, key: key.to_owned(), reason: e.to_string() })
}

fn list(raw: &str, sep: char) -> Vec<String> {
    raw.split(sep).map(str::trim).filter(|s| !s.is_empty()).map(str::to_owned).collect()
}

fn schedule(line: usize, raw: &str) -> Result<Vec<ClassChange>, ConfigError> {
    list(raw, '|')
        .iter()
        .map(|entry| {
            let (t, classes) = entry.split_once(':').ok_or_else(|| ConfigError::Value {
                line,
                key: "schedule".into(),
                reason: format!("expected `t: class; class`, got {entry:?}"),
            })?;
            Ok(ClassChange { t_seconds: value(line, "schedule", t.trim())?, classes: list(classes, ';') })
        })
        .collect()
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        let mut entries = Vec::new();
        let mut section = String::new();
        for (i, raw_line) in text.lines().enumerate() {
            let line = i + 1;
            let l = raw_line.split('#').next().unwrap_or("").trim();
            if l.is_empty() {
                continue;
            }
            if let Some(name) = l.strip_prefix('[') {
                let name = name.strip_suffix(']').ok_or_else(|| ConfigError::Syntax {
                    line,
                    reason: "unterminated section header".into(),
                })?;
                section = name.trim().to_owned();
                continue;
            }
            let (k, v) = l.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line,
                reason: "expected `key = value`".into(),
            })?;
            entries.push((line, section.clone(), k.trim().to_owned(), v.trim().to_owned()));
        }
        // The preset replaces the whole scenario, so it applies first.
        for (line, s, k, v) in &entries {
            if s == "scenario" && k == "preset" {
                cfg.scenario = match v.as_str() {
                    "demo" => Scenario::demo(),
                    "default" => Scenario::default(),
                    other => {
                        return Err(ConfigError::Value {
                            line: *line,
                            key: k.clone(),
                            reason: format!("unknown preset {other:?}"),
                        })
                    }
                };
            }
        }
        for (line, s, k, v) in &entries {
            cfg.apply(*line, s, k, v)?;
        }
        if let Some([hi, lo, period]) = cfg.trace_square {
            let duration = cfg.scenario.duration_s.max(period);
            cfg.scenario.trace = BandwidthTrace::square(hi * 1e6, lo * 1e6, period, duration)
                .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        }
        cfg.sync();
        cfg.validate()?;
        Ok(cfg)
    }

    fn apply(&mut self, line: usize, section: &str, key: &str, v: &str) -> Result<(), ConfigError> {
        let sc = &mut self.scenario;
        match (section, key) {
            ("", "seed") => self.seed = value(line, key, v)?,
            ("", "out") => self.out_dir = PathBuf::from(v),
            ("world", "seed") => self.world.seed = value(line, key, v)?,
            ("world", "num_classes") => self.world.num_classes = value(line, key, v)?,
            ("world", "input_dim") => self.world.input_dim = value(line, key, v)?,
            ("world", "embed_dim") => self.world.embed_dim = value(line, key, v)?,
            ("world", "noise_sigma") => self.world.noise_sigma = value(line, key, v)?,
            ("world", "fm_noise_sigma") => self.world.fm_noise_sigma = value(line, key, v)?,
            ("pool", "prompt") => {
                self.prompt = PromptTemplate::new(v).map_err(|e| ConfigError::Value {
                    line,
                    key: key.into(),
                    reason: e.to_string(),
                })?
            }
            ("pool", "classes") => self.classes = list(v, ','),
            ("train", "lambda") => self.train.lambda = value(line, key, v)?,
            ("train", "tau") => self.train.tau = value(line, key, v)?,
            ("train", "alpha_vis") => self.train.alpha_vis = value(line, key, v)?,
            ("train", "learning_rate") => self.train.learning_rate = value(line, key, v)?,
            ("train", "epochs") => self.train.epochs = value(line, key, v)?,
            ("train", "batch_size") => self.train.batch_size = value(line, key, v)?,
            ("train", "samples") => self.train_samples = value(line, key, v)?,
            ("train", "variants") => {
                self.variants = list(v, ',').iter().map(|n| value(line, key, n)).collect::<Result<_, _>>()?
            }
            ("profile", "device_id") => self.profile.device_id = v.to_owned(),
            ("profile", "task") => self.profile.task_tag = v.to_owned(),
            ("profile", "memory_budget") => self.profile.memory_budget = value(line, key, v)?,
            ("profile", "flops_budget") => self.profile.flops_budget = value(line, key, v)?,
            ("profile", "latency_bound_ms") => self.profile.latency_bound_ms = value(line, key, v)?,
            ("profile", "accuracy_degradation_bound") => self.profile.accuracy_degradation_bound = value(line, key, v)?,
            ("profile", "priority") => self.profile.priority = value::<Priority>(line, key, v)?,
            ("netadapt", "grid_step") => self.grid_step = value(line, key, v)?,
            ("netadapt", "beta") => self.beta = value(line, key, v)?,
            ("netadapt", "calibration_size") => self.calibration_size = value(line, key, v)?,
            ("netadapt", "t_edge_ms") => self.latency.t_edge_ms = value(line, key, v)?,
            ("netadapt", "t_cloud_ms") => self.latency.t_cloud_ms = value(line, key, v)?,
            ("netadapt", "sample_bits") => self.latency.sample_bits = value(line, key, v)?,
            ("scenario", "preset") => {}
            ("scenario", "initial_classes") => sc.initial_classes = list(v, ','),
            ("scenario", "schedule") => sc.schedule = schedule(line, v)?,
            ("scenario", "arrival_rate_hz") => sc.arrival_rate_hz = value(line, key, v)?,
            ("scenario", "duration_s") => sc.duration_s = value(line, key, v)?,
            ("scenario", "update_interval_s") => sc.update_interval_s = value(line, key, v)?,
            ("scenario", "retrain_cost_s") => sc.retrain_cost_s = value(line, key, v)?,
            ("scenario", "upload_trigger") => sc.upload_trigger = value(line, key, v)?,
            ("scenario", "upload_cap") => sc.upload_cap = value(line, key, v)?,
            ("scenario", "upload_threshold") => sc.upload_threshold = value(line, key, v)?,
            ("scenario", "bootstrap_samples") => sc.bootstrap_samples = value(line, key, v)?,
            ("scenario", "probe_interval_s") => sc.probe_interval_s = value(line, key, v)?,
            ("scenario", "propagation_ms") => sc.propagation_ms = value(line, key, v)?,
            ("scenario", "report_window_s") => sc.report_window_s = value(line, key, v)?,
            ("scenario", "variant") => sc.variant = value(line, key, v)?,
            ("scenario", "trace") => self.trace_path = Some(PathBuf::from(v)),
            ("scenario", "trace_square") => {
                let parts: Vec<f64> = list(v, ',').iter().map(|p| value(line, key, p)).collect::<Result<_, _>>()?;
                let [hi, lo, period] = parts[..] else {
                    return Err(ConfigError::Value {
                        line,
                        key: key.into(),
                        reason: "expected `high_mbps, low_mbps, period_s`".into(),
                    });
                };
                self.trace_square = Some([hi, lo, period]);
            }
            _ => {
                return Err(ConfigError::UnknownKey { line, section: section.to_owned(), key: key.to_owned() });
            }
        }
        Ok(())
    }

    /// Copies shared settings into the scenario.
    pub fn sync(&mut self) {
        let sc = &mut self.scenario;
        sc.seed = self.seed;
        sc.world = self.world.clone();
        sc.prompt = self.prompt.clone();
        sc.train = TrainConfig { seed: self.seed, ..self.train.clone() };
        sc.profile = self.profile.clone();
        sc.grid_step = self.grid_step;
        sc.beta = self.beta;
        sc.calibration_size = self.calibration_size;
        sc.latency = self.latency;
        self.train.seed = self.seed;
    }

    /// Overrides the run seed everywhere it is used.
    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.sync();
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |e: String| ConfigError::Invalid(e);
        if !(0.0..=1.0).contains(&self.train.lambda) {
            return Err(invalid(format!("lambda {} outside [0, 1]", self.train.lambda)));
        }
        if !(self.train.tau > 0.0) {
            return Err(invalid(format!("tau must be positive, got {}", self.train.tau)));
        }
        if !(self.grid_step > 0.0 && self.grid_step <= 0.5) {
            return Err(invalid(format!("grid step {} outside (0, 0.5]", self.grid_step)));
        }
        if self.variants.is_empty() {
            return Err(invalid("no variants selected".into()));
        }
        if self.train_samples < 5 {
            return Err(invalid("train.samples must be at least 5".into()));
        }
        if self.classes.is_empty() {
            return Err(invalid("pool.classes is empty".into()));
        }
        let known: Vec<String> = (0..self.world.num_classes).map(class_name).collect();
        if let Some(c) = self.classes.iter().find(|c| !known.contains(c)) {
            return Err(invalid(format!("pool class {c:?} is not part of the world")));
        }
        self.train.validate().map_err(|e| invalid(e.to_string()))?;
        self.scenario.validate().map_err(|e| invalid(e.to_string()))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_is_default() {
        let c = RunConfig::parse("").unwrap();
        assert_eq!(c, {
            let mut d = RunConfig::default();
            d.sync();
            d
        });
    }

    #[test]
    fn sections_and_overrides() {
        let c = RunConfig::parse(
            "seed = 9 # trailing comment\nout = results\n[world]\nnoise_sigma = 0.3\n[train]\nvariants = semantic, hard_ft\n\
             [profile]\npriority = accuracy\n[netadapt]\nt_edge_ms = 30\n[scenario]\nduration_s = 100\npreset = default\ninitial_classes = chair, clock\n\
             schedule = 10: apple; book | 20.5: cup\ntrace_square = 123, 2, 30\n",
        )
        .unwrap();
        assert_eq!(c.seed, 9);
        assert_eq!(c.scenario.seed, 9);
        assert_eq!(c.out_dir, PathBuf::from("results"));
        assert_eq!(c.world.noise_sigma, 0.3);
        assert_eq!(c.scenario.world.noise_sigma, 0.3);
        assert_eq!(c.variants, vec![Variant::Semantic, Variant::HardFt]);
        assert_eq!(c.profile.priority, Priority::Accuracy);
        assert_eq!(c.scenario.latency.t_edge_ms, 30.0);
        assert_eq!(c.scenario.duration_s, 100.0);
        assert_eq!(c.scenario.schedule.len(), 2);
        assert_eq!(c.scenario.schedule[1].classes, vec!["cup".to_owned()]);
        assert_eq!(c.scenario.trace.points().len(), 4);
    }

    #[test]
    fn rejects_out_of_range() {
        for text in [
            "[train]\nlambda = 1.5",
            "[train]\ntau = 0",
            "[train]\ntau = -1",
            "[netadapt]\ngrid_step = 0.6",
            "[netadapt]\ngrid_step = 0",
        ] {
            assert!(matches!(RunConfig::parse(text), Err(ConfigError::Invalid(_))), "{text}");
        }
    }

    #[test]
    fn reports_syntax_errors_with_lines() {
        assert!(matches!(RunConfig::parse("seed = 1\njunk"), Err(ConfigError::Syntax { line: 2, .. })));
        assert!(matches!(RunConfig::parse("[world\n"), Err(ConfigError::Syntax { line: 1, .. })));
        assert!(matches!(
            RunConfig::parse("[world]\ncolour = red"),
            Err(ConfigError::UnknownKey { line: 2, .. })
        ));
        assert!(matches!(RunConfig::parse("seed = x"), Err(ConfigError::Value { line: 1, .. })));
        assert!(matches!(RunConfig::parse("[train]\nvariants = kd"), Err(ConfigError::Value { .. })));
        assert!(matches!(RunConfig::parse("[scenario]\npreset = fast"), Err(ConfigError::Value { .. })));
    }
}
