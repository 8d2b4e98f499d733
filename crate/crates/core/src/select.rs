//! Accuracy-resource lookup table and constrained model selection.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SelectError {
    #[error("architecture {0:?} already registered")]
    DuplicateArch(String),
    #[error("invalid model spec {arch_id:?}: {reason}")]
    InvalidSpec { arch_id: String, reason: String },
    #[error("no model for task {task:?} fits memory {memory_budget} B / {flops_budget} FLOPs")]
    NoFeasibleModel {
        task: String,
        memory_budget: f64,
        flops_budget: f64,
    },
    #[error("invalid device profile: {0}")]
    InvalidProfile(String),
}

/// One row of the lookup table.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub arch_id: String,
    pub task_tag: String,
    /// Accuracy on the offline reference benchmark, in `[0, 1]`.
    pub accuracy: f64,
    /// Operations per inference.
    pub flops: f64,
    /// Bytes.
    pub memory: f64,
    /// Measured per-device inference latency in milliseconds.
    pub latency_edge: BTreeMap<String, f64>,
    /// Hidden width of the desk-scale stand-in network for this architecture.
    pub hidden: usize,
}

impl ModelSpec {
    fn validate(&self) -> Result<(), SelectError> {
        let bad = |reason: &str| {
            Err(SelectError::InvalidSpec {
                arch_id: self.arch_id.clone(),
                reason: reason.to_owned(),
            })
        };
        if self.arch_id.is_empty() {
            return bad("empty arch_id");
        }
        if !(0.0..=1.0).contains(&self.accuracy) {
            return bad("accuracy outside [0, 1]");
        }
        if !(self.flops > 0.0 && self.flops.is_finite()) {
            return bad("flops must be positive");
        }
        if !(self.memory > 0.0 && self.memory.is_finite()) {
            return bad("memory must be positive");
        }
        if self.hidden == 0 {
            return bad("hidden width must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Priority {
    Latency,
    Accuracy,
}

impl fmt::Display for Priority {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Priority::Latency => "latency",
            Priority::Accuracy => "accuracy",
        })
    }
}

impl FromStr for Priority {
    type Err = SelectError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "latency" => Ok(Priority::Latency),
            "accuracy" => Ok(Priority::Accuracy),
            other => Err(SelectError::InvalidProfile(format!("unknown priority {other:?}"))),
        }
    }
}

/// What the profiler records about an edge device.
#[derive(Debug, Clone, PartialEq)]
pub struct DeviceProfile {
    pub device_id: String,
    pub task_tag: String,
    pub memory_budget: f64,
    pub flops_budget: f64,
    /// End-to-end latency bound in milliseconds.
    pub latency_bound_ms: f64,
    pub accuracy_degradation_bound: f64,
    pub priority: Priority,
}

impl Default for DeviceProfile {
    fn default() -> Self {
        Self {
            device_id: "jetson_nano".into(),
            task_tag: "vision".into(),
            memory_budget: 64e6,
            flops_budget: 2e9,
            latency_bound_ms: 30.0,
            accuracy_degradation_bound: 0.02,
            priority: Priority::Latency,
        }
    }
}

impl DeviceProfile {
    pub fn validate(&self) -> Result<(), SelectError> {
        let bad = |m: &str| Err(SelectError::InvalidProfile(m.to_owned()));
        if !(self.memory_budget > 0.0) || !(self.flops_budget > 0.0) {
            return bad("budgets must be positive");
        }
        if !(self.latency_bound_ms > 0.0) {
            return bad("latency bound must be positive");
        }
        if !(0.0..=1.0).contains(&self.accuracy_degradation_bound) {
            return bad("accuracy degradation bound outside [0, 1]");
        }
        Ok(())
    }
}

/// Task-grouped model pool.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ModelPool {
    specs: Vec<ModelSpec>,
}

/// Selection order: higher accuracy, then fewer FLOPs, then less memory,
/// then arch_id.
fn preference(a: &ModelSpec, b: &ModelSpec) -> Ordering {
    b.accuracy
        .total_cmp(&a.accuracy)
        .then(a.flops.total_cmp(&b.flops))
        .then(a.memory.total_cmp(&b.memory))
        .then_with(|| a.arch_id.cmp(&b.arch_id))
}

impl ModelPool {
    pub fn new() -> Self {
        Self::default()
    }

    /// Pool with the two measured architectures (fp32 weights) plus an audio
    /// group.
    pub fn reference() -> Self {
        let nano = |ms: f64| BTreeMap::from([("jetson_nano".to_owned(), ms)]);
        let mut pool = Self::new();
        let specs = [
            ModelSpec {
                arch_id: "mobilenet_v2".into(),
                task_tag: "vision".into(),
                accuracy: 0.72,
                flops: 0.3e9,
                memory: 3.5e6 * 4.0,
                latency_edge: nano(36.8),
                hidden: 32,
            },
            ModelSpec {
                arch_id: "resnet18".into(),
                task_tag: "vision".into(),
                accuracy: 0.70,
                flops: 1.8e9,
                memory: 11.7e6 * 4.0,
                latency_edge: nano(30.5),
                hidden: 48,
            },
            ModelSpec {
                arch_id: "resnet18_audio".into(),
                task_tag: "audio".into(),
                accuracy: 0.78,
                flops: 1.8e9,
                memory: 11.7e6 * 4.0,
                latency_edge: BTreeMap::new(),
                hidden: 48,
            },
            ModelSpec {
                arch_id: "mobilenet_v2_audio".into(),
                task_tag: "audio".into(),
                accuracy: 0.61,
                flops: 0.3e9,
                memory: 3.5e6 * 4.0,
                latency_edge: BTreeMap::new(),
                hidden: 32,
            },
        ];
        for s in specs {
            pool.register(s).expect("reference specs are valid and unique");
        }
        pool
    }

    pub fn register(&mut self, spec: ModelSpec) -> Result<(), SelectError> {
        spec.validate()?;
        if self.get(&spec.arch_id).is_some() {
            return Err(SelectError::DuplicateArch(spec.arch_id));
        }
        self.specs.push(spec);
        Ok(())
    }

    pub fn get(&self, arch_id: &str) -> Option<&ModelSpec> {
        self.specs.iter().find(|s| s.arch_id == arch_id)
    }

    pub fn by_task<'a, 'b>(&'a self, task_tag: &'b str) -> impl Iterator<Item = &'a ModelSpec> + use<'a, 'b> {
        self.specs.iter().filter(move |s| s.task_tag == task_tag)
    }

    pub fn len(&self) -> usize {
        self.specs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.specs.is_empty()
    }

    /// Most accurate spec for the profile's task within its memory and FLOPs
    /// budgets.
    pub fn select(&self, profile: &DeviceProfile) -> Result<&ModelSpec, SelectError> {
        self.by_task(&profile.task_tag)
            .filter(|s| s.memory <= profile.memory_budget && s.flops <= profile.flops_budget)
            .min_by(|a, b| preference(a, b))
            .ok_or_else(|| SelectError::NoFeasibleModel {
                task: profile.task_tag.clone(),
                memory_budget: profile.memory_budget,
                flops_budget: profile.flops_budget,
            })
    }
}
