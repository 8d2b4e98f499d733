//! Threshold-searching table, bandwidth estimation and the runtime
//! threshold solver.

use std::collections::VecDeque;
use std::fmt::Write as _;
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Instant;

use thiserror::Error;

use crate::customizer::SmallModel;
use crate::embed::TextEmbeddingPool;
use crate::gate::{assess, GateError};
use crate::oracle::Sample;
use crate::scalar::Scalar;
use crate::select::{DeviceProfile, Priority};

pub const DEFAULT_GRID_STEP: f64 = 0.05;
pub const DEFAULT_BETA: f64 = 0.5;
pub const DEFAULT_CALIBRATION_SIZE: usize = 200;
/// Raw 3×224×224 byte image, in bits.
pub const DEFAULT_SAMPLE_BITS: f64 = 3.0 * 224.0 * 224.0 * 8.0;
const PROBE_HISTORY: usize = 64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetAdaptError {
    #[error("calibration set is empty")]
    EmptyCalibration,
    #[error("grid step {0} outside (0, 0.5]")]
    InvalidGridStep(f64),
    #[error("{predictions} FM predictions for {samples} calibration samples")]
    PredictionCount { predictions: usize, samples: usize },
    #[error("bandwidth must be positive, got {0}")]
    NonPositiveBandwidth(f64),
    #[error("probe measurement must be positive, got {0}")]
    NonPositiveMeasurement(f64),
    #[error("smoothing factor {0} outside (0, 1]")]
    InvalidBeta(f64),
    #[error("invalid latency model: {0}")]
    InvalidLatencyModel(String),
    #[error("bandwidth trace line {line}: {reason}")]
    Trace { line: usize, reason: String },
    #[error(transparent)]
    Gate(#[from] GateError),
}

/// Per-sample transmission size and stage processing times.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatencyModel {
    /// Bits per offloaded sample.
    pub sample_bits: f64,
    pub t_edge_ms: f64,
    pub t_cloud_ms: f64,
}

impl Default for LatencyModel {
    fn default() -> Self {
        Self {
            sample_bits: DEFAULT_SAMPLE_BITS,
            t_edge_ms: 15.0,
            t_cloud_ms: 10.0,
        }
    }
}

impl LatencyModel {
    pub fn validate(&self) -> Result<(), NetAdaptError> {
        let ok = |v: f64| v > 0.0 && v.is_finite();
        if !(ok(self.sample_bits) && ok(self.t_edge_ms) && ok(self.t_cloud_ms)) {
            return Err(NetAdaptError::InvalidLatencyModel("all fields must be positive".into()));
        }
        Ok(())
    }

    /// `Dim / B` in milliseconds.
    pub fn t_trans_ms(&self, bandwidth_bps: f64) -> Result<f64, NetAdaptError> {
        if !(bandwidth_bps > 0.0) {
            return Err(NetAdaptError::NonPositiveBandwidth(bandwidth_bps));
        }
        Ok(self.sample_bits / bandwidth_bps * 1e3)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TableRow {
    pub thre: f64,
    /// Edge-processed fraction.
    pub r: f64,
    /// Agreement with the FM on the calibration set.
    pub acc: f64,
    pub t_edge_ms: f64,
    pub t_cloud_ms: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdTable {
    pub rows: Vec<TableRow>,
    pub grid_step: f64,
    pub calibration_size: usize,
}

/// Grid points `k·step` strictly inside `(0, 1)`.
pub fn threshold_grid(step: f64) -> Result<Vec<f64>, NetAdaptError> {
    if !(step > 0.0 && step <= 0.5) {
        return Err(NetAdaptError::InvalidGridStep(step));
    }
    let mut out = Vec::new();
    let mut k = 1u32;
    loop {
        // Round away accumulated binary error so 0.05·3 prints as 0.15.
        let t = (k as f64 * step * 1e9).round() / 1e9;
        if t >= 1.0 {
            break;
        }
        out.push(t);
        k += 1;
    }
    Ok(out)
}

/// Margin and small-model answer for one calibration sample.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationPoint {
    pub unc: f64,
    pub edge_class: String,
    pub fm_class: String,
}

/// Scores every calibration sample with the small model.
pub fn calibrate<T: Scalar>(
    model: &SmallModel<T>,
    pool: &TextEmbeddingPool<T>,
    fm_predictions: &[String],
    calibration: &[Sample<T>],
) -> Result<Vec<CalibrationPoint>, NetAdaptError> {
    if calibration.is_empty() {
        return Err(NetAdaptError::EmptyCalibration);
    }
    if fm_predictions.len() != calibration.len() {
        return Err(NetAdaptError::PredictionCount {
            predictions: fm_predictions.len(),
            samples: calibration.len(),
        });
    }
    calibration
        .iter()
        .zip(fm_predictions)
        .map(|(s, fm)| {
            let (score, best) = assess(model, pool, &s.raw)?;
            Ok(CalibrationPoint {
                unc: score.unc.as_f64(),
                edge_class: pool.name(best).to_owned(),
                fm_class: fm.clone(),
            })
        })
        .collect()
}

impl ThresholdTable {
    /// Builds the table from already scored calibration points.
    pub fn from_points(
        points: &[CalibrationPoint],
        grid_step: f64,
        latency: &LatencyModel,
    ) -> Result<Self, NetAdaptError> {
        if points.is_empty() {
            return Err(NetAdaptError::EmptyCalibration);
        }
        let n = points.len() as f64;
        let rows = threshold_grid(grid_step)?
            .into_iter()
            .map(|thre| {
                let mut edge = 0usize;
                let mut agree = 0usize;
                for p in points {
                    if p.unc >= thre {
                        edge += 1;
                        if p.edge_class == p.fm_class {
                            agree += 1;
                        }
                    } else {
                        agree += 1;
                    }
                }
                TableRow {
                    thre,
                    r: edge as f64 / n,
                    acc: agree as f64 / n,
                    t_edge_ms: latency.t_edge_ms,
                    t_cloud_ms: latency.t_cloud_ms,
                }
            })
            .collect();
        Ok(Self {
            rows,
            grid_step,
            calibration_size: points.len(),
        })
    }

    pub fn grid_min(&self) -> f64 {
        self.rows[0].thre
    }

    pub fn grid_max(&self) -> f64 {
        self.rows[self.rows.len() - 1].thre
    }

    pub fn row(&self, thre: f64) -> Option<&TableRow> {
        self.rows.iter().find(|r| r.thre == thre)
    }

    /// `r` non-increasing and `acc` non-decreasing in `thre`.
    pub fn is_monotone(&self) -> bool {
        self.rows
            .windows(2)
            .all(|w| w[0].thre < w[1].thre && w[1].r <= w[0].r && w[1].acc >= w[0].acc)
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!(
            "# calibration_size={} grid_step={} monotone={}\nthre,r,acc,t_edge_ms,t_cloud_ms\n",
            self.calibration_size,
            self.grid_step,
            self.is_monotone()
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:.2},{:.6},{:.6},{:.3},{:.3}",
                r.thre, r.r, r.acc, r.t_edge_ms, r.t_cloud_ms
            );
        }
        out
    }
}

/// Scores the calibration set and tabulates `r`, `acc` per grid threshold.
pub fn build_table<T: Scalar>(
    model: &SmallModel<T>,
    pool: &TextEmbeddingPool<T>,
    fm_predictions: &[String],
    calibration: &[Sample<T>],
    grid_step: f64,
    latency: &LatencyModel,
) -> Result<ThresholdTable, NetAdaptError> {
    threshold_grid(grid_step)?;
    let points = calibrate(model, pool, fm_predictions, calibration)?;
    ThresholdTable::from_points(&points, grid_step, latency)
}

/// Mean wall-clock milliseconds the small model spends on one sample.
pub fn measure_edge_ms<T: Scalar>(model: &SmallModel<T>, samples: &[Sample<T>]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    let start = Instant::now();
    for s in samples {
        let _ = std::hint::black_box(model.embed(&s.raw));
    }
    start.elapsed().as_secs_f64() * 1e3 / samples.len() as f64
}

fn latency_at(row: &TableRow, t_trans_ms: f64) -> f64 {
    if row.r >= 1.0 {
        // All-edge rows never touch the link.
        return row.t_edge_ms;
    }
    row.r * row.t_edge_ms + (1.0 - row.r) * (t_trans_ms + row.t_cloud_ms)
}

/// `r·t_edge + (1 − r)·(t_trans + t_cloud)` with `t_trans = Dim / B`.
pub fn estimate_latency(row: &TableRow, bandwidth_bps: f64, latency: &LatencyModel) -> Result<f64, NetAdaptError> {
    Ok(latency_at(row, latency.t_trans_ms(bandwidth_bps)?))
}

/// Picks the routing threshold for the current bandwidth.
///
/// Latency priority: the largest grid threshold whose estimated latency
/// stays within the profile's bound, falling back to the grid minimum.
/// Accuracy priority: the smallest threshold whose accuracy is within the
/// degradation bound of the grid maximum's, falling back to the grid maximum.
/// A non-positive bandwidth is treated as an unusable link.
pub fn solve_threshold(
    table: &ThresholdTable,
    bandwidth_bps: f64,
    latency: &LatencyModel,
    profile: &DeviceProfile,
) -> f64 {
    let t_trans = if bandwidth_bps > 0.0 {
        latency.sample_bits / bandwidth_bps * 1e3
    } else {
        f64::INFINITY
    };
    match profile.priority {
        Priority::Latency => table
            .rows
            .iter()
            .rev()
            .find(|r| latency_at(r, t_trans) <= profile.latency_bound_ms)
            .map_or(table.grid_min(), |r| r.thre),
        Priority::Accuracy => {
            let top = table.rows[table.rows.len() - 1].acc;
            table
                .rows
                .iter()
                .find(|r| top - r.acc <= profile.accuracy_degradation_bound)
                .map_or(table.grid_max(), |r| r.thre)
        }
    }
}

/// Exponentially smoothed bandwidth estimate fed by periodic probes.
#[derive(Debug, Clone, PartialEq)]
pub struct BandwidthEstimator {
    beta: f64,
    history: VecDeque<(f64, f64)>,
    estimate: Option<f64>,
}

impl Default for BandwidthEstimator {
    fn default() -> Self {
        Self::new(DEFAULT_BETA).expect("default beta is valid")
    }
}

impl BandwidthEstimator {
    pub fn new(beta: f64) -> Result<Self, NetAdaptError> {
        if !(beta > 0.0 && beta <= 1.0) {
            return Err(NetAdaptError::InvalidBeta(beta));
        }
        Ok(Self {
            beta,
            history: VecDeque::with_capacity(PROBE_HISTORY),
            estimate: None,
        })
    }

    /// `B ← β·measured + (1 − β)·B`. The first probe seeds the estimate.
    pub fn probe_update(&mut self, t_seconds: f64, measured_bps: f64) -> Result<f64, NetAdaptError> {
        if !(measured_bps > 0.0 && measured_bps.is_finite()) {
            return Err(NetAdaptError::NonPositiveMeasurement(measured_bps));
        }
        let next = match self.estimate {
            None => measured_bps,
            Some(prev) => self.beta * measured_bps + (1.0 - self.beta) * prev,
        };
        self.estimate = Some(next);
        if self.history.len() == PROBE_HISTORY {
            self.history.pop_front();
        }
        self.history.push_back((t_seconds, measured_bps));
        Ok(next)
    }

    pub fn estimate(&self) -> Option<f64> {
        self.estimate
    }

    pub fn history(&self) -> impl Iterator<Item = &(f64, f64)> {
        self.history.iter()
    }
}

/// Threshold published by the solver and read by the router without locks.
#[derive(Debug)]
pub struct PublishedThreshold(AtomicU64);

impl PublishedThreshold {
    pub fn new(thre: f64) -> Self {
        Self(AtomicU64::new(thre.to_bits()))
    }

    pub fn load(&self) -> f64 {
        f64::from_bits(self.0.load(Ordering::Acquire))
    }

    pub fn store(&self, thre: f64) {
        self.0.store(thre.to_bits(), Ordering::Release);
    }
}

/// One solver decision, logged as `t_seconds,B_mbps,thre,estimated_latency_ms`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThresholdDecision {
    pub t_seconds: f64,
    pub bandwidth_mbps: f64,
    pub thre: f64,
    pub estimated_latency_ms: f64,
}

pub fn decisions_csv(rows: &[ThresholdDecision]) -> String {
    let mut out = String::from("t_seconds,B_mbps,thre,estimated_latency_ms\n");
    for d in rows {
        let _ = writeln!(
            out,
            "{:.3},{:.6},{:.2},{:.6}",
            d.t_seconds, d.bandwidth_mbps, d.thre, d.estimated_latency_ms
        );
    }
    out
}

/// Solves for the current estimate and packages the log row.
pub fn decide(
    table: &ThresholdTable,
    t_seconds: f64,
    bandwidth_bps: f64,
    latency: &LatencyModel,
    profile: &DeviceProfile,
) -> ThresholdDecision {
    let thre = solve_threshold(table, bandwidth_bps, latency, profile);
    let row = table.row(thre).expect("solver returns a grid threshold");
    let t_trans = if bandwidth_bps > 0.0 {
        latency.sample_bits / bandwidth_bps * 1e3
    } else {
        f64::INFINITY
    };
    ThresholdDecision {
        t_seconds,
        bandwidth_mbps: bandwidth_bps / 1e6,
        thre,
        estimated_latency_ms: latency_at(row, t_trans),
    }
}

/// Piecewise-constant bandwidth over time. The first value also applies
/// before the first timestamp and the last one forever after.
#[derive(Debug, Clone, PartialEq)]
pub struct BandwidthTrace {
    /// `(t_seconds, bits_per_second)` with strictly increasing `t`.
    points: Vec<(f64, f64)>,
}

impl BandwidthTrace {
    pub fn new(points: Vec<(f64, f64)>) -> Result<Self, NetAdaptError> {
        if points.is_empty() {
            return Err(NetAdaptError::Trace { line: 0, reason: "trace is empty".into() });
        }
        for (i, &(t, b)) in points.iter().enumerate() {
            if !t.is_finite() || !(b > 0.0 && b.is_finite()) {
                return Err(NetAdaptError::Trace { line: i + 1, reason: format!("invalid point ({t}, {b})") });
            }
            if i > 0 && t <= points[i - 1].0 {
                return Err(NetAdaptError::Trace { line: i + 1, reason: "timestamps must strictly increase".into() });
            }
        }
        Ok(Self { points })
    }

    pub fn constant(bps: f64) -> Result<Self, NetAdaptError> {
        Self::new(vec![(0.0, bps)])
    }

    /// Alternates between `first` and `second` every `period` seconds.
    pub fn square(first_bps: f64, second_bps: f64, period_s: f64, duration_s: f64) -> Result<Self, NetAdaptError> {
        if !(period_s > 0.0) {
            return Err(NetAdaptError::Trace { line: 0, reason: "period must be positive".into() });
        }
        let mut points = Vec::new();
        let mut k = 0u32;
        while (k as f64) * period_s <= duration_s {
            points.push((k as f64 * period_s, if k % 2 == 0 { first_bps } else { second_bps }));
            k += 1;
        }
        Self::new(points)
    }

    /// Parses `t_seconds,bandwidth_mbps` lines. Blank lines, `#` comments and
    /// a non-numeric header line are skipped.
    pub fn parse_csv(text: &str) -> Result<Self, NetAdaptError> {
        let mut points = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |reason: String| NetAdaptError::Trace { line: i + 1, reason };
            let (t, b) = line.split_once(',').ok_or_else(|| err("expected two columns".into()))?;
            let (t, b) = (t.trim(), b.trim());
            let t: f64 = match t.parse() {
                Ok(v) => v,
                Err(_) if points.is_empty() && i == 0 => continue,
                Err(_) => return Err(err(format!("bad timestamp {t:?}"))),
            };
            let b: f64 = b.parse().map_err(|_| err(format!("bad bandwidth {b:?}")))?;
            if !(b > 0.0) {
                return Err(err(format!("bandwidth must be positive, got {b}")));
            }
            if let Some(&(prev, _)) = points.last() {
                if t <= prev {
                    return Err(err("timestamps must strictly increase".into()));
                }
            }
            points.push((t, b * 1e6));
        }
        Self::new(points)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("t_seconds,bandwidth_mbps\n");
        for &(t, b) in &self.points {
            let _ = writeln!(out, "{t},{}", b / 1e6);
        }
        out
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    fn segment(&self, t: f64) -> usize {
        self.points.partition_point(|&(ti, _)| ti <= t).saturating_sub(1)
    }

    pub fn bandwidth_at(&self, t_seconds: f64) -> f64 {
        self.points[self.segment(t_seconds)].1
    }

    /// Time at which `bits` finish transmitting when started at `start`,
    /// integrating the piecewise bandwidth.
    pub fn transmit_end(&self, start_s: f64, bits: f64) -> f64 {
        let mut t = start_s;
        let mut left = bits;
        let mut seg = self.segment(t);
        loop {
            let bw = self.points[seg].1;
            let end = self.points.get(seg + 1).map_or(f64::INFINITY, |p| p.0);
            let need = left / bw;
            if t + need <= end {
                return t + need;
            }
            left -= (end - t) * bw;
            t = end;
            seg += 1;
        }
    }
}
