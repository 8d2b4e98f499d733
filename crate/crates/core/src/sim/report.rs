use std::fmt::Write as _;

use serde::Serialize;

use crate::gate::{audit_csv, AuditRecord, Route};
use crate::netadapt::{decisions_csv, ThresholdDecision, ThresholdTable};

/// Life of one generated sample.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleRecord {
    pub sample_id: u64,
    pub t_arrival: f64,
    pub true_class: String,
    /// FM answer against the cloud pool at arrival time.
    pub fm_class: String,
    pub route: Route,
    pub unc: f64,
    pub thre: f64,
    pub uploaded: bool,
    pub prediction: Option<String>,
    pub t_answer: Option<f64>,
}

impl SampleRecord {
    pub fn latency_ms(&self) -> Option<f64> {
        self.t_answer.map(|t| (t - self.t_arrival) * 1e3)
    }

    pub fn is_answered(&self) -> bool {
        self.t_answer.is_some()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlRecord {
    pub t: f64,
    pub kind: &'static str,
    pub thre: Option<f64>,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WindowStats {
    pub start_s: f64,
    pub samples: usize,
    pub edge_fraction: f64,
    pub accuracy: Option<f64>,
    pub mean_thre: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub samples_total: usize,
    pub edge_answered: usize,
    pub cloud_answered: usize,
    pub in_flight: usize,
    pub conserved: bool,
    pub uploads: usize,
    pub retrains: usize,
    pub model_updates_applied: usize,
    pub tables_built: usize,
    pub distinct_thresholds: Vec<f64>,
    pub edge_fraction: f64,
    pub accuracy: Option<f64>,
    pub fm_agreement: Option<f64>,
    pub mean_latency_ms: Option<f64>,
    pub mean_edge_latency_ms: Option<f64>,
    pub mean_cloud_latency_ms: Option<f64>,
    pub windows: Vec<WindowStats>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub samples: Vec<SampleRecord>,
    pub controls: Vec<ControlRecord>,
    pub decisions: Vec<ThresholdDecision>,
    pub audit: Vec<AuditRecord>,
    /// Every table the edge built, with its build time.
    pub tables: Vec<(f64, ThresholdTable)>,
    pub summary: Summary,
}

fn opt(v: Option<f64>, prec: usize) -> String {
    v.map_or_else(String::new, |x| format!("{x:.prec$}"))
}

impl MetricsReport {
    /// One row per sample and one per control event, ordered by time.
    pub fn to_csv(&self) -> String {
        let mut rows: Vec<(f64, usize, String)> = Vec::with_capacity(self.samples.len() + self.controls.len());
        for s in &self.samples {
            rows.push((
                s.t_arrival,
                rows.len(),
                format!(
                    "sample,{:.6},{},{},{},{},{:.6},{:.2},{},{},{},",
                    s.t_arrival,
                    s.sample_id,
                    s.true_class,
                    s.fm_class,
                    s.route,
                    s.unc,
                    s.thre,
                    u8::from(s.uploaded),
                    s.prediction.as_deref().unwrap_or(""),
                    opt(s.latency_ms(), 6),
                ),
            ));
        }
        for c in &self.controls {
            rows.push((
                c.t,
                rows.len(),
                format!("{},{:.6},,,,,,{},,,,{}", c.kind, c.t, opt(c.thre, 2), c.detail),
            ));
        }
        rows.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut out = String::from(
            "kind,t_s,sample_id,true_class,fm_class,route,unc,thre,uploaded,prediction,latency_ms,detail\n",
        );
        for (_, _, line) in rows {
            let _ = writeln!(out, "{line}");
        }
        out
    }

    pub fn summary_json(&self) -> String {
        serde_json::to_string_pretty(&self.summary).expect("summary serializes") + "\n"
    }

    pub fn thresholds_csv(&self) -> String {
        decisions_csv(&self.decisions)
    }

    pub fn audit_csv(&self) -> String {
        audit_csv(&self.audit)
    }
}

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

pub(crate) fn summarize(
    samples: &[SampleRecord],
    controls: &[ControlRecord],
    tables: usize,
    decisions: &[ThresholdDecision],
    window_s: f64,
) -> Summary {
    let answered = || samples.iter().filter(|s| s.is_answered());
    let edge_answered = answered().filter(|s| s.route == Route::Edge).count();
    let cloud_answered = answered().filter(|s| s.route == Route::Cloud).count();
    let in_flight = samples.iter().filter(|s| !s.is_answered()).count();
    let mut distinct: Vec<f64> = decisions.iter().map(|d| d.thre).collect();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    let hit = |s: &SampleRecord, target: &str| f64::from(u8::from(s.prediction.as_deref() == Some(target)));

    let mut windows = Vec::new();
    if let Some(last) = samples.last() {
        let count = (last.t_arrival / window_s).floor() as usize + 1;
        for k in 0..count {
            let lo = k as f64 * window_s;
            let hi = lo + window_s;
            let w: Vec<&SampleRecord> = samples.iter().filter(|s| s.t_arrival >= lo && s.t_arrival < hi).collect();
            if w.is_empty() {
                continue;
            }
            windows.push(WindowStats {
                start_s: lo,
                samples: w.len(),
                edge_fraction: w.iter().filter(|s| s.route == Route::Edge).count() as f64 / w.len() as f64,
                accuracy: mean(w.iter().filter(|s| s.is_answered()).map(|s| hit(s, &s.true_class))),
                mean_thre: mean(w.iter().map(|s| s.thre)).unwrap_or(0.0),
            });
        }
    }

    Summary {
        samples_total: samples.len(),
        edge_answered,
        cloud_answered,
        in_flight,
        conserved: edge_answered + cloud_answered + in_flight == samples.len(),
        uploads: samples.iter().filter(|s| s.uploaded).count(),
        retrains: controls.iter().filter(|c| c.kind == "retrain").count(),
        model_updates_applied: controls.iter().filter(|c| c.kind == "model_update").count(),
        tables_built: tables,
        distinct_thresholds: distinct,
        edge_fraction: if samples.is_empty() {
            0.0
        } else {
            samples.iter().filter(|s| s.route == Route::Edge).count() as f64 / samples.len() as f64
        },
        accuracy: mean(answered().map(|s| hit(s, &s.true_class))),
        fm_agreement: mean(answered().map(|s| hit(s, &s.fm_class))),
        mean_latency_ms: mean(answered().filter_map(|s| s.latency_ms())),
        mean_edge_latency_ms: mean(answered().filter(|s| s.route == Route::Edge).filter_map(|s| s.latency_ms())),
        mean_cloud_latency_ms: mean(answered().filter(|s| s.route == Route::Cloud).filter_map(|s| s.latency_ms())),
        windows,
    }
}
