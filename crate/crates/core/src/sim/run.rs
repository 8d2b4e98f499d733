//! Single-threaded discrete-event engine over an integer-microsecond clock.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap, VecDeque};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::customizer::{train, SmallModel, TrainConfig};
use crate::embed::{PromptTemplate, TextEmbeddingPool};
use crate::gate::{assess, decide, should_upload, AuditRecord, Route};
use crate::netadapt::{
    self, BandwidthEstimator, CalibrationPoint, PublishedThreshold, ThresholdDecision, ThresholdTable,
};
use crate::oracle::{Sample, SyntheticWorld};
use crate::scalar::Scalar;

use super::link::LinkState;
use super::message::{Message, RawSample};
use super::report::{summarize, ControlRecord, MetricsReport, SampleRecord};
use super::scenario::Scenario;
use super::SimError;

type Micros = u64;

fn to_us(t_s: f64) -> Micros {
    (t_s * 1e6).round() as Micros
}

fn to_s(t: Micros) -> f64 {
    t as f64 / 1e6
}

#[derive(Debug)]
enum Event {
    Probe,
    Arrival,
    ClassChange(usize),
    UpdateTick,
    RetrainDone(Box<SmallModelBytes>),
    CloudSend(Vec<u8>),
    CloudRecv(Vec<u8>),
    EdgeRecv(Vec<u8>),
}

#[derive(Debug)]
struct SmallModelBytes {
    checkpoint: Vec<u8>,
}

struct Queue {
    heap: BinaryHeap<Reverse<(Micros, u64)>>,
    events: BTreeMap<u64, Event>,
    seq: u64,
}

impl Queue {
    fn new() -> Self {
        Self { heap: BinaryHeap::new(), events: BTreeMap::new(), seq: 0 }
    }

    fn push(&mut self, t: Micros, e: Event) {
        self.heap.push(Reverse((t, self.seq)));
        self.events.insert(self.seq, e);
        self.seq += 1;
    }

    fn pop(&mut self) -> Option<(Micros, Event)> {
        let Reverse((t, seq)) = self.heap.pop()?;
        Some((t, self.events.remove(&seq).expect("event stored with its key")))
    }
}

fn wire_round<T: Scalar>(raw: &[T]) -> Vec<T> {
    raw.iter().map(|v| T::from_wire(v.as_f32())).collect()
}

fn to_wire<T: Scalar>(raw: &[T]) -> Vec<f32> {
    raw.iter().map(|v| v.as_f32()).collect()
}

struct Edge<T> {
    model: SmallModel<T>,
    pool: TextEmbeddingPool<T>,
    table: ThresholdTable,
    estimator: BandwidthEstimator,
    threshold: PublishedThreshold,
    /// Most recent samples with a known FM answer.
    calibration: VecDeque<(Sample<T>, String)>,
    /// Uploaded or offloaded samples awaiting a cloud reply.
    pending: BTreeMap<u64, Sample<T>>,
    uploads_this_cycle: usize,
}

struct Cloud<T> {
    model: SmallModel<T>,
    pool: TextEmbeddingPool<T>,
    dataset: Vec<Sample<T>>,
    new_uploads: usize,
    model_version: u64,
    retrains: u64,
}

struct Engine<'a, T> {
    sc: &'a Scenario,
    world: SyntheticWorld<T>,
    queue: Queue,
    uplink: LinkState,
    downlink: LinkState,
    edge: Edge<T>,
    cloud: Cloud<T>,
    env_classes: Vec<String>,
    arrivals: ChaCha8Rng,
    next_id: u64,
    samples: Vec<SampleRecord>,
    index: BTreeMap<u64, usize>,
    controls: Vec<ControlRecord>,
    decisions: Vec<ThresholdDecision>,
    audit: Vec<AuditRecord>,
    tables: Vec<(f64, ThresholdTable)>,
}

fn stream(seed: u64, k: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(k);
    rng
}

/// Runs a scenario to completion and checks the report invariants.
pub fn run_scenario<T: Scalar>(sc: &Scenario) -> Result<MetricsReport, SimError> {
    sc.validate()?;
    let world = SyntheticWorld::<T>::new(sc.world.clone())?;
    let mut engine = Engine::new(sc, world)?;
    engine.run()?;
    engine.finish()
}

impl<'a, T: Scalar> Engine<'a, T> {
    fn new(sc: &'a Scenario, world: SyntheticWorld<T>) -> Result<Self, SimError> {
        let env_classes = sc.initial_classes.clone();
        let pool = world.text_pool(&env_classes, sc.prompt.clone())?;
        let mut next_id = 0u64;

        let mut init_rng = stream(sc.seed, 4);
        let mut model =
            SmallModel::new(sc.arch_id.clone(), world.input_dim(), sc.hidden_dim, world.embed_dim(), &mut init_rng);
        let mut dataset = Vec::new();
        if sc.bootstrap_samples > 0 {
            dataset = world.dataset(&env_classes, sc.bootstrap_samples, next_id, &mut stream(sc.seed, 1))?;
            next_id += sc.bootstrap_samples as u64;
            model = train(&world, &pool, &dataset, &retrain_config(&sc.train, 0), sc.variant, model)?.0;
        }
        let edge_model = SmallModel::from_bytes(&model.to_bytes())?;

        let calib = world.dataset(&env_classes, sc.calibration_size, next_id, &mut stream(sc.seed, 2))?;
        next_id += sc.calibration_size as u64;
        let mut calibration = VecDeque::with_capacity(sc.calibration_size);
        for s in calib {
            let raw = wire_round(&s.raw);
            let fm = world.fm_predict(&pool, &raw)?.0;
            calibration.push_back((Sample { raw, ..s }, fm));
        }
        let table = build_table(&edge_model, &pool, &calibration, sc)?;

        let edge = Edge {
            model: edge_model,
            pool: pool.clone(),
            threshold: PublishedThreshold::new(table.grid_max()),
            table,
            estimator: BandwidthEstimator::new(sc.beta)?,
            calibration,
            pending: BTreeMap::new(),
            uploads_this_cycle: 0,
        };
        let cloud = Cloud { model, pool, dataset, new_uploads: 0, model_version: 0, retrains: 0 };
        let mut engine = Self {
            uplink: LinkState::new(sc.trace.clone(), sc.propagation_ms),
            downlink: LinkState::new(sc.trace.clone(), sc.propagation_ms),
            world,
            queue: Queue::new(),
            edge,
            cloud,
            env_classes,
            arrivals: stream(sc.seed, 3),
            next_id,
            samples: Vec::new(),
            index: BTreeMap::new(),
            controls: Vec::new(),
            decisions: Vec::new(),
            audit: Vec::new(),
            tables: Vec::new(),
            sc,
        };
        let t0 = engine.edge.table.clone();
        engine.record_table(0.0, t0);
        engine.queue.push(0, Event::Probe);
        engine.queue.push(0, Event::Arrival);
        for (i, c) in sc.schedule.iter().enumerate() {
            engine.queue.push(to_us(c.t_seconds), Event::ClassChange(i));
        }
        engine.queue.push(to_us(sc.update_interval_s), Event::UpdateTick);
        Ok(engine)
    }

    fn control(&mut self, t: f64, kind: &'static str, thre: Option<f64>, detail: String) {
        self.controls.push(ControlRecord { t, kind, thre, detail });
    }

    fn record_table(&mut self, t: f64, table: ThresholdTable) {
        let last = table.rows[table.rows.len() - 1];
        self.control(
            t,
            "table",
            None,
            format!(
                "rows={} monotone={} r_min_thre={:.4} acc_max_thre={:.4}",
                table.rows.len(),
                table.is_monotone(),
                table.rows[0].r,
                last.acc
            ),
        );
        self.tables.push((t, table));
    }

    fn run(&mut self) -> Result<(), SimError> {
        let end = to_us(self.sc.duration_s);
        while let Some((t, ev)) = self.queue.pop() {
            if t > end {
                break;
            }
            match ev {
                Event::Probe => self.on_probe(t)?,
                Event::Arrival => self.on_arrival(t)?,
                Event::ClassChange(i) => self.on_class_change(t, i)?,
                Event::UpdateTick => self.on_update_tick(t)?,
                Event::RetrainDone(m) => self.on_retrain_done(t, m.checkpoint)?,
                Event::CloudSend(bytes) => {
                    let arrive = self.downlink.deliver(&bytes, to_s(t));
                    self.queue.push(to_us(arrive), Event::EdgeRecv(bytes));
                }
                Event::CloudRecv(bytes) => self.on_cloud_recv(t, &bytes)?,
                Event::EdgeRecv(bytes) => self.on_edge_recv(t, &bytes)?,
            }
        }
        Ok(())
    }

    fn solve_and_publish(&mut self, t: Micros) {
        let Some(b) = self.edge.estimator.estimate() else { return };
        let d = netadapt::decide(&self.edge.table, to_s(t), b, &self.sc.latency, &self.sc.profile);
        self.edge.threshold.store(d.thre);
        self.decisions.push(d);
    }

    fn on_probe(&mut self, t: Micros) -> Result<(), SimError> {
        let ts = to_s(t);
        let measured = self.uplink.trace().bandwidth_at(ts);
        self.edge.estimator.probe_update(ts, measured)?;
        self.solve_and_publish(t);
        self.queue.push(t + to_us(self.sc.probe_interval_s), Event::Probe);
        Ok(())
    }

    fn on_arrival(&mut self, t: Micros) -> Result<(), SimError> {
        let ts = to_s(t);
        let id = self.next_id;
        self.next_id += 1;
        let class = self.env_classes[rand::Rng::random_range(&mut self.arrivals, 0..self.env_classes.len())].clone();
        let drawn = self.world.sample_draw(&class, id, &mut self.arrivals)?;
        let sample = Sample { raw: wire_round(&drawn.raw), ..drawn };
        let fm_class = self.world.fm_predict(&self.cloud.pool, &sample.raw)?.0;

        let (score, best) = assess(&self.edge.model, &self.edge.pool, &sample.raw)?;
        let thre = self.edge.threshold.load();
        let decision = decide(score, best, T::of(thre), &self.edge.pool);
        let unc = score.unc.as_f64();

        let upload = should_upload(&score, T::of(self.sc.upload_threshold))
            && self.edge.uploads_this_cycle < self.sc.upload_cap;
        let wire = to_wire(&sample.raw);
        let target = (self.sc.latency.sample_bits / 8.0).round() as usize;
        if upload {
            self.edge.uploads_this_cycle += 1;
            let msg = Message::QueryKnowledge(RawSample::padded_to(id, wire.clone(), target));
            self.send_up(ts, msg)?;
        }
        let (prediction, t_answer) = match decision.route {
            Route::Edge => (decision.edge_prediction.clone(), Some(ts + self.sc.latency.t_edge_ms / 1e3)),
            Route::Cloud => {
                let msg = Message::InferRequest(RawSample::padded_to(id, wire, target));
                self.send_up(ts, msg)?;
                (None, None)
            }
        };
        if upload || decision.route == Route::Cloud {
            self.edge.pending.insert(id, sample.clone());
        }
        let t_answer = t_answer.filter(|&a| a <= self.sc.duration_s);
        self.audit.push(AuditRecord {
            time: ts,
            sample_id: id,
            unc,
            thre,
            route: decision.route,
            predicted_class: decision.edge_prediction.clone().unwrap_or_default(),
        });
        self.index.insert(id, self.samples.len());
        self.samples.push(SampleRecord {
            sample_id: id,
            t_arrival: ts,
            true_class: sample.true_class.clone(),
            fm_class,
            route: decision.route,
            unc,
            thre,
            uploaded: upload,
            prediction: t_answer.and(prediction),
            t_answer,
        });
        let next = to_us(ts + 1.0 / self.sc.arrival_rate_hz);
        self.queue.push(next.max(t + 1), Event::Arrival);
        Ok(())
    }

    fn send_up(&mut self, ts: f64, msg: Message) -> Result<(), SimError> {
        let bytes = msg.encode()?;
        let arrive = self.uplink.deliver(&bytes, ts);
        self.queue.push(to_us(arrive), Event::CloudRecv(bytes));
        Ok(())
    }

    fn cloud_send(&mut self, t: Micros, msg: Message) -> Result<(), SimError> {
        self.queue.push(t, Event::CloudSend(msg.encode()?));
        Ok(())
    }

    fn pool_message(&self) -> Message {
        Message::PoolUpdate { prompt: self.cloud.pool.prompt().pattern().to_owned(), pool: self.cloud.pool.to_bytes() }
    }

    fn on_class_change(&mut self, t: Micros, i: usize) -> Result<(), SimError> {
        let added = &self.sc.schedule[i].classes;
        for c in added {
            let e = self.world.fm_text_encode(c, self.cloud.pool.prompt())?;
            self.cloud.pool.add(c, e)?;
            self.env_classes.push(c.clone());
        }
        self.control(to_s(t), "class_change", None, format!("added={}", added.join(";")));
        let msg = self.pool_message();
        self.cloud_send(t, msg)
    }

    fn on_update_tick(&mut self, t: Micros) -> Result<(), SimError> {
        let ts = to_s(t);
        self.edge.uploads_this_cycle = 0;
        self.queue.push(t + to_us(self.sc.update_interval_s), Event::UpdateTick);
        if self.cloud.new_uploads < self.sc.upload_trigger {
            let detail = format!("new_uploads={} trigger={}", self.cloud.new_uploads, self.sc.upload_trigger);
            self.control(ts, "retrain_skip", None, detail);
            return Ok(());
        }
        self.cloud.retrains += 1;
        let cfg = retrain_config(&self.sc.train, self.cloud.retrains);
        let (model, log) =
            train(&self.world, &self.cloud.pool, &self.cloud.dataset, &cfg, self.sc.variant, self.cloud.model.clone())?;
        let detail = format!(
            "dataset={} new_uploads={} holdout_accuracy={}",
            self.cloud.dataset.len(),
            self.cloud.new_uploads,
            log.final_accuracy().map_or_else(|| "nan".to_owned(), |a| format!("{a:.4}"))
        );
        self.control(ts, "retrain", None, detail);
        self.cloud.new_uploads = 0;
        self.queue.push(
            t + to_us(self.sc.retrain_cost_s),
            Event::RetrainDone(Box::new(SmallModelBytes { checkpoint: model.to_bytes() })),
        );
        self.cloud.model = model;
        Ok(())
    }

    fn on_retrain_done(&mut self, t: Micros, checkpoint: Vec<u8>) -> Result<(), SimError> {
        self.cloud.model_version += 1;
        let version = self.cloud.model_version;
        self.cloud_send(t, Message::ModelUpdate { version, checkpoint })?;
        let msg = self.pool_message();
        self.cloud_send(t, msg)
    }

    fn on_cloud_recv(&mut self, t: Micros, bytes: &[u8]) -> Result<(), SimError> {
        let reply_at = t + to_us(self.sc.latency.t_cloud_ms / 1e3);
        match Message::decode(bytes)? {
            Message::QueryKnowledge(s) => {
                let raw: Vec<T> = s.values.iter().map(|&v| T::from_wire(v)).collect();
                let label = self.world.knowledge_query(&self.cloud.pool, &raw)?;
                self.cloud.dataset.push(Sample { id: s.sample_id, raw, true_class: String::new() });
                self.cloud.new_uploads += 1;
                let reply = Message::PseudoResponse {
                    sample_id: s.sample_id,
                    class_name: label.class_name,
                    confidence: label.confidence.as_f32(),
                    text_embedding: to_wire(label.text_embedding.as_slice()),
                };
                self.cloud_send(reply_at, reply)
            }
            Message::InferRequest(s) => {
                let raw: Vec<T> = s.values.iter().map(|&v| T::from_wire(v)).collect();
                let (class_name, sim) = self.world.fm_predict(&self.cloud.pool, &raw)?;
                let reply = Message::InferResponse { sample_id: s.sample_id, class_name, similarity: sim.as_f32() };
                self.cloud_send(reply_at, reply)
            }
            other => Err(SimError::Invariant(format!("cloud received unexpected {}", other.msg_type()))),
        }
    }

    fn remember(&mut self, sample_id: u64, fm_class: String, done: bool) {
        let sample = if done {
            self.edge.pending.remove(&sample_id)
        } else {
            self.edge.pending.get(&sample_id).cloned()
        };
        if let Some(s) = sample {
            if self.edge.calibration.len() == self.sc.calibration_size {
                self.edge.calibration.pop_front();
            }
            self.edge.calibration.push_back((s, fm_class));
        }
    }

    fn on_edge_recv(&mut self, t: Micros, bytes: &[u8]) -> Result<(), SimError> {
        let ts = to_s(t);
        match Message::decode(bytes)? {
            Message::PseudoResponse { sample_id, class_name, .. } => {
                let rec = &self.samples[self.index[&sample_id]];
                // An offloaded sample stays pending until its inference reply.
                let done = rec.route == Route::Edge;
                if done {
                    self.remember(sample_id, class_name, true);
                }
            }
            Message::InferResponse { sample_id, class_name, .. } => {
                let i = self.index[&sample_id];
                let rec = &mut self.samples[i];
                rec.prediction = Some(class_name.clone());
                rec.t_answer = Some(ts);
                self.remember(sample_id, class_name, true);
            }
            Message::ModelUpdate { version, checkpoint } => {
                self.edge.model = SmallModel::from_bytes(&checkpoint)?;
                self.control(ts, "model_update", None, format!("version={version}"));
                self.rebuild_table(t)?;
            }
            Message::PoolUpdate { prompt, pool } => {
                let pool = TextEmbeddingPool::from_bytes(&pool, PromptTemplate::new(prompt)?)?;
                let detail = format!("version={} classes={}", pool.version(), pool.len());
                self.edge.pool = pool;
                self.control(ts, "pool_update", None, detail);
            }
            other => return Err(SimError::Invariant(format!("edge received unexpected {}", other.msg_type()))),
        }
        Ok(())
    }

    fn rebuild_table(&mut self, t: Micros) -> Result<(), SimError> {
        if self.edge.calibration.is_empty() {
            return Ok(());
        }
        let table = build_table(&self.edge.model, &self.edge.pool, &self.edge.calibration, self.sc)?;
        self.edge.table = table.clone();
        self.record_table(to_s(t), table);
        self.solve_and_publish(t);
        Ok(())
    }

    fn finish(self) -> Result<MetricsReport, SimError> {
        check_invariants(&self.samples, &self.tables, self.sc)?;
        let summary =
            summarize(&self.samples, &self.controls, self.tables.len(), &self.decisions, self.sc.report_window_s);
        Ok(MetricsReport {
            samples: self.samples,
            controls: self.controls,
            decisions: self.decisions,
            audit: self.audit,
            tables: self.tables,
            summary,
        })
    }
}

fn retrain_config(base: &TrainConfig, k: u64) -> TrainConfig {
    TrainConfig { seed: base.seed.wrapping_add(k), ..base.clone() }
}

fn build_table<T: Scalar>(
    model: &SmallModel<T>,
    pool: &TextEmbeddingPool<T>,
    calibration: &VecDeque<(Sample<T>, String)>,
    sc: &Scenario,
) -> Result<ThresholdTable, SimError> {
    let points = calibration
        .iter()
        .map(|(s, fm)| {
            let (score, best) = assess(model, pool, &s.raw)?;
            Ok(CalibrationPoint { unc: score.unc.as_f64(), edge_class: pool.name(best).to_owned(), fm_class: fm.clone() })
        })
        .collect::<Result<Vec<_>, SimError>>()?;
    Ok(ThresholdTable::from_points(&points, sc.grid_step, &sc.latency)?)
}

fn check_invariants(samples: &[SampleRecord], tables: &[(f64, ThresholdTable)], sc: &Scenario) -> Result<(), SimError> {
    let mut ids: Vec<u64> = samples.iter().map(|s| s.sample_id).collect();
    ids.sort_unstable();
    let before = ids.len();
    ids.dedup();
    if ids.len() != before {
        return Err(SimError::Invariant("a sample id was recorded twice".into()));
    }
    let floor_ms = 2.0 * sc.propagation_ms;
    for s in samples {
        let expected = if s.unc >= s.thre { Route::Edge } else { Route::Cloud };
        if s.route != expected {
            return Err(SimError::Invariant(format!("sample {} routed against its threshold", s.sample_id)));
        }
        if s.route == Route::Cloud {
            if let Some(l) = s.latency_ms() {
                if l < floor_ms - 1e-3 {
                    return Err(SimError::Invariant(format!(
                        "cloud sample {} answered in {l} ms, below twice the propagation delay",
                        s.sample_id
                    )));
                }
            }
        }
        if s.prediction.is_some() != s.t_answer.is_some() {
            return Err(SimError::Invariant(format!("sample {} has a partial answer", s.sample_id)));
        }
    }
    if let Some((t, _)) = tables.iter().find(|(_, tb)| !tb.is_monotone()) {
        return Err(SimError::Invariant(format!("threshold table built at {t} s is not monotone")));
    }
    Ok(())
}
