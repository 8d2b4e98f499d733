//! Acceptance criteria. Runs as a plain binary and prints one PASS/FAIL line
//! per criterion; exits non-zero if any criterion fails.

mod common;

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use openedge_core::customizer::{grad, loss_text, loss_total, loss_vis, train, DistillItem, TrainConfig, Variant};
use openedge_core::embed::{normalize, Embedding, PromptTemplate, TextEmbeddingPool};
use openedge_core::gate::{should_upload, uncertainty, Route};
use openedge_core::netadapt::{
    build_table, estimate_latency, solve_threshold, CalibrationPoint, LatencyModel, TableRow, ThresholdTable,
};
use openedge_core::oracle::{PseudoLabel, Sample};
use openedge_core::select::{DeviceProfile, ModelPool, ModelSpec, Priority};
use openedge_core::sim::{decode_frame, encode_frame, run_scenario, Message, MessageError};
use openedge_core::{Scenario, SmallModel, SyntheticWorld, WorldConfig};

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn within(limit: Duration, started: Instant, detail: String) -> Outcome {
    let took = started.elapsed();
    check(took < limit, format!("{detail}; {:.2}s of {}s", took.as_secs_f64(), limit.as_secs()))
}

fn rand_unit(rng: &mut ChaCha8Rng, d: usize) -> Embedding<f64> {
    let v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
    normalize(&v).unwrap()
}

fn instance(seed: u64, p: usize, h: usize, d: usize, bs: usize) -> (SmallModel<f64>, Vec<DistillItem<f64>>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let model = SmallModel::new("acc", p, h, d, &mut rng);
    let items = (0..bs)
        .map(|i| DistillItem {
            id: i as u64,
            raw: (0..p).map(|_| rng.random_range(-1.5..1.5)).collect(),
            fm_embedding: rand_unit(&mut rng, d),
            pseudo: PseudoLabel {
                class_name: format!("c{i}"),
                text_embedding: rand_unit(&mut rng, d),
                confidence: rng.random_range(0.0..1.0),
            },
            pseudo_index: i,
        })
        .collect();
    (model, items)
}

fn criterion_1() -> Outcome {
    let started = Instant::now();
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    let mut instances = 0;
    for seed in 0..24u64 {
        let bs = [1, 2, 4][seed as usize % 3];
        let (model, items) = instance(1000 + seed, 6, 8, 8, bs);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cfg = TrainConfig {
            lambda: rng.random_range(0.0..1.0),
            tau: rng.random_range(0.2..2.0),
            alpha_vis: rng.random_range(0.0..2.0),
            ..TrainConfig::default()
        };
        let analytic = grad(&items, &model, &cfg).unwrap().to_flat();
        let theta = model.to_flat();
        let mut probe = model.clone();
        for k in 0..theta.len() {
            let mut p = theta.clone();
            p[k] += h;
            probe.set_flat(&p);
            let up = loss_total(&items, &probe, &cfg).unwrap();
            p[k] -= 2.0 * h;
            probe.set_flat(&p);
            let down = loss_total(&items, &probe, &cfg).unwrap();
            let fd = (up - down) / (2.0 * h);
            let rel = (fd - analytic[k]).abs() / fd.abs().max(analytic[k].abs()).max(1e-6);
            worst = worst.max(rel);
        }
        instances += 1;
    }
    let ok = worst < 1e-4;
    let detail = format!("{instances} instances, worst relative error {worst:.2e}");
    if !ok {
        return Err(detail);
    }
    within(Duration::from_secs(10), started, detail)
}

fn criterion_2() -> Outcome {
    let (model, mut items) = instance(77, 6, 8, 8, 4);
    let single = loss_text(&items[..1], &model, 0.5, 1.0).unwrap();
    for it in &mut items {
        it.pseudo.confidence = 0.0;
    }
    let unweighted = loss_text(&items, &model, 0.5, 1.0).unwrap();
    for it in &mut items {
        it.fm_embedding = model.embed(&it.raw).unwrap();
    }
    let perfect = loss_vis(&items, &model).unwrap();
    check(
        single.abs() <= 1e-10 && unweighted.abs() <= 1e-10 && perfect.abs() <= 1e-10,
        format!("bs=1 text {single:e}, w=0 text {unweighted:e}, perfect vis {perfect:e}"),
    )
}

fn brute_top_two(pool: &[Vec<f64>], q: &[f64]) -> (usize, f64, f64) {
    let mut best = 0;
    let mut sims = Vec::new();
    for (i, e) in pool.iter().enumerate() {
        let mut s = 0.0;
        for k in 0..q.len() {
            s += e[k] * q[k];
        }
        sims.push(s);
        if s > sims[best] {
            best = i;
        }
    }
    let mut second = -1.0f64;
    for (i, &s) in sims.iter().enumerate() {
        if i != best && (second == -1.0 || s > second) {
            second = s;
        }
    }
    if pool.len() == 1 {
        second = -1.0;
    }
    (best, sims[best], second)
}

fn brute_select<'a>(specs: &'a [ModelSpec], p: &DeviceProfile) -> Option<&'a ModelSpec> {
    let mut best: Option<&ModelSpec> = None;
    for s in specs {
        if s.task_tag != p.task_tag || s.memory > p.memory_budget || s.flops > p.flops_budget {
            continue;
        }
        let better = match best {
            None => true,
            Some(b) => {
                (s.accuracy, -s.flops, -s.memory) > (b.accuracy, -b.flops, -b.memory)
                    || ((s.accuracy, s.flops, s.memory) == (b.accuracy, b.flops, b.memory) && s.arch_id < b.arch_id)
            }
        };
        if better {
            best = Some(s);
        }
    }
    best
}

fn brute_solve(t: &ThresholdTable, b: f64, lm: &LatencyModel, p: &DeviceProfile) -> f64 {
    let lat = |r: &TableRow| {
        if r.r == 1.0 {
            r.t_edge_ms
        } else {
            r.r * r.t_edge_ms + (1.0 - r.r) * (lm.sample_bits / b * 1e3 + r.t_cloud_ms)
        }
    };
    match p.priority {
        Priority::Latency => {
            let mut pick = None;
            for r in &t.rows {
                if lat(r) <= p.latency_bound_ms {
                    pick = Some(r.thre);
                }
            }
            pick.unwrap_or(t.rows[0].thre)
        }
        Priority::Accuracy => {
            let top = t.rows[t.rows.len() - 1].acc;
            for r in &t.rows {
                if top - r.acc <= p.accuracy_degradation_bound {
                    return r.thre;
                }
            }
            t.rows[t.rows.len() - 1].thre
        }
    }
}

fn criterion_3() -> Outcome {
    let n = 1000;
    let mut mismatches = [0usize; 4];
    for seed in 0..n as u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = rng.random_range(2..10);
        let size = rng.random_range(1..20);
        let mut vecs: Vec<Vec<f64>> = Vec::new();
        let mut pool = TextEmbeddingPool::new(d, PromptTemplate::default());
        for i in 0..size {
            // Occasional duplicates exercise the tie-break.
            let e = if i > 0 && rng.random_bool(0.2) {
                pool.embedding(rng.random_range(0..i)).clone()
            } else {
                rand_unit(&mut rng, d)
            };
            vecs.push(e.as_slice().to_vec());
            pool.add(&format!("c{i}"), e).unwrap();
        }
        let q = if rng.random_bool(0.2) { pool.embedding(rng.random_range(0..size)).clone() } else { rand_unit(&mut rng, d) };
        let m = pool.best_match(&q).unwrap();
        let (bi, bs, b2) = brute_top_two(&vecs, q.as_slice());
        if m.index != bi || m.similarity != bs || m.runner_up != b2 {
            mismatches[0] += 1;
        }

        let model = SmallModel::<f64>::new("m", 5, 4, d, &mut rng);
        let raw: Vec<f64> = (0..5).map(|_| rng.random_range(-2.0..2.0)).collect();
        let u = uncertainty(&model, &pool, &raw).unwrap();
        let (_, s1, s2) = brute_top_two(&vecs, model.embed(&raw).unwrap().as_slice());
        if u.unc != s1 - s2 || u.sim1 != s1 || u.sim2 != s2 {
            mismatches[1] += 1;
        }

        let mut specs = Vec::new();
        let mut mp = ModelPool::new();
        for i in 0..rng.random_range(1..33) {
            let s = ModelSpec {
                arch_id: format!("a{:02}", rng.random_range(0..99)) + &format!("_{i}"),
                task_tag: if rng.random_bool(0.7) { "vision".into() } else { "audio".into() },
                accuracy: (rng.random_range(0..8) as f64) / 8.0,
                flops: (rng.random_range(1..5) as f64) * 1e8,
                memory: (rng.random_range(1..5) as f64) * 1e6,
                latency_edge: Default::default(),
                hidden: 8,
            };
            mp.register(s.clone()).unwrap();
            specs.push(s);
        }
        let profile = DeviceProfile {
            memory_budget: rng.random_range(0.5e6..5e6),
            flops_budget: rng.random_range(0.5e8..5e8),
            ..DeviceProfile::default()
        };
        let got = mp.select(&profile).ok().map(|s| s.arch_id.clone());
        let want = brute_select(&specs, &profile).map(|s| s.arch_id.clone());
        if got != want {
            mismatches[2] += 1;
        }

        let points: Vec<CalibrationPoint> = (0..rng.random_range(1..200))
            .map(|_| CalibrationPoint {
                unc: rng.random_range(0.0..1.5),
                edge_class: format!("c{}", rng.random_range(0..3)),
                fm_class: format!("c{}", rng.random_range(0..3)),
            })
            .collect();
        let lm = LatencyModel {
            sample_bits: rng.random_range(1e4..2e6),
            t_edge_ms: rng.random_range(1.0..50.0),
            t_cloud_ms: rng.random_range(1.0..50.0),
        };
        let table = ThresholdTable::from_points(&points, 0.05, &lm).unwrap();
        let prof = DeviceProfile {
            priority: if rng.random_bool(0.5) { Priority::Latency } else { Priority::Accuracy },
            latency_bound_ms: rng.random_range(1.0..80.0),
            accuracy_degradation_bound: rng.random_range(0.0..0.3),
            ..DeviceProfile::default()
        };
        let b = 10f64.powf(rng.random_range(3.0..9.0));
        if solve_threshold(&table, b, &lm, &prof) != brute_solve(&table, b, &lm, &prof) {
            mismatches[3] += 1;
        }
    }
    check(
        mismatches == [0; 4],
        format!(
            "{n} instances each; mismatches best_match={} uncertainty={} select={} solve_threshold={}",
            mismatches[0], mismatches[1], mismatches[2], mismatches[3]
        ),
    )
}

fn criterion_4() -> Outcome {
    let mut tables: Vec<(String, ThresholdTable)> = Vec::new();
    let lm = LatencyModel::default();
    for (seed, sigma) in [(1u64, 0.1), (2, 0.3), (3, 0.5)] {
        let world = SyntheticWorld::<f64>::new(WorldConfig { noise_sigma: sigma, ..WorldConfig::default() }).unwrap();
        let classes = world.class_names().to_vec();
        let pool = world.text_pool(&classes, PromptTemplate::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = world.dataset(&classes, 600, 0, &mut rng).unwrap();
        let init = SmallModel::new("m", world.input_dim(), 32, world.embed_dim(), &mut rng);
        let untrained = init.clone();
        let cfg = TrainConfig { seed, epochs: 20, ..TrainConfig::default() };
        let trained = train(&world, &pool, &data, &cfg, Variant::Semantic, init).unwrap().0;
        let calib = world.dataset(&classes, 200, 10_000, &mut rng).unwrap();
        let fm: Vec<String> = calib.iter().map(|s| world.fm_predict(&pool, &s.raw).unwrap().0).collect();
        for (name, m) in [("untrained", &untrained), ("trained", &trained)] {
            tables.push((format!("{name} σ={sigma}"), build_table(m, &pool, &fm, &calib, 0.05, &lm).unwrap()));
        }
    }
    for sc in [Scenario::demo(), common::step_scenario()] {
        let r = run_scenario::<f64>(&sc).unwrap();
        tables.extend(r.tables.into_iter().map(|(t, tb)| (format!("sim@{t}s"), tb)));
    }
    let bad_mono: Vec<&str> = tables.iter().filter(|(_, t)| !t.is_monotone()).map(|(n, _)| n.as_str()).collect();
    let bad_acc: Vec<String> = tables
        .iter()
        .filter(|(_, t)| t.rows[t.rows.len() - 1].acc != 1.0)
        .map(|(n, t)| format!("{n} acc={}", t.rows[t.rows.len() - 1].acc))
        .collect();
    check(
        bad_mono.is_empty() && bad_acc.is_empty(),
        format!(
            "{} tables; non-monotone {:?}; acc(max thre) != 1: {:?}",
            tables.len(),
            bad_mono,
            bad_acc
        ),
    )
}

fn criterion_5() -> Outcome {
    let row = TableRow { thre: 0.5, r: 0.5, acc: 1.0, t_edge_ms: 30.0, t_cloud_ms: 10.0 };
    // Dim chosen so Dim / B is exactly 20 ms.
    let lm = LatencyModel { sample_bits: 20_000.0, t_edge_ms: 30.0, t_cloud_ms: 10.0 };
    let est = estimate_latency(&row, 1e6, &lm).unwrap();
    let t_trans = LatencyModel { sample_bits: 1_204_224.0, ..lm }.t_trans_ms(55e6).unwrap();
    check(
        est == 30.0 && (t_trans - 21.9).abs() <= 0.1,
        format!("estimate {est} ms, t_trans {t_trans:.4} ms"),
    )
}

fn criterion_6() -> Outcome {
    let started = Instant::now();
    let sc = common::step_scenario();
    let r = run_scenario::<f64>(&sc).unwrap();
    let table = &r.tables.last().unwrap().1;
    let (gmin, gmax) = (table.grid_min(), table.grid_max());
    let r_at = |thre: f64| table.row(thre).unwrap().r;
    let period = 30.0;
    let probe = sc.probe_interval_s;
    let mut problems = Vec::new();
    let mut low_values = Vec::new();
    let mut switch_delays = Vec::new();
    let phases = (sc.duration_s / period) as usize;
    for k in 0..phases {
        let (start, end) = (k as f64 * period, (k + 1) as f64 * period);
        let high = k % 2 == 0;
        let in_phase: Vec<_> = r.decisions.iter().filter(|d| d.t_seconds >= start && d.t_seconds < end).collect();
        // Switching: the first decision of the new regime within two probes.
        let reached = in_phase.iter().find(|d| if high { d.thre == gmax } else { d.thre < gmax });
        match reached {
            Some(d) if k == 0 || d.t_seconds - start <= 2.0 * probe => switch_delays.push(d.t_seconds - start),
            Some(d) => problems.push(format!("phase {k} switched after {} s", d.t_seconds - start)),
            None => problems.push(format!("phase {k} never switched")),
        }
        let settled: Vec<_> = in_phase.iter().filter(|d| d.t_seconds >= start + 2.0 * probe).collect();
        for d in &settled {
            if high && d.thre != gmax {
                problems.push(format!("high phase thre {} at {} s", d.thre, d.t_seconds));
            }
        }
        if !high {
            // Steady state of the low phase: the last decision before the step back.
            let last = settled.last().unwrap();
            low_values.push(last.thre);
            if !(last.thre == gmin || r_at(last.thre) == r_at(gmin)) {
                problems.push(format!(
                    "low phase settled at {} (r={}) vs grid minimum {} (r={})",
                    last.thre,
                    r_at(last.thre),
                    gmin,
                    r_at(gmin)
                ));
            }
        }
    }
    let detail = format!(
        "high phases at {gmax}; low phases settle at {low_values:?}, routing the same fraction as the grid minimum {gmin} (r={}); switch delays {switch_delays:?} s; {}",
        r_at(gmin),
        if problems.is_empty() { "no violations".to_owned() } else { problems.join("; ") }
    );
    if !problems.is_empty() {
        return Err(detail);
    }
    within(Duration::from_secs(30), started, detail)
}

fn criterion_7() -> Outcome {
    let sizes = [100usize, 1600];
    let thre = 0.5;
    let seeds = [11u64, 12, 13];
    let world = SyntheticWorld::<f64>::new(WorldConfig { noise_sigma: 0.1, num_classes: 10, ..WorldConfig::default() })
        .unwrap();
    let classes = world.class_names().to_vec();
    let pool = world.text_pool(&classes, PromptTemplate::default()).unwrap();
    let eval = world.dataset(&classes, 1000, 1_000_000, &mut world.rng_stream(99)).unwrap();
    let mut upload = [0.0; 2];
    let mut edge = [0.0; 2];
    for &seed in &seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let collected = world.dataset(&classes, sizes[1], 0, &mut rng).unwrap();
        let init = SmallModel::new("m", world.input_dim(), 32, world.embed_dim(), &mut rng);
        for (i, &n) in sizes.iter().enumerate() {
            let cfg = TrainConfig { seed, ..TrainConfig::default() };
            let model = train(&world, &pool, &collected[..n], &cfg, Variant::Semantic, init.clone()).unwrap().0;
            let (mut up, mut ed) = (0usize, 0usize);
            for s in &eval {
                let u = uncertainty(&model, &pool, &s.raw).unwrap();
                up += usize::from(should_upload(&u, 0.99));
                ed += usize::from(u.unc >= thre);
            }
            upload[i] += up as f64 / eval.len() as f64 / seeds.len() as f64;
            edge[i] += ed as f64 / eval.len() as f64 / seeds.len() as f64;
        }
    }
    check(
        upload[1] < upload[0] && edge[1] > edge[0],
        format!(
            "upload fraction {:.3} → {:.3}, edge fraction at thre {thre} {:.3} → {:.3} (100 → 1600 samples, mean of {} seeds)",
            upload[0],
            upload[1],
            edge[0],
            edge[1],
            seeds.len()
        ),
    )
}

fn criterion_8() -> Outcome {
    let started = Instant::now();
    let world = SyntheticWorld::<f64>::new(WorldConfig { noise_sigma: 0.3, ..WorldConfig::default() }).unwrap();
    let classes = world.class_names().to_vec();
    let pool = world.text_pool(&classes, PromptTemplate::default()).unwrap();
    let mut diffs = Vec::new();
    let mut pairs = Vec::new();
    for seed in 0..5u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(500 + seed);
        let data: Vec<Sample<f64>> = world.dataset(&classes, 800, 0, &mut rng).unwrap();
        let init = SmallModel::new("m", world.input_dim(), 32, world.embed_dim(), &mut rng);
        let cfg = TrainConfig { seed, ..TrainConfig::default() };
        let acc = |v: Variant| {
            train(&world, &pool, &data, &cfg, v, init.clone()).unwrap().1.final_accuracy().unwrap()
        };
        let (sem, kd) = (acc(Variant::Semantic), acc(Variant::VanillaKd));
        pairs.push(format!("{sem:.3}/{kd:.3}"));
        diffs.push(sem - kd);
    }
    let mean = diffs.iter().sum::<f64>() / diffs.len() as f64;
    let detail = format!("semantic/vanilla_kd held-out accuracy per seed {pairs:?}, mean difference {mean:+.4}");
    if mean < 0.0 {
        return Err(detail);
    }
    within(Duration::from_secs(120), started, detail)
}

fn criterion_9() -> Outcome {
    let dir = common::golden_dir();
    let mut roundtrips = 0;
    for (name, msg) in common::golden_messages() {
        let bytes = std::fs::read(dir.join("frames").join(name)).map_err(|e| format!("{name}: {e}"))?;
        let frame = decode_frame(&bytes).map_err(|e| format!("{name}: {e}"))?;
        if encode_frame(frame.msg_type, &frame.payload).unwrap() != bytes {
            return Err(format!("{name}: frame re-encoding differs"));
        }
        let decoded = Message::decode(&bytes).map_err(|e| format!("{name}: {e}"))?;
        if decoded != msg || decoded.encode().unwrap() != bytes {
            return Err(format!("{name}: message round trip differs"));
        }
        roundtrips += 1;
    }
    let cases = std::fs::read_to_string(dir.join("corrupted/cases.txt")).map_err(|e| e.to_string())?;
    let mut rejected = 0;
    for line in cases.lines() {
        let (file, expected) = line.split_once(' ').ok_or("bad manifest line")?;
        let bytes = std::fs::read(dir.join("corrupted").join(file)).map_err(|e| format!("{file}: {e}"))?;
        let got = match Message::decode(&bytes) {
            Ok(_) => "Ok".to_owned(),
            Err(MessageError::Malformed { .. }) => "Malformed".to_owned(),
            Err(MessageError::Frame(e)) => format!("{e:?}").split(['(', ' ', '{']).next().unwrap().to_owned(),
        };
        if got != expected {
            return Err(format!("{file}: expected {expected}, got {got}"));
        }
        rejected += 1;
    }
    check(roundtrips == 8, format!("{roundtrips} golden frames round-trip, {rejected} corrupted frames rejected as specified"))
}

fn criterion_10() -> Outcome {
    let sc = Scenario::demo();
    let a = run_scenario::<f64>(&sc).map_err(|e| e.to_string())?;
    let b = run_scenario::<f64>(&sc).map_err(|e| e.to_string())?;
    let identical = a.to_csv() == b.to_csv()
        && a.summary_json() == b.summary_json()
        && a.thresholds_csv() == b.thresholds_csv()
        && a.audit_csv() == b.audit_csv();
    let expected = (sc.duration_s * sc.arrival_rate_hz).floor() as usize + 1;
    let mut ids: Vec<u64> = a.samples.iter().map(|s| s.sample_id).collect();
    ids.sort_unstable();
    ids.dedup();
    let contiguous = ids.len() == a.samples.len() && ids.windows(2).all(|w| w[1] == w[0] + 1);
    let s = &a.summary;
    let edge = a.samples.iter().filter(|x| x.is_answered() && x.route == Route::Edge).count();
    let cloud = a.samples.iter().filter(|x| x.is_answered() && x.route == Route::Cloud).count();
    let open = a.samples.iter().filter(|x| !x.is_answered()).count();
    let conserved = s.conserved && edge + cloud + open == expected && a.samples.len() == expected && contiguous;
    check(
        identical && conserved,
        format!(
            "reports identical: {identical}; {expected} generated = {edge} edge + {cloud} cloud + {open} in flight, ids unique and contiguous: {contiguous}"
        ),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("gradient oracle", criterion_1),
        ("loss anchors", criterion_2),
        ("brute-force equivalence", criterion_3),
        ("table monotonicity", criterion_4),
        ("latency anchors", criterion_5),
        ("bandwidth adaptation", criterion_6),
        ("customization trends", criterion_7),
        ("semantic vs vanilla_kd", criterion_8),
        ("golden frames", criterion_9),
        ("determinism and conservation", criterion_10),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let started = Instant::now();
        let outcome = std::panic::catch_unwind(f).unwrap_or_else(|_| Err("panicked".into()));
        let secs = started.elapsed().as_secs_f64();
        match outcome {
            Ok(d) => println!("criterion {:>2} {name}: PASS ({d}) [{secs:.2}s]", i + 1),
            Err(d) => {
                failed += 1;
                println!("criterion {:>2} {name}: FAIL ({d}) [{secs:.2}s]", i + 1);
            }
        }
    }
    println!("acceptance: {} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
