#![allow(dead_code)]

use std::path::PathBuf;

use openedge_core::embed::{normalize, PromptTemplate, TextEmbeddingPool};
use openedge_core::linalg::Matrix;
use openedge_core::oracle::class_name;
use openedge_core::sim::{encode_frame, Message, MsgType, RawSample, MAX_PAYLOAD};
use openedge_core::SmallModel;

pub fn golden_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden")
}

/// Set to regenerate the checked-in corpus.
pub fn blessing() -> bool {
    std::env::var_os("OPENEDGE_BLESS").is_some()
}

/// A 40-entry pool of signed basis vectors; every value is exact in f32.
pub fn golden_pool() -> TextEmbeddingPool<f64> {
    let dim = 8;
    let mut pool = TextEmbeddingPool::new(dim, PromptTemplate::default());
    for i in 0..40 {
        let mut v = vec![0.0; dim];
        v[i % dim] = if (i / dim) % 2 == 0 { 1.0 } else { -1.0 };
        v[(i + 3) % dim] += 0.75 * if i % 3 == 0 { 1.0 } else { -1.0 };
        pool.add(&class_name(i), normalize(&v).unwrap()).unwrap();
    }
    pool
}

pub fn golden_model() -> SmallModel<f64> {
    let ramp = |n: usize, scale: f64| (0..n).map(|k| (k as f64 - n as f64 / 2.0) * scale).collect::<Vec<_>>();
    SmallModel::from_parts(
        "mobilenet_v2",
        Matrix::from_vec(3, 4, ramp(12, 0.125)),
        ramp(3, 0.5),
        Matrix::from_vec(2, 3, ramp(6, 0.25)),
        ramp(2, 1.0),
    )
    .unwrap()
}

/// One message per type, in registry order.
pub fn golden_messages() -> Vec<(&'static str, Message)> {
    let pool = golden_pool();
    vec![
        (
            "01_query_knowledge.bin",
            Message::QueryKnowledge(RawSample { sample_id: 42, values: vec![0.5, -1.25, 3.0, 0.0], padding: 6 }),
        ),
        (
            "02_pseudo_response.bin",
            Message::PseudoResponse {
                sample_id: 42,
                class_name: "teapot".into(),
                confidence: 0.875,
                text_embedding: vec![0.6, 0.0, -0.8],
            },
        ),
        (
            "03_infer_request.bin",
            Message::InferRequest(RawSample { sample_id: 43, values: vec![1.0, 2.0], padding: 0 }),
        ),
        (
            "04_infer_response.bin",
            Message::InferResponse { sample_id: 43, class_name: "umbrella".into(), similarity: 0.8125 },
        ),
        ("05_model_update.bin", Message::ModelUpdate { version: 3, checkpoint: golden_model().to_bytes() }),
        (
            "06_pool_update.bin",
            Message::PoolUpdate { prompt: pool.prompt().pattern().to_owned(), pool: pool.to_bytes() },
        ),
        ("07_bw_probe.bin", Message::BwProbe { filler: vec![] }),
        ("08_probe_ack.bin", Message::ProbeAck { received_bytes: 9 }),
    ]
}

/// Corrupted frames and the error each must produce.
pub fn corrupted_cases() -> Vec<(&'static str, Vec<u8>, &'static str)> {
    let good = encode_frame(MsgType::InferResponse, &[1, 2, 3, 4]).unwrap();
    let mut bad_magic = good.clone();
    bad_magic[..4].copy_from_slice(b"EFM2");
    let mut unknown = good.clone();
    unknown[4] = 0x2a;
    let mut oversize = good[..9].to_vec();
    oversize[5..9].copy_from_slice(&((MAX_PAYLOAD + 1) as u32).to_le_bytes());
    let mut trailing = good.clone();
    trailing.extend_from_slice(b"EF");
    vec![
        ("bad_magic.bin", bad_magic, "BadMagic"),
        ("unknown_type.bin", unknown, "UnknownType"),
        ("truncated_header.bin", good[..6].to_vec(), "Truncated"),
        ("truncated_payload.bin", good[..11].to_vec(), "Truncated"),
        ("oversize.bin", oversize, "Oversize"),
        ("trailing.bin", trailing, "TrailingBytes"),
        ("malformed_ack.bin", encode_frame(MsgType::ProbeAck, &[1, 2, 3]).unwrap(), "Malformed"),
    ]
}

/// Latency-priority run over a link that alternates 123 ↔ 2 Mbps every
/// 30 s. Edge processing takes the whole 30 ms budget, as on the slower
/// reference devices.
pub fn step_scenario() -> openedge_core::Scenario {
    let mut sc = openedge_core::Scenario::default();
    sc.duration_s = 120.0;
    sc.trace = openedge_core::BandwidthTrace::square(123e6, 2e6, 30.0, sc.duration_s).unwrap();
    sc.latency.t_edge_ms = 30.0;
    sc.latency.t_cloud_ms = 10.0;
    sc.profile.latency_bound_ms = 30.0;
    sc
}
