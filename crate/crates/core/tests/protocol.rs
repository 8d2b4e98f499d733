mod common;

use std::fs;

use common::*;
use openedge_core::embed::{PromptTemplate, TextEmbeddingPool};
use openedge_core::sim::{decode_frame, encode_frame, FrameError, Message, MessageError, MsgType};
use openedge_core::SmallModel;

fn error_name(e: &MessageError) -> &'static str {
    match e {
        MessageError::Frame(FrameError::BadMagic(_)) => "BadMagic",
        MessageError::Frame(FrameError::UnknownType(_)) => "UnknownType",
        MessageError::Frame(FrameError::Truncated { .. }) => "Truncated",
        MessageError::Frame(FrameError::Oversize(_)) => "Oversize",
        MessageError::Frame(FrameError::TrailingBytes(_)) => "TrailingBytes",
        MessageError::Malformed { .. } => "Malformed",
    }
}

#[test]
fn golden_frames_match_codec() {
    let dir = golden_dir().join("frames");
    for (name, msg) in golden_messages() {
        let encoded = msg.encode().unwrap();
        if blessing() {
            fs::write(dir.join(name), &encoded).unwrap();
        }
        let stored = fs::read(dir.join(name)).unwrap();
        assert_eq!(stored, encoded, "{name} differs from the current encoder");
        let frame = decode_frame(&stored).unwrap();
        assert_eq!(encode_frame(frame.msg_type, &frame.payload).unwrap(), stored);
        assert_eq!(Message::decode(&stored).unwrap(), msg);
    }
}

#[test]
fn corrupted_frames_fail_as_specified() {
    let dir = golden_dir().join("corrupted");
    let mut manifest = String::new();
    for (name, bytes, expected) in corrupted_cases() {
        if blessing() {
            fs::write(dir.join(name), &bytes).unwrap();
        }
        manifest.push_str(&format!("{name} {expected}\n"));
    }
    if blessing() {
        fs::write(dir.join("cases.txt"), &manifest).unwrap();
    }
    let listed = fs::read_to_string(dir.join("cases.txt")).unwrap();
    assert_eq!(listed, manifest);
    for line in listed.lines() {
        let (file, expected) = line.split_once(' ').unwrap();
        let bytes = fs::read(dir.join(file)).unwrap();
        let err = Message::decode(&bytes).unwrap_err();
        assert_eq!(error_name(&err), expected, "{file}");
    }
}

#[test]
fn pool_payload_roundtrip_is_identity() {
    let pool = golden_pool();
    assert_eq!(pool.len(), 40);
    let bytes = pool.to_bytes();
    let back = TextEmbeddingPool::<f64>::from_bytes(&bytes, PromptTemplate::default()).unwrap();
    assert_eq!(back.to_bytes(), bytes);
    assert_eq!(back.names(), pool.names());
}

#[test]
fn checkpoint_payload_roundtrip() {
    let m = golden_model();
    let back = SmallModel::<f64>::from_bytes(&m.to_bytes()).unwrap();
    assert_eq!(back, m);
}

#[test]
fn probe_frame_is_header_only() {
    assert_eq!(Message::BwProbe { filler: vec![] }.encode().unwrap().len(), 9);
    assert_eq!(MsgType::ALL.iter().map(|t| t.code()).collect::<Vec<_>>(), (1..=8).collect::<Vec<u8>>());
}

#[test]
fn hand_assembled_frames() {
    let ack = std::fs::read(golden_dir().join("frames/08_probe_ack.bin")).unwrap();
    assert_eq!(ack, [b'E', b'F', b'M', b'1', 0x08, 8, 0, 0, 0, 9, 0, 0, 0, 0, 0, 0, 0]);
    let resp = std::fs::read(golden_dir().join("frames/04_infer_response.bin")).unwrap();
    let mut expected = b"EFM1\x04".to_vec();
    expected.extend_from_slice(&22u32.to_le_bytes());
    expected.extend_from_slice(&43u64.to_le_bytes());
    expected.extend_from_slice(&8u16.to_le_bytes());
    expected.extend_from_slice(b"umbrella");
    expected.extend_from_slice(&0.8125f32.to_le_bytes());
    assert_eq!(resp, expected);
}
