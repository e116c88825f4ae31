//! Byte-level checks against the FVR1 batch layout, plus a committed
//! conformance batch. Regenerate it with `VOXDRILL_BLESS=1`.

mod common;

use std::path::PathBuf;

use nalgebra::UnitQuaternion;
use voxdrill::drill::TipType;
use voxdrill::event::{EventRecord, Pose};
use voxdrill::recorder::{decode_batch, encode_batch, open_recording, Recorder, RecordingMeta, MAGIC, TRAILER_MAGIC};
use voxdrill::session::Session;
use voxdrill::volume::VoxelIndex;
use voxdrill::Vec3;

fn fixture_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/conformance.fvr")
}

fn meta() -> RecordingMeta {
    let s = Session::new(common::bone_block(8, 0.5), common::config()).unwrap();
    RecordingMeta::for_session(&s, "conformance", "2026-01-01T00:00:00Z")
}

fn events() -> Vec<EventRecord> {
    let drill = Pose::new(Vec3::new(2.0, 2.0, 3.5), UnitQuaternion::identity());
    let camera = Pose::new(Vec3::new(0.0, 0.0, 50.0), UnitQuaternion::identity());
    vec![
        EventRecord::BurrChange { t: 0.001, burr_id: 2, radius_mm: 2.0, tip: TipType::Cutting },
        EventRecord::Kinematics { t: 0.001, drill, camera },
        EventRecord::VoxelRemoved { t: 0.002, index: VoxelIndex::new(4, 4, 5), label: 1, color: [230, 224, 204] },
        EventRecord::VoxelRemoved { t: 0.002, index: VoxelIndex::new(3, 4, 5), label: 2, color: [255, 217, 26] },
        EventRecord::ForceSample { t: 0.01, force: Vec3::new(0.25, -0.5, 1.75) },
        EventRecord::Kinematics { t: 0.01, drill, camera },
        EventRecord::DepthFrame { t: 0.02, frame_id: 1, reference: "frames/frame_000001".into() },
        EventRecord::ForceSample { t: 0.02, force: Vec3::new(-0.0, f64::MIN_POSITIVE, 3.0) },
    ]
}

fn u32_at(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(b[at..at + 4].try_into().unwrap())
}

#[test]
fn header_fields_sit_at_documented_offsets() {
    let meta_json = serde_json::to_vec(&meta()).unwrap();
    let evs = events();
    let b = encode_batch(7, &meta_json, &evs);
    assert_eq!(&b[0..4], MAGIC);
    assert_eq!(u16::from_le_bytes([b[4], b[5]]), 1);
    assert_eq!(u16::from_le_bytes([b[6], b[7]]), 0);
    assert_eq!(u32_at(&b, 8), 7);
    assert_eq!(u32_at(&b, 12), evs.len() as u32);
    assert_eq!(f64::from_le_bytes(b[16..24].try_into().unwrap()), 0.001);
    assert_eq!(f64::from_le_bytes(b[24..32].try_into().unwrap()), 0.02);
    let meta_len = u32_at(&b, 32) as usize;
    assert_eq!(&b[36..36 + meta_len], meta_json.as_slice());
    assert_eq!(&b[b.len() - 4..], TRAILER_MAGIC);
    let footer_offset = u64::from_le_bytes(b[b.len() - 12..b.len() - 4].try_into().unwrap()) as usize;
    assert!(footer_offset >= 36 + meta_len && footer_offset < b.len() - 16);
}

#[test]
fn conformance_batch_decodes_to_known_events() {
    let path = fixture_path();
    if std::env::var_os("VOXDRILL_BLESS").is_some() {
        let json = serde_json::to_vec(&meta()).unwrap();
        std::fs::write(&path, encode_batch(0, &json, &events())).unwrap();
    }
    let bytes = std::fs::read(&path).unwrap();
    let batch = decode_batch(&bytes, "conformance.fvr").unwrap();
    assert_eq!(batch.index, 0);
    assert_eq!(batch.meta, meta());
    let want = events();
    assert_eq!(batch.events.len(), want.len());
    for (got, want) in batch.events.iter().zip(&want) {
        assert!(got.bit_eq(want), "{got:?} != {want:?}");
    }
}

#[test]
fn partial_last_batch_and_manifest_totals() {
    let dir = tempfile::tempdir().unwrap();
    let mut rec = Recorder::create(dir.path(), meta(), 3).unwrap();
    for e in events() {
        rec.append(e).unwrap();
    }
    let manifest = rec.close().unwrap();
    assert!(manifest.complete);
    assert_eq!(manifest.batches.iter().map(|b| b.events).collect::<Vec<_>>(), vec![3, 3, 2]);
    assert_eq!(manifest.batches[1].t_min, 0.002);
    assert_eq!(manifest.batches[1].t_max, 0.01);
    let reopened = open_recording(dir.path()).unwrap();
    assert_eq!(reopened.manifest(), &manifest);
    assert_eq!(reopened.read_all().unwrap().len(), 8);
}

#[test]
fn out_of_order_event_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let mut rec = Recorder::create(dir.path(), meta(), 10).unwrap();
    rec.append(EventRecord::ForceSample { t: 1.0, force: Vec3::zeros() }).unwrap();
    assert!(rec.append(EventRecord::ForceSample { t: 0.5, force: Vec3::zeros() }).is_err());
}
