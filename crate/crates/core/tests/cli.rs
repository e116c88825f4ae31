mod common;

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use voxdrill::nrrd::{write_labeled_file, Encoding, ScalarType};
use voxdrill::recorder::open_recording;

const N: usize = 24;
const SPACING: f64 = 0.5;

fn voxdrill(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_voxdrill")).args(args).env_remove("VOXDRILL_BATCH_SIZE").output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
}

impl Fixture {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        write_labeled_file(
            &common::bone_block(N, SPACING),
            root.join("block.seg.nrrd"),
            ScalarType::U16,
            Encoding::Gzip,
        )
        .unwrap();
        let traj = common::sweep_script(N, SPACING, 3.0);
        std::fs::write(root.join("script.json"), serde_json::to_string(&traj).unwrap()).unwrap();
        std::fs::write(root.join("idle.toml"), "[[keyframes]]\nt = 0.0\npos = [0.0, 0.0, 50.0]\n").unwrap();
        std::fs::write(
            root.join("session.toml"),
            "sensitive_names = [\"Nerve\"]\ndefault_burr = 2\nbatch_size = 500\n",
        )
        .unwrap();
        Self { _dir: dir, root }
    }

    fn p(&self, name: &str) -> String {
        self.root.join(name).display().to_string()
    }

    fn simulate(&self, script: &str, out: &str) -> Output {
        voxdrill(&[
            "simulate",
            &self.p("block.seg.nrrd"),
            "--script",
            &self.p(script),
            "--record",
            &self.p(out),
            "--config",
            &self.p("session.toml"),
            "--participant",
            "p01",
            "--fixed-clock",
            "2024-01-01T00:00:00Z",
        ])
    }
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect();
    v.sort();
    v
}

#[test]
fn simulate_then_replay_verifies() {
    let f = Fixture::new();
    let sim = f.simulate("script.json", "rec");
    assert!(sim.status.success(), "{}", stderr(&sim));
    let summary: serde_json::Value = serde_json::from_str(&stdout(&sim)).unwrap();
    assert_eq!(summary["steps"], 3000);
    assert!(summary["removals"].as_u64().unwrap() > 0);

    let rec = open_recording(&f.root.join("rec")).unwrap();
    assert!(rec.manifest().batches.len() > 1, "batch_size from --config should split the recording");
    assert_eq!(rec.meta().participant, "p01");

    let rep = voxdrill(&["replay", &f.p("rec"), "--verify"]);
    assert_eq!(rep.status.code(), Some(0), "{}", stderr(&rep));
    assert!(stdout(&rep).starts_with("digest match"));
}

#[test]
fn simulate_is_deterministic_with_fixed_clock() {
    let f = Fixture::new();
    assert!(f.simulate("script.json", "a").status.success());
    assert!(f.simulate("script.json", "b").status.success());
    assert_eq!(dir_bytes(&f.root.join("a")), dir_bytes(&f.root.join("b")));
}

#[test]
fn metrics_formats_and_empty_recording() {
    let f = Fixture::new();
    assert!(f.simulate("script.json", "rec").status.success());
    let json = voxdrill(&["metrics", &f.p("rec"), "--format", "json"]);
    assert!(json.status.success(), "{}", stderr(&json));
    let report = voxdrill::metrics::MetricsReport::from_json(&stdout(&json)).unwrap();
    assert_eq!(report.participant, "p01");
    assert!(report.kinematics.is_some());
    let table = voxdrill(&["metrics", &f.p("rec"), "--format", "table"]);
    assert!(table.status.success());
    assert!(stdout(&table).lines().count() > 3);

    let empty = f.simulate("idle.toml", "empty");
    assert!(empty.status.success(), "{}", stderr(&empty));
    let m = voxdrill(&["metrics", &f.p("empty")]);
    assert_eq!(m.status.code(), Some(7));
    let err = stderr(&m);
    assert_eq!(err.lines().count(), 1);
    assert!(err.starts_with("voxdrill: error kind=insufficient-data code=7:"));
}

#[test]
fn truncated_nrrd_names_missing_bytes() {
    let f = Fixture::new();
    let mut bytes = Vec::new();
    bytes.extend_from_slice(b"NRRD0004\ntype: uint8\ndimension: 3\nsizes: 4 4 4\nencoding: raw\n\n");
    bytes.extend(std::iter::repeat_n(1u8, 50));
    std::fs::write(f.root.join("short.nrrd"), bytes).unwrap();
    let o = voxdrill(&["import", &f.p("short.nrrd"), "-o", &f.p("out.nrrd")]);
    assert_eq!(o.status.code(), Some(4));
    assert!(stderr(&o).contains("14 bytes missing"), "{}", stderr(&o));
    assert!(!f.root.join("out.nrrd").exists());
}

#[test]
fn import_caches_and_convert_round_trips_through_a_stack() {
    let f = Fixture::new();
    let imp = voxdrill(&["import", &f.p("block.seg.nrrd"), "-o", &f.p("cache/block.nrrd")]);
    assert!(imp.status.success(), "{}", stderr(&imp));
    let digest = common::bone_block(N, SPACING).digest();
    assert!(stdout(&imp).contains(&format!("{digest:016x}")));

    let c = voxdrill(&["convert", &f.p("cache/block.nrrd"), "--to-stack", &f.p("stack")]);
    assert!(c.status.success(), "{}", stderr(&c));
    let back = voxdrill(&["convert", &f.p("stack"), "--to-nrrd", &f.p("back.nrrd")]);
    assert!(back.status.success(), "{}", stderr(&back));
    assert!(stdout(&back).contains(&format!("{digest:016x}")));

    let bad = voxdrill(&["convert", &f.p("block.seg.nrrd"), "--to-stack", &f.p("s2"), "--format", "tiff"]);
    assert_eq!(bad.status.code(), Some(5));
}

#[test]
fn export_csv_ply_and_unsupported_hdf5() {
    let f = Fixture::new();
    assert!(f.simulate("script.json", "rec").status.success());
    let e = voxdrill(&["export", &f.p("rec"), "--csv", &f.p("events.csv"), "--ply", &f.p("removed.ply")]);
    assert!(e.status.success(), "{}", stderr(&e));
    let rec = open_recording(&f.root.join("rec")).unwrap();
    let csv = std::fs::read_to_string(f.root.join("events.csv")).unwrap();
    assert_eq!(csv.lines().count() as u64, rec.manifest().total_events + 1);
    let ply = std::fs::read_to_string(f.root.join("removed.ply")).unwrap();
    assert!(ply.starts_with("ply\n"));

    let h = voxdrill(&["export", &f.p("rec"), "--hdf5", &f.p("x.h5")]);
    assert_eq!(h.status.code(), Some(5));
}

#[test]
fn corrupted_batch_is_reported() {
    let f = Fixture::new();
    assert!(f.simulate("script.json", "rec").status.success());
    let batch = f.root.join("rec").join(voxdrill::recorder::batch_file_name(0));
    let mut bytes = std::fs::read(&batch).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0x40;
    std::fs::write(&batch, bytes).unwrap();
    let o = voxdrill(&["replay", &f.p("rec"), "--verify"]);
    assert_eq!(o.status.code(), Some(9));
    assert!(stderr(&o).contains("batch_000000"));
}

#[test]
fn replay_on_other_anatomy_is_a_mismatch() {
    let f = Fixture::new();
    assert!(f.simulate("script.json", "rec").status.success());
    let mut other = common::bone_block(N, SPACING);
    other.clear(voxdrill::volume::VoxelIndex::new(0, 0, 0));
    write_labeled_file(&other, f.root.join("other.nrrd"), ScalarType::U16, Encoding::Raw).unwrap();
    let o = voxdrill(&["replay", &f.p("rec"), "--volume", &f.p("other.nrrd"), "--verify"]);
    assert_eq!(o.status.code(), Some(8));
}

#[test]
fn render_writes_maps_and_depth_frames_are_recorded() {
    let f = Fixture::new();
    // Voxel centers sit at i * spacing, so the block spans -0.25..11.75 mm.
    let cam = "5.75,5.75,40:0,0,-1:0,1,0:12,12".to_string();
    let o = voxdrill(&[
        "render",
        &f.p("block.seg.nrrd"),
        "--camera",
        &cam,
        "--res",
        "32x32",
        "-o",
        &format!("{},{},{}", f.p("d.png"), f.p("l.png"), f.p("n.png")),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).starts_with("1024 of 1024"), "{}", stdout(&o));
    for name in ["d.png", "l.png", "n.png"] {
        assert!(image::open(f.root.join(name)).is_ok());
    }

    let s = voxdrill(&[
        "simulate",
        &f.p("block.seg.nrrd"),
        "--script",
        &f.p("script.json"),
        "--record",
        &f.p("rec"),
        "--config",
        &f.p("session.toml"),
        "--depth-every",
        "1.0",
        "--camera",
        &cam,
        "--res",
        "16x16",
    ]);
    assert!(s.status.success(), "{}", stderr(&s));
    let rec = open_recording(&f.root.join("rec")).unwrap();
    let frames: Vec<_> = rec
        .events()
        .map(|e| e.unwrap())
        .filter_map(|e| match e {
            voxdrill::event::EventRecord::DepthFrame { frame_id, reference, .. } => Some((frame_id, reference)),
            _ => None,
        })
        .collect();
    assert_eq!(frames.len(), 3);
    for (id, reference) in frames {
        let raw = std::fs::read(f.root.join("rec").join(format!("{reference}.depth.f32"))).unwrap();
        assert_eq!(raw.len(), 16 * 16 * 4, "frame {id}");
    }
}

#[test]
fn serve_runs_for_a_bounded_duration() {
    let f = Fixture::new();
    let o = voxdrill(&["serve", &f.p("block.seg.nrrd"), "--endpoint", "127.0.0.1:0", "--duration", "0.2"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stderr(&o).contains("listening on 127.0.0.1:"));
    assert!(stdout(&o).starts_with("ticks 200 "));

    let bad = voxdrill(&["serve", &f.p("block.seg.nrrd"), "--endpoint", "256.0.0.1:1"]);
    assert_eq!(bad.status.code(), Some(10));
}

#[test]
fn usage_errors_exit_two() {
    let o = voxdrill(&["simulate"]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(stderr(&o).lines().count(), 1);
    assert_eq!(voxdrill(&["--help"]).status.code(), Some(0));
}
