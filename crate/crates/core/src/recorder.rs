//! FVR1 recordings: batch-split, column-compressed event files plus a JSON
//! manifest. The byte layout is documented in `docs/fvr1.md`.
//!
//! A recording directory holds `manifest.json` and `batch_NNNNNN.fvr` files.
//! Batch files are created lazily, so a recording with no events has no
//! batch files at all. The manifest is rewritten after every batch with
//! `complete = false` and finalized by [`Recorder::close`].

use std::collections::{BTreeSet, VecDeque};
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::sync::mpsc::{sync_channel, SyncSender};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use flate2::read::DeflateDecoder;
use flate2::write::DeflateEncoder;
use flate2::Compression;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::SessionConfig;
use crate::drill::TipType;
use crate::event::{EventRecord, Group, Pose};
use crate::session::{EventSink, Session, SessionError};
use crate::volume::{LabeledVolume, SegmentTable, VoxelIndex};
use crate::Vec3;

pub const MAGIC: &[u8; 4] = b"FVR1";
pub const TRAILER_MAGIC: &[u8; 4] = b"1RVF";
pub const SCHEMA_VERSION: u16 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

/// Block kind of the per-event group-id stream that restores interleaving.
pub const ORDER_BLOCK: u8 = 0xFF;

/// Minimum wall time between manifest rewrites while recording.
const MANIFEST_INTERVAL: Duration = Duration::from_secs(1);
const CODEC_COLUMNS: u8 = 1;
const CODEC_PLAIN: u8 = 2;
const FOOTER_ENTRY_LEN: usize = 26;

#[derive(Debug, Error)]
pub enum RecorderError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("event time {t} precedes previous event time {prev}")]
    Ordering { prev: f64, t: f64 },
    #[error("recorder is closed")]
    Closed,
    #[error("invalid event: {0}")]
    InvalidEvent(String),
    #[error("invalid recorder setting: {0}")]
    Setting(String),
    #[error("corrupt recording file {file}: {reason}")]
    Corrupt { file: String, reason: String },
    #[error("incomplete recording: missing {file}")]
    Incomplete { file: String },
    #[error("manifest: {0}")]
    Manifest(String),
    #[error("recording was made on anatomy {expected:#018x}, volume is {found:#018x}")]
    WrongAnatomy { expected: u64, found: u64 },
    #[error("replay diverged: {0}")]
    Replay(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> RecorderError + '_ {
    move |source| RecorderError::Io { path: path.display().to_string(), source }
}

fn corrupt(file: &str, reason: impl Into<String>) -> RecorderError {
    RecorderError::Corrupt { file: file.to_string(), reason: reason.into() }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecordingMeta {
    pub schema_version: u16,
    pub anatomy_digest: u64,
    pub participant: String,
    /// RFC 3339 wall-clock time at recording start.
    pub wall_clock_start: String,
    pub tick_rate_hz: f64,
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub origin: [f64; 3],
    pub segments: SegmentTable,
    pub sensitive: BTreeSet<u16>,
    pub initial_burr: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub config: SessionConfig,
}

impl RecordingMeta {
    pub fn for_session(session: &Session, participant: &str, wall_clock_start: &str) -> Self {
        let vol = session.volume();
        Self {
            schema_version: SCHEMA_VERSION,
            anatomy_digest: session.initial_digest(),
            participant: participant.to_string(),
            wall_clock_start: wall_clock_start.to_string(),
            tick_rate_hz: session.config().tick_rate_hz,
            dims: vol.dims(),
            spacing: vol.spacing(),
            origin: vol.origin(),
            segments: vol.segments().clone(),
            sensitive: session.model().sensitive.clone(),
            initial_burr: session.burr_id(),
            seed: None,
            config: session.config().clone(),
        }
    }

    pub fn voxel_volume(&self) -> f64 {
        self.spacing.iter().product()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BatchEntry {
    pub index: u32,
    pub file: String,
    pub events: u64,
    pub t_min: f64,
    pub t_max: f64,
    pub bytes: u64,
    pub crc32: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format: String,
    pub schema_version: u16,
    pub complete: bool,
    pub batch_size: usize,
    pub total_events: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_digest: Option<u64>,
    pub meta: RecordingMeta,
    pub batches: Vec<BatchEntry>,
}

impl Manifest {
    pub fn total_bytes(&self) -> u64 {
        self.batches.iter().map(|b| b.bytes).sum()
    }
}

pub fn batch_file_name(index: u32) -> String {
    format!("batch_{index:06}.fvr")
}

/// Size of the same events as an uncompressed log: a one-byte tag followed by
/// the record's fixed-width fields (plus reference text for depth frames).
pub fn naive_log_size<'a>(events: impl IntoIterator<Item = &'a EventRecord>) -> u64 {
    events
        .into_iter()
        .map(|e| {
            1 + match e {
                EventRecord::DepthFrame { reference, .. } => 20 + reference.len() as u64,
                _ => record_width(e.group()) as u64,
            }
        })
        .sum()
}

// ---------------------------------------------------------------------------
// Column codec

#[derive(Clone, Copy)]
enum Col {
    F64,
    Int(u32),
}

impl Col {
    fn width(self) -> usize {
        match self {
            Col::F64 => 8,
            Col::Int(w) => w as usize,
        }
    }
}

fn group_columns(g: Group) -> &'static [Col] {
    use Col::*;
    match g {
        Group::VoxelsRemoved => &[F64, Int(4), Int(4), Int(4), Int(2), Int(1), Int(1), Int(1)],
        Group::ForceFeedback => &[F64, F64, F64, F64],
        Group::BurrChange => &[F64, Int(4), F64, Int(1)],
        Group::Kinematics => &[F64; 15],
        Group::DepthFrames => &[F64, Int(8), Int(4)],
    }
}

fn record_width(g: Group) -> usize {
    group_columns(g).iter().map(|c| c.width()).sum()
}

fn mask(bytes: usize) -> u64 {
    if bytes >= 8 {
        u64::MAX
    } else {
        (1u64 << (8 * bytes)) - 1
    }
}

fn zigzag(d: u64, bytes: usize) -> u64 {
    let bits = 8 * bytes as u32;
    // Sign-extend from `bits`, then zigzag, then truncate back.
    let s = ((d << (64 - bits)) as i64) >> (64 - bits);
    (((s << 1) ^ (s >> 63)) as u64) & mask(bytes)
}

fn unzigzag(z: u64, bytes: usize) -> u64 {
    ((z >> 1) ^ (z & 1).wrapping_neg()) & mask(bytes)
}

/// Delta (integers) or delta-of-delta (float bit patterns), zigzag, then one
/// byte plane per value byte.
fn encode_column(values: &[u64], col: Col, out: &mut Vec<u8>) {
    let w = col.width();
    let m = mask(w);
    let mut coded = Vec::with_capacity(values.len());
    let (mut prev, mut prev_delta) = (0u64, 0u64);
    for &v in values {
        let delta = v.wrapping_sub(prev) & m;
        prev = v;
        let z = match col {
            Col::F64 => {
                let dd = delta.wrapping_sub(prev_delta);
                prev_delta = delta;
                zigzag(dd, 8)
            }
            Col::Int(_) => zigzag(delta, w),
        };
        coded.push(z);
    }
    for b in 0..w {
        out.extend(coded.iter().map(|z| (z >> (8 * b)) as u8));
    }
}

fn decode_column(bytes: &[u8], n: usize, col: Col) -> Vec<u64> {
    let w = col.width();
    let m = mask(w);
    let mut out = Vec::with_capacity(n);
    let (mut prev, mut prev_delta) = (0u64, 0u64);
    for i in 0..n {
        let mut z = 0u64;
        for b in 0..w {
            z |= (bytes[b * n + i] as u64) << (8 * b);
        }
        let delta = match col {
            Col::F64 => {
                let d = prev_delta.wrapping_add(unzigzag(z, 8));
                prev_delta = d;
                d
            }
            Col::Int(_) => unzigzag(z, w),
        };
        prev = prev.wrapping_add(delta) & m;
        out.push(prev);
    }
    out
}

fn columns_of(events: &[&EventRecord], g: Group) -> (Vec<Vec<u64>>, Vec<u8>) {
    let mut cols: Vec<Vec<u64>> = vec![Vec::with_capacity(events.len()); group_columns(g).len()];
    let mut heap = Vec::new();
    for e in events {
        let row: Vec<u64> = match e {
            EventRecord::VoxelRemoved { t, index, label, color } => vec![
                t.to_bits(),
                index.i as u64,
                index.j as u64,
                index.k as u64,
                *label as u64,
                color[0] as u64,
                color[1] as u64,
                color[2] as u64,
            ],
            EventRecord::ForceSample { t, force } => {
                vec![t.to_bits(), force.x.to_bits(), force.y.to_bits(), force.z.to_bits()]
            }
            EventRecord::BurrChange { t, burr_id, radius_mm, tip } => {
                vec![t.to_bits(), *burr_id as u64, radius_mm.to_bits(), tip.code() as u64]
            }
            EventRecord::Kinematics { t, drill, camera } => std::iter::once(t.to_bits())
                .chain(drill.to_array().iter().map(|v| v.to_bits()))
                .chain(camera.to_array().iter().map(|v| v.to_bits()))
                .collect(),
            EventRecord::DepthFrame { t, frame_id, reference } => {
                heap.extend_from_slice(reference.as_bytes());
                vec![t.to_bits(), *frame_id, reference.len() as u64]
            }
        };
        for (c, v) in cols.iter_mut().zip(row) {
            c.push(v);
        }
    }
    (cols, heap)
}

#[allow(clippy::needless_range_loop)]
fn events_from_columns(
    g: Group,
    cols: &[Vec<u64>],
    heap: &[u8],
    file: &str,
) -> Result<Vec<EventRecord>, RecorderError> {
    let n = cols[0].len();
    let f = |c: usize, i: usize| f64::from_bits(cols[c][i]);
    let mut out = Vec::with_capacity(n);
    let mut heap_pos = 0usize;
    for i in 0..n {
        let ev = match g {
            Group::VoxelsRemoved => EventRecord::VoxelRemoved {
                t: f(0, i),
                index: VoxelIndex::new(cols[1][i] as u32, cols[2][i] as u32, cols[3][i] as u32),
                label: cols[4][i] as u16,
                color: [cols[5][i] as u8, cols[6][i] as u8, cols[7][i] as u8],
            },
            Group::ForceFeedback => {
                EventRecord::ForceSample { t: f(0, i), force: Vec3::new(f(1, i), f(2, i), f(3, i)) }
            }
            Group::BurrChange => EventRecord::BurrChange {
                t: f(0, i),
                burr_id: cols[1][i] as u32,
                radius_mm: f(2, i),
                tip: TipType::from_code(cols[3][i] as u8).ok_or_else(|| corrupt(file, "unknown tip code"))?,
            },
            Group::Kinematics => {
                let pose = |base: usize| Pose::from_array(std::array::from_fn(|k| f(base + k, i)));
                EventRecord::Kinematics { t: f(0, i), drill: pose(1), camera: pose(8) }
            }
            Group::DepthFrames => {
                let len = cols[2][i] as usize;
                let bytes = heap
                    .get(heap_pos..heap_pos + len)
                    .ok_or_else(|| corrupt(file, "depth frame reference overruns block"))?;
                heap_pos += len;
                let reference = String::from_utf8(bytes.to_vec())
                    .map_err(|_| corrupt(file, "depth frame reference is not UTF-8"))?;
                EventRecord::DepthFrame { t: f(0, i), frame_id: cols[1][i], reference }
            }
        };
        out.push(ev);
    }
    if heap_pos != heap.len() {
        return Err(corrupt(file, "unused bytes in depth frame block"));
    }
    Ok(out)
}

fn deflate(raw: &[u8]) -> Vec<u8> {
    let mut enc = DeflateEncoder::new(Vec::new(), Compression::best());
    enc.write_all(raw).expect("writing to Vec");
    enc.finish().expect("writing to Vec")
}

fn inflate(comp: &[u8], raw_len: usize, file: &str) -> Result<Vec<u8>, RecorderError> {
    let mut out = Vec::with_capacity(raw_len);
    DeflateDecoder::new(comp)
        .take(raw_len as u64 + 1)
        .read_to_end(&mut out)
        .map_err(|e| corrupt(file, format!("inflate: {e}")))?;
    if out.len() != raw_len {
        return Err(corrupt(file, format!("block inflated to {} bytes, expected {raw_len}", out.len())));
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Batch encoding

struct FooterEntry {
    kind: u8,
    codec: u8,
    offset: u64,
    count: u32,
    raw_len: u32,
    comp_len: u32,
    crc: u32,
}

/// Serializes one batch file.
pub fn encode_batch(index: u32, meta_json: &[u8], events: &[EventRecord]) -> Vec<u8> {
    let (t_min, t_max) = match (events.first(), events.last()) {
        (Some(a), Some(b)) => (a.t(), b.t()),
        _ => (0.0, 0.0),
    };
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&SCHEMA_VERSION.to_le_bytes());
    buf.extend_from_slice(&0u16.to_le_bytes());
    buf.extend_from_slice(&index.to_le_bytes());
    buf.extend_from_slice(&(events.len() as u32).to_le_bytes());
    buf.extend_from_slice(&t_min.to_le_bytes());
    buf.extend_from_slice(&t_max.to_le_bytes());
    buf.extend_from_slice(&(meta_json.len() as u32).to_le_bytes());
    buf.extend_from_slice(meta_json);
    let header_len = buf.len();

    let mut footer = Vec::new();
    let mut push_block = |buf: &mut Vec<u8>, kind: u8, codec: u8, count: usize, raw: &[u8]| {
        let comp = deflate(raw);
        footer.push(FooterEntry {
            kind,
            codec,
            offset: buf.len() as u64,
            count: count as u32,
            raw_len: raw.len() as u32,
            comp_len: comp.len() as u32,
            crc: crc32fast::hash(&comp),
        });
        buf.extend_from_slice(&comp);
    };

    for g in Group::ALL {
        let members: Vec<&EventRecord> = events.iter().filter(|e| e.group() == g).collect();
        if members.is_empty() {
            continue;
        }
        let (cols, heap) = columns_of(&members, g);
        let mut raw = Vec::with_capacity(members.len() * record_width(g) + heap.len());
        for (values, &col) in cols.iter().zip(group_columns(g)) {
            encode_column(values, col, &mut raw);
        }
        raw.extend_from_slice(&heap);
        push_block(&mut buf, g.id(), CODEC_COLUMNS, members.len(), &raw);
    }
    let order: Vec<u8> = events.iter().map(|e| e.group().id()).collect();
    push_block(&mut buf, ORDER_BLOCK, CODEC_PLAIN, order.len(), &order);

    let footer_offset = buf.len() as u64;
    let mut fbytes = Vec::with_capacity(2 + footer.len() * FOOTER_ENTRY_LEN);
    fbytes.extend_from_slice(&(footer.len() as u16).to_le_bytes());
    for e in &footer {
        fbytes.push(e.kind);
        fbytes.push(e.codec);
        fbytes.extend_from_slice(&e.offset.to_le_bytes());
        fbytes.extend_from_slice(&e.count.to_le_bytes());
        fbytes.extend_from_slice(&e.raw_len.to_le_bytes());
        fbytes.extend_from_slice(&e.comp_len.to_le_bytes());
        fbytes.extend_from_slice(&e.crc.to_le_bytes());
    }
    let fcrc = trailer_crc(&buf[..header_len], &fbytes, footer_offset);
    buf.extend_from_slice(&fbytes);
    buf.extend_from_slice(&fcrc.to_le_bytes());
    buf.extend_from_slice(&footer_offset.to_le_bytes());
    buf.extend_from_slice(TRAILER_MAGIC);
    buf
}

/// Checksum over the header, the footer table and the footer offset.
fn trailer_crc(header: &[u8], footer: &[u8], footer_offset: u64) -> u32 {
    let mut h = crc32fast::Hasher::new();
    h.update(header);
    h.update(footer);
    h.update(&footer_offset.to_le_bytes());
    h.finalize()
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    file: &'a str,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], RecorderError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| corrupt(self.file, "unexpected end of file"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8, RecorderError> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16, RecorderError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<u32, RecorderError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64, RecorderError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Decoded batch file.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub index: u32,
    pub meta: RecordingMeta,
    pub events: Vec<EventRecord>,
}

pub fn decode_batch(bytes: &[u8], file: &str) -> Result<Batch, RecorderError> {
    let mut c = Cursor { bytes, pos: 0, file };
    if c.take(4)? != MAGIC {
        return Err(corrupt(file, "bad magic"));
    }
    let version = c.u16()?;
    if version != SCHEMA_VERSION {
        return Err(corrupt(file, format!("unsupported schema version {version}")));
    }
    let _flags = c.u16()?;
    let index = c.u32()?;
    let count = c.u32()? as usize;
    let _t_min = c.u64()?;
    let _t_max = c.u64()?;
    let meta_len = c.u32()? as usize;
    let meta: RecordingMeta =
        serde_json::from_slice(c.take(meta_len)?).map_err(|e| corrupt(file, format!("metadata: {e}")))?;

    if bytes.len() < 16 || &bytes[bytes.len() - 4..] != TRAILER_MAGIC {
        return Err(corrupt(file, "bad trailer"));
    }
    let footer_offset = u64::from_le_bytes(bytes[bytes.len() - 12..bytes.len() - 4].try_into().unwrap()) as usize;
    let footer_end = bytes.len() - 16;
    if footer_offset > footer_end || footer_offset < c.pos {
        return Err(corrupt(file, "footer offset out of range"));
    }
    let fbytes = &bytes[footer_offset..footer_end];
    let fcrc = u32::from_le_bytes(bytes[footer_end..footer_end + 4].try_into().unwrap());
    if trailer_crc(&bytes[..c.pos], fbytes, footer_offset as u64) != fcrc {
        return Err(corrupt(file, "footer checksum mismatch"));
    }
    let mut f = Cursor { bytes: fbytes, pos: 0, file };
    let nblocks = f.u16()? as usize;
    let mut per_group: Vec<Option<VecDeque<EventRecord>>> = vec![None; Group::ALL.len()];
    let mut order: Option<Vec<u8>> = None;
    for _ in 0..nblocks {
        let e = FooterEntry {
            kind: f.u8()?,
            codec: f.u8()?,
            offset: f.u64()?,
            count: f.u32()?,
            raw_len: f.u32()?,
            comp_len: f.u32()?,
            crc: f.u32()?,
        };
        let start = e.offset as usize;
        let comp = bytes
            .get(start..start.saturating_add(e.comp_len as usize))
            .filter(|_| start >= c.pos && start + e.comp_len as usize <= footer_offset)
            .ok_or_else(|| corrupt(file, "block outside data region"))?;
        if crc32fast::hash(comp) != e.crc {
            return Err(corrupt(file, format!("block {} checksum mismatch", e.kind)));
        }
        let raw = inflate(comp, e.raw_len as usize, file)?;
        let n = e.count as usize;
        if e.kind == ORDER_BLOCK {
            if e.codec != CODEC_PLAIN || raw.len() != n {
                return Err(corrupt(file, "malformed order block"));
            }
            order = Some(raw);
            continue;
        }
        let g = Group::from_id(e.kind).ok_or_else(|| corrupt(file, format!("unknown block kind {}", e.kind)))?;
        if e.codec != CODEC_COLUMNS || per_group[g.id() as usize].is_some() {
            return Err(corrupt(file, format!("unexpected block for group {}", g.name())));
        }
        let fixed = n * record_width(g);
        if raw.len() < fixed || (g != Group::DepthFrames && raw.len() != fixed) {
            return Err(corrupt(file, format!("group {} block has wrong size", g.name())));
        }
        let mut cols = Vec::new();
        let mut pos = 0;
        for &col in group_columns(g) {
            let len = n * col.width();
            cols.push(decode_column(&raw[pos..pos + len], n, col));
            pos += len;
        }
        let events = events_from_columns(g, &cols, &raw[pos..], file)?;
        per_group[g.id() as usize] = Some(events.into());
    }
    let order = order.ok_or_else(|| corrupt(file, "missing order block"))?;
    if order.len() != count {
        return Err(corrupt(file, "event count disagrees with order block"));
    }
    let mut events = Vec::with_capacity(count);
    for id in order {
        let ev = Group::from_id(id)
            .and_then(|g| per_group[g.id() as usize].as_mut())
            .and_then(|q| q.pop_front())
            .ok_or_else(|| corrupt(file, "order block references missing records"))?;
        events.push(ev);
    }
    if per_group.iter().flatten().any(|q| !q.is_empty()) {
        return Err(corrupt(file, "records not referenced by order block"));
    }
    Ok(Batch { index, meta, events })
}

// ---------------------------------------------------------------------------
// Writing

#[derive(Debug)]
pub struct Recorder {
    dir: PathBuf,
    meta: RecordingMeta,
    meta_json: Vec<u8>,
    batch_size: usize,
    pending: Vec<EventRecord>,
    batches: Vec<BatchEntry>,
    last_t: f64,
    total: u64,
    closed: bool,
    final_digest: Option<u64>,
    manifest_written: Instant,
}

impl Recorder {
    /// Creates `dir` if needed and writes an empty, incomplete manifest.
    pub fn create(dir: &Path, meta: RecordingMeta, batch_size: usize) -> Result<Self, RecorderError> {
        if batch_size == 0 {
            return Err(RecorderError::Setting("batch size must be >= 1".into()));
        }
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let meta_json = serde_json::to_vec(&meta).expect("metadata serializes");
        let rec = Self {
            dir: dir.to_path_buf(),
            meta,
            meta_json,
            batch_size,
            pending: Vec::new(),
            batches: Vec::new(),
            last_t: 0.0,
            total: 0,
            closed: false,
            final_digest: None,
            manifest_written: Instant::now(),
        };
        rec.write_manifest(false)?;
        Ok(rec)
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn meta(&self) -> &RecordingMeta {
        &self.meta
    }

    pub fn total_events(&self) -> u64 {
        self.total
    }

    pub fn set_final_digest(&mut self, digest: u64) {
        self.final_digest = Some(digest);
    }

    pub fn append(&mut self, ev: EventRecord) -> Result<(), RecorderError> {
        if self.closed {
            return Err(RecorderError::Closed);
        }
        let t = ev.t();
        if !(t.is_finite() && t >= 0.0) {
            return Err(RecorderError::InvalidEvent(format!("time {t} must be finite and >= 0")));
        }
        if t < self.last_t {
            return Err(RecorderError::Ordering { prev: self.last_t, t });
        }
        if let EventRecord::VoxelRemoved { index, .. } = &ev {
            let d = self.meta.dims;
            if index.i as usize >= d[0] || index.j as usize >= d[1] || index.k as usize >= d[2] {
                return Err(RecorderError::InvalidEvent(format!("voxel {index:?} outside {d:?}")));
            }
        }
        self.last_t = t;
        self.pending.push(ev);
        self.total += 1;
        if self.pending.len() >= self.batch_size {
            self.flush_batch()?;
        }
        Ok(())
    }

    fn flush_batch(&mut self) -> Result<(), RecorderError> {
        if self.pending.is_empty() {
            return Ok(());
        }
        let index = self.batches.len() as u32;
        let bytes = encode_batch(index, &self.meta_json, &self.pending);
        let name = batch_file_name(index);
        let path = self.dir.join(&name);
        let tmp = self.dir.join(format!("{name}.tmp"));
        fs::write(&tmp, &bytes).map_err(io_err(&tmp))?;
        fs::rename(&tmp, &path).map_err(io_err(&path))?;
        self.batches.push(BatchEntry {
            index,
            file: name,
            events: self.pending.len() as u64,
            t_min: self.pending[0].t(),
            t_max: self.pending[self.pending.len() - 1].t(),
            bytes: bytes.len() as u64,
            crc32: crc32fast::hash(&bytes),
        });
        self.pending.clear();
        if self.manifest_written.elapsed() >= MANIFEST_INTERVAL {
            self.write_manifest(false)?;
            self.manifest_written = Instant::now();
        }
        Ok(())
    }

    fn manifest(&self, complete: bool) -> Manifest {
        Manifest {
            format: "FVR1".into(),
            schema_version: SCHEMA_VERSION,
            complete,
            batch_size: self.batch_size,
            total_events: self.batches.iter().map(|b| b.events).sum(),
            final_digest: self.final_digest,
            meta: self.meta.clone(),
            batches: self.batches.clone(),
        }
    }

    fn write_manifest(&self, complete: bool) -> Result<(), RecorderError> {
        let path = self.dir.join(MANIFEST_FILE);
        let tmp = self.dir.join(format!("{MANIFEST_FILE}.tmp"));
        let mut text = serde_json::to_string_pretty(&self.manifest(complete)).expect("manifest serializes");
        text.push('\n');
        fs::write(&tmp, text).map_err(io_err(&tmp))?;
        fs::rename(&tmp, &path).map_err(io_err(&path))
    }

    /// Flushes the last partial batch and finalizes the manifest. While
    /// recording, the manifest on disk trails the batch files by at most
    /// about a second of wall time.
    pub fn close(mut self) -> Result<Manifest, RecorderError> {
        self.flush_batch()?;
        self.closed = true;
        self.write_manifest(true)?;
        Ok(self.manifest(true))
    }
}

/// Session-side handle of a recorder running on its own thread. Sends block
/// when the queue is full.
pub struct QueueSink {
    tx: SyncSender<EventRecord>,
}

impl EventSink for QueueSink {
    fn emit(&mut self, event: EventRecord) -> Result<(), SessionError> {
        self.tx.send(event).map_err(|_| SessionError::Sink("recorder writer stopped".into()))
    }
}

pub struct WriterHandle {
    join: JoinHandle<Result<Recorder, RecorderError>>,
}

impl WriterHandle {
    /// Waits for the queue to drain (all senders must be dropped first).
    pub fn finish(self) -> Result<Recorder, RecorderError> {
        self.join.join().unwrap_or_else(|_| Err(RecorderError::Setting("recorder writer panicked".into())))
    }
}

pub fn spawn_writer(mut recorder: Recorder, capacity: usize) -> (QueueSink, WriterHandle) {
    let (tx, rx) = sync_channel(capacity.max(1));
    let join = std::thread::Builder::new()
        .name("fvr1-writer".into())
        .spawn(move || {
            for ev in rx {
                recorder.append(ev)?;
            }
            Ok(recorder)
        })
        .expect("spawning writer thread");
    (QueueSink { tx }, WriterHandle { join })
}

// ---------------------------------------------------------------------------
// Reading

#[derive(Debug, Clone)]
pub struct Recording {
    dir: PathBuf,
    manifest: Manifest,
}

fn file_crc(path: &Path) -> Result<(u32, u64), RecorderError> {
    let mut f = fs::File::open(path).map_err(io_err(path))?;
    let mut h = crc32fast::Hasher::new();
    let mut buf = vec![0u8; 1 << 16];
    let mut len = 0u64;
    loop {
        let n = f.read(&mut buf).map_err(io_err(path))?;
        if n == 0 {
            break;
        }
        len += n as u64;
        h.update(&buf[..n]);
    }
    Ok((h.finalize(), len))
}

/// Opens a recording after checking that every batch file listed in the
/// manifest exists and matches its checksum. Files are streamed, not loaded.
pub fn open_recording(dir: &Path) -> Result<Recording, RecorderError> {
    let mpath = dir.join(MANIFEST_FILE);
    let text = match fs::read_to_string(&mpath) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(RecorderError::Incomplete { file: mpath.display().to_string() })
        }
        Err(e) => return Err(io_err(&mpath)(e)),
    };
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| RecorderError::Manifest(e.to_string()))?;
    if manifest.format != "FVR1" || manifest.schema_version != SCHEMA_VERSION {
        return Err(RecorderError::Manifest(format!(
            "unsupported format {} v{}",
            manifest.format, manifest.schema_version
        )));
    }
    let sum: u64 = manifest.batches.iter().map(|b| b.events).sum();
    if sum != manifest.total_events {
        return Err(RecorderError::Manifest(format!(
            "batch counts sum to {sum}, total says {}",
            manifest.total_events
        )));
    }
    for (n, b) in manifest.batches.iter().enumerate() {
        if b.index as usize != n || b.file != batch_file_name(b.index) {
            return Err(RecorderError::Manifest(format!("batch entry {n} is out of sequence")));
        }
        let path = dir.join(&b.file);
        if !path.is_file() {
            return Err(RecorderError::Incomplete { file: b.file.clone() });
        }
        let (crc, len) = file_crc(&path)?;
        if crc != b.crc32 || len != b.bytes {
            return Err(corrupt(&b.file, "checksum mismatch"));
        }
    }
    Ok(Recording { dir: dir.to_path_buf(), manifest })
}

impl Recording {
    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    pub fn meta(&self) -> &RecordingMeta {
        &self.manifest.meta
    }

    /// Lazily decodes one batch at a time.
    pub fn events(&self) -> EventStream<'_> {
        EventStream { rec: self, next_batch: 0, current: VecDeque::new(), peak: 0, failed: false }
    }

    pub fn read_all(&self) -> Result<Vec<EventRecord>, RecorderError> {
        self.events().collect()
    }

    pub fn read_batch(&self, index: usize) -> Result<Batch, RecorderError> {
        let entry = &self.manifest.batches[index];
        let path = self.dir.join(&entry.file);
        let bytes = fs::read(&path).map_err(io_err(&path))?;
        if crc32fast::hash(&bytes) != entry.crc32 {
            return Err(corrupt(&entry.file, "checksum mismatch"));
        }
        let batch = decode_batch(&bytes, &entry.file)?;
        if batch.index != entry.index || batch.events.len() as u64 != entry.events {
            return Err(corrupt(&entry.file, "batch header disagrees with manifest"));
        }
        Ok(batch)
    }
}

pub struct EventStream<'a> {
    rec: &'a Recording,
    next_batch: usize,
    current: VecDeque<EventRecord>,
    peak: usize,
    failed: bool,
}

impl EventStream<'_> {
    /// Largest number of decoded events held at once so far.
    pub fn peak_buffered(&self) -> usize {
        self.peak
    }
}

impl Iterator for EventStream<'_> {
    type Item = Result<EventRecord, RecorderError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed {
            return None;
        }
        while self.current.is_empty() {
            if self.next_batch >= self.rec.manifest.batches.len() {
                return None;
            }
            match self.rec.read_batch(self.next_batch) {
                Ok(b) => {
                    self.current = b.events.into();
                    self.peak = self.peak.max(self.current.len());
                    self.next_batch += 1;
                }
                Err(e) => {
                    self.failed = true;
                    return Some(Err(e));
                }
            }
        }
        self.current.pop_front().map(Ok)
    }
}

// ---------------------------------------------------------------------------
// Replay

/// Applies removal events to a copy of `initial`. Each removed voxel must
/// still hold the recorded label.
pub fn replay_events<I>(initial: &LabeledVolume, anatomy_digest: u64, events: I) -> Result<LabeledVolume, RecorderError>
where
    I: IntoIterator<Item = Result<EventRecord, RecorderError>>,
{
    let found = initial.digest();
    if found != anatomy_digest {
        return Err(RecorderError::WrongAnatomy { expected: anatomy_digest, found });
    }
    let mut vol = initial.clone();
    for ev in events {
        if let EventRecord::VoxelRemoved { index, label, .. } = ev? {
            if !vol.geometry().contains(index) {
                return Err(RecorderError::Replay(format!("voxel {index:?} outside grid")));
            }
            let have = vol.get(index);
            if have != label {
                return Err(RecorderError::Replay(format!("voxel {index:?} holds {have}, event removes {label}")));
            }
            vol.clear(index);
        }
    }
    Ok(vol)
}

pub fn replay_to_grid(initial: &LabeledVolume, rec: &Recording) -> Result<LabeledVolume, RecorderError> {
    replay_events(initial, rec.meta().anatomy_digest, rec.events())
}
