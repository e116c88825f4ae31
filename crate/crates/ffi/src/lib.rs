//! C ABI over the voxdrill simulator.
//!
//! Objects are opaque heap handles created by `*_new`/`*_open`/`*_load`
//! functions and released with the matching `*_free`. Every fallible call
//! returns a [`VdStatus`]; on failure a description is available from
//! [`vd_last_error`] on the same thread until the next failing call.
//! Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use nalgebra::Quaternion;
use voxdrill::cli::{self, CliError, ErrorKind};
use voxdrill::config::SessionConfig;
use voxdrill::drill::{self, AudioConfig, DrillInput, HapticConfig};
use voxdrill::metrics;
use voxdrill::nrrd::{self, Encoding, ScalarType};
use voxdrill::recorder::{self, Recording, WriterHandle};
use voxdrill::session::{Session, Trajectory};
use voxdrill::volume::{GridGeometry, LabeledVolume, Segment, SegmentTable, VoxelIndex};
use voxdrill::Vec3;

/// Result of every fallible call. Values 2..=10 match the CLI exit codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VdStatus {
    Ok = 0,
    InvalidArgument = 2,
    Io = 3,
    Parse = 4,
    Unsupported = 5,
    Validation = 6,
    InsufficientData = 7,
    Verification = 8,
    Corrupt = 9,
    Network = 10,
    NullPointer = 11,
    BufferTooSmall = 12,
    Panic = 13,
}

/// Drill command for one tick. `orientation` is `[w, x, y, z]`.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct VdDrillInput {
    pub position: [f64; 3],
    pub orientation: [f64; 4],
    pub pedal: f64,
    pub burr_id: u32,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct VdStepResult {
    pub tick: u64,
    pub t: f64,
    pub removed: u32,
    pub contacts: u32,
    pub warnings: u32,
    pub force: [f64; 3],
    pub pitch: f64,
}

pub struct VdVolume {
    inner: LabeledVolume,
}

pub struct VdSession {
    session: Session,
    writer: Option<WriterHandle>,
}

pub struct VdRecording {
    inner: Recording,
}

struct Failure {
    status: VdStatus,
    message: String,
}

impl Failure {
    fn new(status: VdStatus, message: impl Into<String>) -> Self {
        Self { status, message: message.into() }
    }
}

impl<E: Into<CliError>> From<E> for Failure {
    fn from(e: E) -> Self {
        let e: CliError = e.into();
        let status = match e.kind {
            ErrorKind::Usage => VdStatus::InvalidArgument,
            ErrorKind::Io => VdStatus::Io,
            ErrorKind::Parse => VdStatus::Parse,
            ErrorKind::Unsupported => VdStatus::Unsupported,
            ErrorKind::Validation => VdStatus::Validation,
            ErrorKind::InsufficientData => VdStatus::InsufficientData,
            ErrorKind::Verification => VdStatus::Verification,
            ErrorKind::Corrupt => VdStatus::Corrupt,
            ErrorKind::Network => VdStatus::Network,
        };
        Failure { status, message: e.message }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard<F>(f: F) -> VdStatus
where
    F: FnOnce() -> Result<(), Failure>,
{
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => VdStatus::Ok,
        Ok(Err(fail)) => {
            set_last_error(&fail.message);
            fail.status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(&format!("panic: {msg}"));
            VdStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure::new(VdStatus::NullPointer, format!("{what} is null"))
}

unsafe fn path_arg(p: *const c_char, what: &str) -> Result<PathBuf, Failure> {
    Ok(PathBuf::from(str_arg(p, what)?))
}

unsafe fn str_arg(p: *const c_char, what: &str) -> Result<String, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map(str::to_owned)
        .map_err(|_| Failure::new(VdStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn opt_str_arg(p: *const c_char, what: &str) -> Result<Option<String>, Failure> {
    if p.is_null() {
        Ok(None)
    } else {
        str_arg(p, what).map(Some)
    }
}

unsafe fn out<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn handle_mut<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| null(what))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn vd_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message for the last failed call on this thread, or NULL. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn vd_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

// ---------------------------------------------------------------------------
// Volumes

/// Loads a NRRD/seg.nrrd file or slice-stack directory.
///
/// # Safety
/// `path` must be a valid C string; `out_volume` must be writable.
#[no_mangle]
pub unsafe extern "C" fn vd_volume_load(path: *const c_char, out_volume: *mut *mut VdVolume) -> VdStatus {
    guard(|| {
        let slot = out(out_volume, "out_volume")?;
        let path = path_arg(path, "path")?;
        let inner = cli::load_volume(&path, None, "Bone")?;
        *slot = Box::into_raw(Box::new(VdVolume { inner }));
        Ok(())
    })
}

/// Builds a volume from `dims[0]*dims[1]*dims[2]` labels (x fastest). Every
/// non-zero label gets a segment named `Segment <label>`.
///
/// # Safety
/// `dims` and `spacing` must point to 3 values, `labels` to `count` values.
#[no_mangle]
pub unsafe extern "C" fn vd_volume_from_labels(
    dims: *const usize,
    spacing: *const f64,
    labels: *const u16,
    count: usize,
    out_volume: *mut *mut VdVolume,
) -> VdStatus {
    guard(|| {
        let slot = out(out_volume, "out_volume")?;
        if dims.is_null() || spacing.is_null() || (labels.is_null() && count > 0) {
            return Err(null("dims, spacing or labels"));
        }
        let dims = [*dims, *dims.add(1), *dims.add(2)];
        let spacing = [*spacing, *spacing.add(1), *spacing.add(2)];
        let geometry = GridGeometry::new(dims, spacing, [0.0; 3])?;
        let labels: Vec<u16> = if count == 0 { Vec::new() } else { std::slice::from_raw_parts(labels, count).to_vec() };
        let mut segments = SegmentTable::new();
        let distinct: std::collections::BTreeSet<u16> = labels.iter().copied().filter(|&l| l != 0).collect();
        for l in distinct {
            let shade = 0.3 + 0.7 * ((l as f64 * 0.618_033_988_75) % 1.0);
            segments.insert(l, Segment::new(format!("Segment {l}"), [shade, 1.0 - shade * 0.5, 0.5]))?;
        }
        let inner = LabeledVolume::new(geometry, labels, segments)?;
        *slot = Box::into_raw(Box::new(VdVolume { inner }));
        Ok(())
    })
}

/// # Safety
/// `volume` must come from this library and not be freed twice. NULL is ignored.
#[no_mangle]
pub unsafe extern "C" fn vd_volume_free(volume: *mut VdVolume) {
    if !volume.is_null() {
        drop(Box::from_raw(volume));
    }
}

/// # Safety
/// `volume` must be a live handle; `out_dims` must have room for 3 values.
#[no_mangle]
pub unsafe extern "C" fn vd_volume_dims(volume: *const VdVolume, out_dims: *mut usize) -> VdStatus {
    guard(|| {
        let v = handle(volume, "volume")?;
        if out_dims.is_null() {
            return Err(null("out_dims"));
        }
        for (a, d) in v.inner.dims().iter().enumerate() {
            *out_dims.add(a) = *d;
        }
        Ok(())
    })
}

/// XXH64 content digest of the grid.
///
/// # Safety
/// `volume` must be a live handle; `out_digest` must be writable.
#[no_mangle]
pub unsafe extern "C" fn vd_volume_digest(volume: *const VdVolume, out_digest: *mut u64) -> VdStatus {
    guard(|| {
        *out(out_digest, "out_digest")? = handle(volume, "volume")?.inner.digest();
        Ok(())
    })
}

/// # Safety
/// `volume` must be a live handle; `out_count` must be writable.
#[no_mangle]
pub unsafe extern "C" fn vd_volume_occupied(volume: *const VdVolume, out_count: *mut u64) -> VdStatus {
    guard(|| {
        *out(out_count, "out_count")? = handle(volume, "volume")?.inner.occupied_count() as u64;
        Ok(())
    })
}

/// # Safety
/// `volume` must be a live handle; `out_label` must be writable.
#[no_mangle]
pub unsafe extern "C" fn vd_volume_label_at(
    volume: *const VdVolume,
    i: u32,
    j: u32,
    k: u32,
    out_label: *mut u16,
) -> VdStatus {
    guard(|| {
        let v = handle(volume, "volume")?;
        let slot = out(out_label, "out_label")?;
        let idx = VoxelIndex::new(i, j, k);
        if !v.inner.geometry().contains(idx) {
            return Err(Failure::new(VdStatus::InvalidArgument, format!("voxel ({i}, {j}, {k}) outside the grid")));
        }
        *slot = v.inner.get(idx);
        Ok(())
    })
}

/// Writes the volume as gzip-encoded 16-bit seg.nrrd.
///
/// # Safety
/// `volume` must be a live handle; `path` a valid C string.
#[no_mangle]
pub unsafe extern "C" fn vd_volume_save_nrrd(volume: *const VdVolume, path: *const c_char) -> VdStatus {
    guard(|| {
        let v = handle(volume, "volume")?;
        let path = path_arg(path, "path")?;
        nrrd::write_labeled_file(&v.inner, path, ScalarType::U16, Encoding::Gzip)?;
        Ok(())
    })
}

// ---------------------------------------------------------------------------
// Sessions

/// Starts a session on a copy of `volume`. `config_toml` may be NULL for
/// defaults.
///
/// # Safety
/// `volume` must be a live handle, `config_toml` NULL or a valid C string,
/// `out_session` writable.
#[no_mangle]
pub unsafe extern "C" fn vd_session_new(
    volume: *const VdVolume,
    config_toml: *const c_char,
    out_session: *mut *mut VdSession,
) -> VdStatus {
    guard(|| {
        let slot = out(out_session, "out_session")?;
        let v = handle(volume, "volume")?;
        let cfg = match opt_str_arg(config_toml, "config_toml")? {
            Some(text) => SessionConfig::from_toml(&text)?,
            None => SessionConfig::default(),
        };
        let session = Session::new(v.inner.clone(), cfg)?;
        *slot = Box::into_raw(Box::new(VdSession { session, writer: None }));
        Ok(())
    })
}

/// Frees the session. An unfinished recording is finished first; its
/// errors are dropped.
///
/// # Safety
/// `session` must come from this library and not be freed twice. NULL is ignored.
#[no_mangle]
pub unsafe extern "C" fn vd_session_free(session: *mut VdSession) {
    if session.is_null() {
        return;
    }
    let mut s = Box::from_raw(session);
    if let Some(w) = s.writer.take() {
        let _ = catch_unwind(AssertUnwindSafe(|| cli::finish_recording(&mut s.session, w)));
    }
}

/// Advances one tick.
///
/// # Safety
/// `session` must be a live handle; `input` readable; `out_result` NULL or writable.
#[no_mangle]
pub unsafe extern "C" fn vd_session_step(
    session: *mut VdSession,
    input: *const VdDrillInput,
    out_result: *mut VdStepResult,
) -> VdStatus {
    guard(|| {
        let s = handle_mut(session, "session")?;
        let i = handle(input, "input")?;
        let [w, x, y, z] = i.orientation;
        let input = DrillInput::new(Vec3::from(i.position), Quaternion::new(w, x, y, z), i.pedal, i.burr_id as usize)
            .map_err(|e| Failure::new(VdStatus::InvalidArgument, e.to_string()))?;
        let r = s.session.step(&input)?;
        if let Some(o) = out_result.as_mut() {
            *o = VdStepResult {
                tick: r.tick,
                t: r.t,
                removed: r.outcome.removed.len() as u32,
                contacts: r.outcome.contact_count as u32,
                warnings: r.outcome.warnings.len() as u32,
                force: r.outcome.f_haptic.into(),
                pitch: r.outcome.pitch,
            };
        }
        Ok(())
    })
}

/// Plays a trajectory file (TOML or JSON keyframes) from the current time.
///
/// # Safety
/// `session` must be a live handle; `path` a valid C string; `out_steps` NULL or writable.
#[no_mangle]
pub unsafe extern "C" fn vd_session_run_script(
    session: *mut VdSession,
    path: *const c_char,
    out_steps: *mut u64,
) -> VdStatus {
    guard(|| {
        let s = handle_mut(session, "session")?;
        let traj = Trajectory::load(&path_arg(path, "path")?)?;
        let summary = s.session.run_script(&traj)?;
        if let Some(o) = out_steps.as_mut() {
            *o = summary.steps;
        }
        Ok(())
    })
}

/// # Safety
/// `session` must be a live handle; `out_digest` writable.
#[no_mangle]
pub unsafe extern "C" fn vd_session_digest(session: *const VdSession, out_digest: *mut u64) -> VdStatus {
    guard(|| {
        *out(out_digest, "out_digest")? = handle(session, "session")?.session.digest();
        Ok(())
    })
}

/// Simulated seconds elapsed.
///
/// # Safety
/// `session` must be a live handle; `out_t` writable.
#[no_mangle]
pub unsafe extern "C" fn vd_session_time(session: *const VdSession, out_t: *mut f64) -> VdStatus {
    guard(|| {
        *out(out_t, "out_t")? = handle(session, "session")?.session.t();
        Ok(())
    })
}

/// Copies the current grid into a new volume handle.
///
/// # Safety
/// `session` must be a live handle; `out_volume` writable.
#[no_mangle]
pub unsafe extern "C" fn vd_session_volume(session: *const VdSession, out_volume: *mut *mut VdVolume) -> VdStatus {
    guard(|| {
        let slot = out(out_volume, "out_volume")?;
        let inner = handle(session, "session")?.session.volume().clone();
        *slot = Box::into_raw(Box::new(VdVolume { inner }));
        Ok(())
    })
}

/// Records every following event into `dir`. `participant` and
/// `wall_clock` (RFC 3339) may be NULL. Must be called before the first step.
///
/// # Safety
/// `session` must be a live handle; string arguments NULL or valid C strings.
#[no_mangle]
pub unsafe extern "C" fn vd_session_start_recording(
    session: *mut VdSession,
    dir: *const c_char,
    participant: *const c_char,
    wall_clock: *const c_char,
) -> VdStatus {
    guard(|| {
        let s = handle_mut(session, "session")?;
        let dir = path_arg(dir, "dir")?;
        let participant = opt_str_arg(participant, "participant")?.unwrap_or_else(|| "anonymous".into());
        let clock = opt_str_arg(wall_clock, "wall_clock")?.unwrap_or_else(|| "1970-01-01T00:00:00+00:00".into());
        if s.writer.is_some() {
            return Err(Failure::new(VdStatus::InvalidArgument, "session is already recording"));
        }
        if s.session.tick() != 0 {
            return Err(Failure::new(VdStatus::InvalidArgument, "recording must start before the first tick"));
        }
        let batch = s.session.config().batch_size;
        s.writer = Some(cli::start_recording(&mut s.session, &dir, &participant, &clock, None, batch)?);
        Ok(())
    })
}

/// Seals the recording. The session is closed afterwards and refuses
/// further steps.
///
/// # Safety
/// `session` must be a live handle; `out_events` NULL or writable.
#[no_mangle]
pub unsafe extern "C" fn vd_session_finish_recording(session: *mut VdSession, out_events: *mut u64) -> VdStatus {
    guard(|| {
        let s = handle_mut(session, "session")?;
        let w = s.writer.take().ok_or_else(|| Failure::new(VdStatus::InvalidArgument, "session is not recording"))?;
        let manifest = cli::finish_recording(&mut s.session, w)?;
        if let Some(o) = out_events.as_mut() {
            *o = manifest.total_events;
        }
        Ok(())
    })
}

// ---------------------------------------------------------------------------
// Recordings

/// Opens a recording directory after checking batch checksums.
///
/// # Safety
/// `dir` must be a valid C string; `out_recording` writable.
#[no_mangle]
pub unsafe extern "C" fn vd_recording_open(dir: *const c_char, out_recording: *mut *mut VdRecording) -> VdStatus {
    guard(|| {
        let slot = out(out_recording, "out_recording")?;
        let inner = recorder::open_recording(&path_arg(dir, "dir")?)?;
        *slot = Box::into_raw(Box::new(VdRecording { inner }));
        Ok(())
    })
}

/// # Safety
/// `recording` must come from this library and not be freed twice. NULL is ignored.
#[no_mangle]
pub unsafe extern "C" fn vd_recording_free(recording: *mut VdRecording) {
    if !recording.is_null() {
        drop(Box::from_raw(recording));
    }
}

/// # Safety
/// `recording` must be a live handle; `out_count` writable.
#[no_mangle]
pub unsafe extern "C" fn vd_recording_event_count(recording: *const VdRecording, out_count: *mut u64) -> VdStatus {
    guard(|| {
        *out(out_count, "out_count")? = handle(recording, "recording")?.inner.manifest().total_events;
        Ok(())
    })
}

/// Grid digest stored when the recording was sealed.
///
/// # Safety
/// `recording` must be a live handle; `out_digest` writable.
#[no_mangle]
pub unsafe extern "C" fn vd_recording_final_digest(recording: *const VdRecording, out_digest: *mut u64) -> VdStatus {
    guard(|| {
        let slot = out(out_digest, "out_digest")?;
        let m = handle(recording, "recording")?.inner.manifest();
        *slot = m.final_digest.ok_or_else(|| Failure::new(VdStatus::Corrupt, "recording has no final digest"))?;
        Ok(())
    })
}

/// Replays the removals onto `initial` (NULL = the anatomy copy stored in
/// the recording) and returns the resulting grid.
///
/// # Safety
/// `recording` must be a live handle; `initial` NULL or live; `out_volume` writable.
#[no_mangle]
pub unsafe extern "C" fn vd_recording_replay(
    recording: *const VdRecording,
    initial: *const VdVolume,
    out_volume: *mut *mut VdVolume,
) -> VdStatus {
    guard(|| {
        let slot = out(out_volume, "out_volume")?;
        let r = handle(recording, "recording")?;
        let start = match initial.as_ref() {
            Some(v) => v.inner.clone(),
            None => cli::load_volume(&r.inner.dir().join(cli::ANATOMY_FILE), None, "Bone")?,
        };
        let inner = recorder::replay_to_grid(&start, &r.inner)?;
        *slot = Box::into_raw(Box::new(VdVolume { inner }));
        Ok(())
    })
}

/// Writes the metrics report as NUL-terminated JSON into `buf`. The required
/// size including the NUL goes to `out_needed` (if not NULL); a short or
/// NULL buffer yields `BUFFER_TOO_SMALL` so callers can size and retry.
///
/// # Safety
/// `recording` must be a live handle; `buf` NULL or writable for `capacity` bytes.
#[no_mangle]
pub unsafe extern "C" fn vd_recording_metrics_json(
    recording: *const VdRecording,
    buf: *mut c_char,
    capacity: usize,
    out_needed: *mut usize,
) -> VdStatus {
    guard(|| {
        let r = handle(recording, "recording")?;
        let json = metrics::report(&r.inner)?.to_json();
        let needed = json.len() + 1;
        if let Some(n) = out_needed.as_mut() {
            *n = needed;
        }
        if buf.is_null() || capacity < needed {
            return Err(Failure::new(VdStatus::BufferTooSmall, format!("metrics need {needed} bytes")));
        }
        ptr::copy_nonoverlapping(json.as_ptr(), buf.cast::<u8>(), json.len());
        *buf.add(json.len()) = 0;
        Ok(())
    })
}

// ---------------------------------------------------------------------------
// Force and pitch models

/// Audio pitch for a collision force.
///
/// # Safety
/// `force` must point to 3 values; `out_pitch` writable.
#[no_mangle]
pub unsafe extern "C" fn vd_audio_pitch(force: *const f64, p_max: f64, f_max: f64, out_pitch: *mut f64) -> VdStatus {
    guard(|| {
        if force.is_null() {
            return Err(null("force"));
        }
        let slot = out(out_pitch, "out_pitch")?;
        if !(f_max > 0.0 && f_max.is_finite() && p_max.is_finite()) {
            return Err(Failure::new(VdStatus::InvalidArgument, "p_max must be finite and f_max > 0"));
        }
        let f = Vec3::new(*force, *force.add(1), *force.add(2));
        *slot = drill::audio_pitch(&f, &AudioConfig { p_max, f_max });
        Ok(())
    })
}

/// Haptic output force: collision force plus drill vibration while running.
///
/// # Safety
/// `f_collision` must point to 3 values; `out_force` must have room for 3.
#[no_mangle]
pub unsafe extern "C" fn vd_haptic_force(
    f_collision: *const f64,
    drill_on: bool,
    t: f64,
    a_drill: f64,
    frequency: f64,
    out_force: *mut f64,
) -> VdStatus {
    guard(|| {
        if f_collision.is_null() || out_force.is_null() {
            return Err(null("f_collision or out_force"));
        }
        let f = Vec3::new(*f_collision, *f_collision.add(1), *f_collision.add(2));
        let cfg = HapticConfig { a_drill, frequency, ..HapticConfig::default() };
        let h = drill::haptic_force(&f, drill_on, t, &cfg);
        for a in 0..3 {
            *out_force.add(a) = h[a];
        }
        Ok(())
    })
}
