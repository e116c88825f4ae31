//! `voxdrill` command line.
//!
//! Exit codes: 0 success, 2 usage, 3 I/O, 4 parse, 5 unsupported,
//! 6 validation, 7 insufficient data, 8 verification mismatch,
//! 9 corrupt or incomplete recording, 10 network. Failures print one line
//! on stderr: `voxdrill: error kind=<kind> code=<n>: <message>`.

use std::ffi::OsString;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::config::{ConfigError, SessionConfig};
use crate::event::EventRecord;
use crate::gateway::{self, GatewayConfig, GatewayError, Pacing};
use crate::isosmooth::{self, IsoError, OrthoCamera, RaycastParams};
use crate::metrics::{self, MetricsError};
use crate::nrrd::{self, Encoding, NrrdError, ScalarType};
use crate::recorder::{self, open_recording, Recorder, RecorderError, RecordingMeta};
use crate::session::{Session, SessionError, Trajectory};
use crate::stack::{self, ImageFormat, StackError};
use crate::volume::{LabeledVolume, Segment, Volume, VolumeError};
use crate::Vec3;

/// Anatomy copy stored next to each recording so replay needs no extra input.
pub const ANATOMY_FILE: &str = "anatomy.nrrd";
pub const FRAMES_DIR: &str = "frames";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Usage = 2,
    Io = 3,
    Parse = 4,
    Unsupported = 5,
    Validation = 6,
    InsufficientData = 7,
    Verification = 8,
    Corrupt = 9,
    Network = 10,
}

impl ErrorKind {
    pub fn code(self) -> i32 {
        self as i32
    }

    pub fn name(self) -> &'static str {
        match self {
            ErrorKind::Usage => "usage",
            ErrorKind::Io => "io",
            ErrorKind::Parse => "parse",
            ErrorKind::Unsupported => "unsupported",
            ErrorKind::Validation => "validation",
            ErrorKind::InsufficientData => "insufficient-data",
            ErrorKind::Verification => "verification",
            ErrorKind::Corrupt => "corrupt",
            ErrorKind::Network => "network",
        }
    }
}

#[derive(Debug)]
pub struct CliError {
    pub kind: ErrorKind,
    pub message: String,
}

impl CliError {
    pub fn new(kind: ErrorKind, message: impl Into<String>) -> Self {
        Self { kind, message: message.into() }
    }

    /// The single stderr line.
    pub fn diagnostic(&self) -> String {
        let msg: String = self.message.split_whitespace().collect::<Vec<_>>().join(" ");
        format!("voxdrill: error kind={} code={}: {}", self.kind.name(), self.kind.code(), msg)
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

fn io(path: &Path, e: std::io::Error) -> CliError {
    CliError::new(ErrorKind::Io, format!("{}: {e}", path.display()))
}

impl From<VolumeError> for CliError {
    fn from(e: VolumeError) -> Self {
        CliError::new(ErrorKind::Validation, e.to_string())
    }
}

impl From<NrrdError> for CliError {
    fn from(e: NrrdError) -> Self {
        let kind = match &e {
            NrrdError::Unsupported { .. } => ErrorKind::Unsupported,
            NrrdError::Io(_) => ErrorKind::Io,
            NrrdError::OutOfRange { .. } | NrrdError::Volume(_) => ErrorKind::Validation,
            _ => ErrorKind::Parse,
        };
        CliError::new(kind, e.to_string())
    }
}

impl From<StackError> for CliError {
    fn from(e: StackError) -> Self {
        let kind = match &e {
            StackError::UnknownFormat(_) => ErrorKind::Unsupported,
            StackError::Io { .. } => ErrorKind::Io,
            StackError::Image { .. } | StackError::Sidecar { .. } => ErrorKind::Parse,
            _ => ErrorKind::Validation,
        };
        CliError::new(kind, e.to_string())
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        let kind = match &e {
            ConfigError::Io { .. } => ErrorKind::Io,
            ConfigError::Syntax(_) => ErrorKind::Parse,
            _ => ErrorKind::Validation,
        };
        CliError::new(kind, e.to_string())
    }
}

impl From<SessionError> for CliError {
    fn from(e: SessionError) -> Self {
        match e {
            SessionError::Config(c) => c.into(),
            SessionError::Sink(_) => CliError::new(ErrorKind::Io, e.to_string()),
            other => CliError::new(ErrorKind::Validation, other.to_string()),
        }
    }
}

impl From<RecorderError> for CliError {
    fn from(e: RecorderError) -> Self {
        let kind = match &e {
            RecorderError::Io { .. } => ErrorKind::Io,
            RecorderError::Corrupt { .. } | RecorderError::Incomplete { .. } | RecorderError::Manifest(_) => {
                ErrorKind::Corrupt
            }
            RecorderError::WrongAnatomy { .. } | RecorderError::Replay(_) => ErrorKind::Verification,
            _ => ErrorKind::Validation,
        };
        CliError::new(kind, e.to_string())
    }
}

impl From<MetricsError> for CliError {
    fn from(e: MetricsError) -> Self {
        match e {
            MetricsError::Recorder(r) => r.into(),
            MetricsError::InsufficientData(_) => CliError::new(ErrorKind::InsufficientData, e.to_string()),
            MetricsError::NonUniform(_) => CliError::new(ErrorKind::Validation, e.to_string()),
            MetricsError::Io(_) => CliError::new(ErrorKind::Io, e.to_string()),
        }
    }
}

impl From<IsoError> for CliError {
    fn from(e: IsoError) -> Self {
        let kind = if matches!(e, IsoError::Image { .. }) { ErrorKind::Io } else { ErrorKind::Validation };
        CliError::new(kind, e.to_string())
    }
}

impl From<GatewayError> for CliError {
    fn from(e: GatewayError) -> Self {
        match e {
            GatewayError::Session(s) => s.into(),
            other => CliError::new(ErrorKind::Network, other.to_string()),
        }
    }
}

pub type CliResult<T = ()> = Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "voxdrill", version, about = "Voxel drilling simulator, recorder and analysis tool")]
pub struct Cli {
    /// Session config (TOML). `VOXDRILL_*` environment variables override it.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate a NRRD scan and cache it as a labeled volume.
    Import(ImportArgs),
    /// Convert between a labeled volume and a PNG/JPEG slice stack.
    Convert(ConvertArgs),
    /// Run a scripted session headless, optionally recording it.
    Simulate(SimulateArgs),
    /// Serve an interactive session over the network.
    Serve(ServeArgs),
    /// Rebuild the final grid of a recording.
    Replay(ReplayArgs),
    /// Compute skill metrics from a recording.
    Metrics(MetricsArgs),
    /// Export recording contents to other formats.
    Export(ExportArgs),
    /// Render depth and label maps from an orthographic camera.
    Render(RenderArgs),
}

#[derive(Debug, Args)]
pub struct ImportArgs {
    /// NRRD / seg.nrrd file or slice-stack directory.
    pub input: PathBuf,
    #[arg(short, long)]
    pub output: PathBuf,
    /// Iso value for intensity scans, in [0,1] of the normalized range.
    #[arg(long)]
    pub iso: Option<f64>,
    /// Segment name given to thresholded intensity scans.
    #[arg(long, default_value = "Bone")]
    pub segment: String,
}

#[derive(Debug, Args)]
pub struct ConvertArgs {
    pub input: PathBuf,
    #[arg(long, value_name = "DIR", conflicts_with = "to_nrrd", required_unless_present = "to_nrrd")]
    pub to_stack: Option<PathBuf>,
    #[arg(long, value_name = "FILE")]
    pub to_nrrd: Option<PathBuf>,
    #[arg(long, default_value = "png")]
    pub format: String,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    pub volume: PathBuf,
    /// Trajectory keyframes (TOML or JSON).
    #[arg(long)]
    pub script: PathBuf,
    /// Recording directory.
    #[arg(long)]
    pub record: Option<PathBuf>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long, default_value = "anonymous")]
    pub participant: String,
    /// Pin the recorded wall-clock start (RFC 3339).
    #[arg(long, value_name = "TIME")]
    pub fixed_clock: Option<String>,
    /// Stored in the recording metadata.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Render and record a depth/label frame every this many simulated seconds.
    #[arg(long, value_name = "SECONDS", requires = "camera", requires = "record")]
    pub depth_every: Option<f64>,
    #[arg(long)]
    pub camera: Option<CameraSpec>,
    #[arg(long, default_value = "128x128")]
    pub res: Resolution,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    pub volume: PathBuf,
    #[arg(long, default_value = "127.0.0.1:7878")]
    pub endpoint: String,
    #[arg(long, default_value_t = 60.0)]
    pub state_rate: f64,
    /// Static files served to plain HTTP requests.
    #[arg(long)]
    pub ui_dir: Option<PathBuf>,
    #[arg(long)]
    pub token: Option<String>,
    /// Wall seconds per simulated second.
    #[arg(long, default_value_t = 1.0)]
    pub time_scale: f64,
    /// Stop after this many simulated seconds.
    #[arg(long)]
    pub duration: Option<f64>,
    /// Record the session into this directory.
    #[arg(long)]
    pub record: Option<PathBuf>,
    #[arg(long, default_value = "anonymous")]
    pub participant: String,
    #[arg(long, value_name = "TIME")]
    pub fixed_clock: Option<String>,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    pub recording: PathBuf,
    /// Starting anatomy; defaults to the copy inside the recording.
    #[arg(long)]
    pub volume: Option<PathBuf>,
    /// Fail unless the replayed digest equals the recorded final digest.
    #[arg(long)]
    pub verify: bool,
    /// Write the replayed grid as NRRD.
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ReportFormat {
    Json,
    Table,
}

#[derive(Debug, Args)]
pub struct MetricsArgs {
    pub recording: PathBuf,
    #[arg(long, value_enum, default_value = "json")]
    pub format: ReportFormat,
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    pub recording: PathBuf,
    /// One row per event.
    #[arg(long, value_name = "FILE")]
    pub csv: Option<PathBuf>,
    /// Removed voxel centers as an ASCII point cloud.
    #[arg(long, value_name = "FILE")]
    pub ply: Option<PathBuf>,
    #[arg(long, value_name = "FILE")]
    pub hdf5: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    pub volume: PathBuf,
    #[arg(long)]
    pub camera: CameraSpec,
    /// `depth.png,label.png[,normals.png]`
    #[arg(short, long)]
    pub output: String,
    #[arg(long, default_value = "256x256")]
    pub res: Resolution,
    /// Smoothing kernel size (odd).
    #[arg(long, default_value_t = 3)]
    pub kernel: usize,
}

/// `cx,cy,cz:dx,dy,dz:ux,uy,uz:width,height` in mm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraSpec(pub OrthoCamera);

impl FromStr for CameraSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.split(':').collect();
        if parts.len() != 4 {
            return Err("expected center:direction:up:width,height".into());
        }
        let nums = |p: &str, n: usize| -> Result<Vec<f64>, String> {
            let v: Vec<f64> =
                p.split(',').map(|x| x.trim().parse::<f64>()).collect::<Result<_, _>>().map_err(|e| e.to_string())?;
            if v.len() != n || v.iter().any(|x| !x.is_finite()) {
                return Err(format!("`{p}` needs {n} finite numbers"));
            }
            Ok(v)
        };
        let c = nums(parts[0], 3)?;
        let d = nums(parts[1], 3)?;
        let u = nums(parts[2], 3)?;
        let wh = nums(parts[3], 2)?;
        let cam = OrthoCamera {
            center: Vec3::new(c[0], c[1], c[2]),
            view_dir: Vec3::new(d[0], d[1], d[2]),
            up: Vec3::new(u[0], u[1], u[2]),
            width_mm: wh[0],
            height_mm: wh[1],
        };
        cam.basis().map_err(|e| e.to_string())?;
        if !(cam.width_mm > 0.0 && cam.height_mm > 0.0) {
            return Err("width and height must be > 0".into());
        }
        Ok(CameraSpec(cam))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Resolution(pub usize, pub usize);

impl FromStr for Resolution {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (w, h) = s.split_once(['x', 'X']).ok_or("expected WIDTHxHEIGHT")?;
        let w: usize = w.parse().map_err(|_| "bad width")?;
        let h: usize = h.parse().map_err(|_| "bad height")?;
        if w == 0 || h == 0 || w > 8192 || h > 8192 {
            return Err("resolution must be between 1 and 8192 per side".into());
        }
        Ok(Resolution(w, h))
    }
}

/// Parses `args` (program name first), runs the command and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind as K;
            if matches!(e.kind(), K::DisplayHelp | K::DisplayVersion | K::DisplayHelpOnMissingArgumentOrSubcommand) {
                let _ = e.print();
                return if e.kind() == K::DisplayHelpOnMissingArgumentOrSubcommand {
                    ErrorKind::Usage.code()
                } else {
                    0
                };
            }
            let rendered = e.to_string();
            let first = rendered.lines().find(|l| !l.trim().is_empty()).unwrap_or("invalid arguments");
            let err = CliError::new(ErrorKind::Usage, first.trim_start_matches("error: "));
            eprintln!("{}", err.diagnostic());
            return ErrorKind::Usage.code();
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", e.diagnostic());
            e.kind.code()
        }
    }
}

pub fn execute(cli: &Cli) -> CliResult {
    match &cli.command {
        Command::Import(a) => import(a),
        Command::Convert(a) => convert(a),
        Command::Simulate(a) => simulate(a, &load_config(cli.config.as_deref())?),
        Command::Serve(a) => serve(a, &load_config(cli.config.as_deref())?),
        Command::Replay(a) => replay(a),
        Command::Metrics(a) => metrics_cmd(a),
        Command::Export(a) => export(a),
        Command::Render(a) => render(a),
    }
}

pub fn load_config(path: Option<&Path>) -> CliResult<SessionConfig> {
    let mut cfg = match path {
        Some(p) => SessionConfig::load(p)?,
        None => SessionConfig::default(),
    };
    cfg.apply_env(std::env::vars())?;
    cfg.validate()?;
    Ok(cfg)
}

/// Loads a NRRD file or slice-stack directory; intensity scans are
/// thresholded at their iso value into a single segment.
pub fn load_volume(path: &Path, iso: Option<f64>, segment: &str) -> CliResult<LabeledVolume> {
    if path.is_dir() {
        return Ok(stack::import_image_stack(path)?);
    }
    if !path.exists() {
        return Err(CliError::new(ErrorKind::Io, format!("{}: no such file", path.display())));
    }
    match nrrd::read_nrrd_file(path)? {
        Volume::Labeled(v) => Ok(v),
        Volume::Intensity(v) => {
            let v = match iso {
                Some(t) => v.with_iso_value(t)?,
                None => v,
            };
            Ok(v.threshold(1, Segment::new(segment, [0.95, 0.92, 0.84]))?)
        }
    }
}

fn write_volume(vol: &LabeledVolume, path: &Path) -> CliResult {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| io(parent, e))?;
    }
    nrrd::write_labeled_file(vol, path, ScalarType::U16, Encoding::Gzip)?;
    Ok(())
}

fn volume_summary(vol: &LabeledVolume) -> String {
    let d = vol.dims();
    format!(
        "dims {}x{}x{} spacing {:?} segments {} occupied {} digest {:016x}",
        d[0],
        d[1],
        d[2],
        vol.spacing(),
        vol.segments().len(),
        vol.occupied_count(),
        vol.digest()
    )
}

fn import(a: &ImportArgs) -> CliResult {
    if let Some(t) = a.iso {
        if !(t > 0.0 && t < 1.0) {
            return Err(CliError::new(ErrorKind::Usage, format!("--iso must be in (0,1), got {t}")));
        }
    }
    let vol = load_volume(&a.input, a.iso, &a.segment)?;
    write_volume(&vol, &a.output)?;
    println!("{}", volume_summary(&vol));
    Ok(())
}

fn convert(a: &ConvertArgs) -> CliResult {
    let format: ImageFormat = a.format.parse()?;
    let vol = load_volume(&a.input, None, "Bone")?;
    if let Some(dir) = &a.to_stack {
        let n = stack::export_image_stack(&vol, dir, format)?;
        println!("wrote {n} slices to {}", dir.display());
    }
    if let Some(out) = &a.to_nrrd {
        write_volume(&vol, out)?;
        println!("{}", volume_summary(&vol));
    }
    Ok(())
}

fn wall_clock(fixed: Option<&str>) -> CliResult<String> {
    match fixed {
        Some(s) => chrono::DateTime::parse_from_rfc3339(s)
            .map(|t| t.to_rfc3339())
            .map_err(|e| CliError::new(ErrorKind::Usage, format!("--fixed-clock {s:?}: {e}"))),
        None => Ok(chrono::Utc::now().to_rfc3339()),
    }
}

/// Attaches a recorder writer to `session` and stores the anatomy copy.
pub fn start_recording(
    session: &mut Session,
    dir: &Path,
    participant: &str,
    clock: &str,
    seed: Option<u64>,
    batch_size: usize,
) -> CliResult<recorder::WriterHandle> {
    let mut meta = RecordingMeta::for_session(session, participant, clock);
    meta.seed = seed;
    let rec = Recorder::create(dir, meta, batch_size)?;
    nrrd::write_labeled_file(session.volume(), dir.join(ANATOMY_FILE), ScalarType::U16, Encoding::Gzip)?;
    let (sink, handle) = recorder::spawn_writer(rec, 4096);
    session.attach_sink(Box::new(sink));
    Ok(handle)
}

/// Closes the session sink, drains the writer and seals the manifest.
pub fn finish_recording(session: &mut Session, handle: recorder::WriterHandle) -> CliResult<recorder::Manifest> {
    drop(session.close());
    let mut rec = handle.finish()?;
    rec.set_final_digest(session.digest());
    Ok(rec.close()?)
}

fn write_depth_frame(session: &Session, dir: &Path, id: u64, cam: &OrthoCamera, res: Resolution) -> CliResult<String> {
    let maps = isosmooth::render_ortho_maps(session.volume(), cam, (res.0, res.1), &RaycastParams::default())?;
    let frames = dir.join(FRAMES_DIR);
    fs::create_dir_all(&frames).map_err(|e| io(&frames, e))?;
    let stem = format!("frame_{id:06}");
    let mut raw = Vec::with_capacity(maps.depth.len() * 4);
    for d in &maps.depth {
        raw.extend_from_slice(&(*d as f32).to_le_bytes());
    }
    let depth_path = frames.join(format!("{stem}.depth.f32"));
    fs::write(&depth_path, raw).map_err(|e| io(&depth_path, e))?;
    isosmooth::write_label_png(&maps, session.volume().segments(), &frames.join(format!("{stem}.labels.png")))?;
    Ok(format!("{FRAMES_DIR}/{stem}"))
}

fn simulate(a: &SimulateArgs, cfg: &SessionConfig) -> CliResult {
    let vol = load_volume(&a.volume, None, "Bone")?;
    let traj = Trajectory::load(&a.script)?;
    let mut cfg = cfg.clone();
    if let Some(b) = a.batch_size {
        cfg.batch_size = b;
    }
    cfg.validate()?;
    let clock = wall_clock(a.fixed_clock.as_deref())?;
    let mut session = Session::new(vol, cfg.clone())?;
    if let Some(cam) = a.camera {
        session.set_camera(crate::event::Pose::new(cam.0.center, camera_orientation(&cam.0)));
    }
    let handle = match &a.record {
        Some(dir) => Some(start_recording(&mut session, dir, &a.participant, &clock, a.seed, cfg.batch_size)?),
        None => None,
    };
    let depth_ticks = match a.depth_every {
        Some(s) if s.is_finite() && s > 0.0 => Some(((s * cfg.tick_rate_hz).round() as u64).max(1)),
        Some(s) => return Err(CliError::new(ErrorKind::Usage, format!("--depth-every must be > 0, got {s}"))),
        None => None,
    };
    let mut frame_id = 0u64;
    let mut depth_err = None;
    let result = session.run_script_with(&traj, |s, report| {
        let (Some(every), Some(cam), Some(dir)) = (depth_ticks, a.camera, a.record.as_ref()) else { return Ok(()) };
        if report.tick % every != 0 {
            return Ok(());
        }
        frame_id += 1;
        match write_depth_frame(s, dir, frame_id, &cam.0, a.res) {
            Ok(reference) => s.record_depth_frame(frame_id, &reference),
            Err(e) => {
                let msg = e.message.clone();
                depth_err = Some(e);
                Err(SessionError::Sink(msg))
            }
        }
    });
    let summary = match (result, depth_err) {
        (_, Some(e)) => return Err(e),
        (r, None) => r?,
    };
    if let Some(h) = handle {
        let manifest = finish_recording(&mut session, h)?;
        eprintln!(
            "recorded {} events in {} batches ({} bytes)",
            manifest.total_events,
            manifest.batches.len(),
            manifest.total_bytes()
        );
    }
    println!("{}", serde_json::to_string_pretty(&summary).expect("summary serializes"));
    Ok(())
}

fn camera_orientation(cam: &OrthoCamera) -> nalgebra::UnitQuaternion<f64> {
    match cam.basis() {
        Ok((right, up, forward)) => {
            let m = nalgebra::Matrix3::from_columns(&[right, up, forward]);
            nalgebra::UnitQuaternion::from_rotation_matrix(&nalgebra::Rotation3::from_matrix_unchecked(m))
        }
        Err(_) => nalgebra::UnitQuaternion::identity(),
    }
}

fn serve(a: &ServeArgs, cfg: &SessionConfig) -> CliResult {
    if !(a.state_rate.is_finite() && a.state_rate > 0.0 && a.state_rate <= cfg.tick_rate_hz) {
        return Err(CliError::new(ErrorKind::Usage, format!("--state-rate must be in (0, {}]", cfg.tick_rate_hz)));
    }
    if !(a.time_scale.is_finite() && a.time_scale > 0.0) {
        return Err(CliError::new(ErrorKind::Usage, "--time-scale must be > 0"));
    }
    if let Some(dir) = &a.ui_dir {
        if !dir.is_dir() {
            return Err(CliError::new(ErrorKind::Io, format!("{}: not a directory", dir.display())));
        }
    }
    let vol = load_volume(&a.volume, None, "Bone")?;
    let mut session = Session::new(vol, cfg.clone())?;
    let clock = wall_clock(a.fixed_clock.as_deref())?;
    let handle = match &a.record {
        Some(dir) => Some(start_recording(&mut session, dir, &a.participant, &clock, None, cfg.batch_size)?),
        None => None,
    };
    let gcfg = GatewayConfig {
        state_rate_hz: a.state_rate,
        token: a.token.clone(),
        pacing: Pacing::Realtime { time_scale: a.time_scale },
        stop_after_ticks: a.duration.map(|d| (d * cfg.tick_rate_hz).round() as u64),
        ui_dir: a.ui_dir.clone(),
        ..GatewayConfig::default()
    };
    let listener = gateway::bind(&a.endpoint)?;
    let server = gateway::serve(listener, session, gcfg)?;
    eprintln!("voxdrill: listening on {}", server.local_addr());
    let out = server.wait()?;
    let mut session = out.session;
    if let Some(h) = handle {
        finish_recording(&mut session, h)?;
    }
    let r = &out.report;
    println!(
        "ticks {} frames {} removals {} digest {:016x} tick interval mean {:.6}s p99 {:.6}s",
        r.ticks, r.frames, r.removals, r.final_digest, r.cadence.mean, r.cadence.p99
    );
    Ok(())
}

fn replay(a: &ReplayArgs) -> CliResult {
    let rec = open_recording(&a.recording)?;
    let anatomy = a.volume.clone().unwrap_or_else(|| a.recording.join(ANATOMY_FILE));
    let initial = load_volume(&anatomy, None, "Bone")?;
    let grid = recorder::replay_to_grid(&initial, &rec)?;
    let digest = grid.digest();
    if let Some(out) = &a.output {
        write_volume(&grid, out)?;
    }
    if a.verify {
        let m = rec.manifest();
        if !m.complete {
            return Err(CliError::new(ErrorKind::Corrupt, "recording was not closed; no final digest to verify"));
        }
        match m.final_digest {
            Some(d) if d == digest => println!("digest match {digest:016x}"),
            Some(d) => {
                return Err(CliError::new(
                    ErrorKind::Verification,
                    format!("digest mismatch: replayed {digest:016x}, recorded {d:016x}"),
                ))
            }
            None => return Err(CliError::new(ErrorKind::Corrupt, "manifest has no final digest")),
        }
    } else {
        println!("{digest:016x}");
    }
    Ok(())
}

fn metrics_cmd(a: &MetricsArgs) -> CliResult {
    let rec = open_recording(&a.recording)?;
    let report = metrics::report(&rec)?;
    let text = match a.format {
        ReportFormat::Json => report.to_json(),
        ReportFormat::Table => report.to_table(),
    };
    emit_text(a.output.as_deref(), &text)
}

fn emit_text(path: Option<&Path>, text: &str) -> CliResult {
    match path {
        Some(p) => fs::write(p, text).map_err(|e| io(p, e)),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes()).map_err(|e| io(Path::new("<stdout>"), e))
        }
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub const CSV_HEADER: &str =
    "t,group,i,j,k,label,r,g,b,fx,fy,fz,burr_id,radius_mm,tip,x,y,z,qw,qx,qy,qz,cx,cy,cz,cqw,cqx,cqy,cqz,frame_id,reference";

/// One CSV row; columns that do not apply to the event's group are empty.
pub fn csv_row(ev: &EventRecord) -> String {
    let mut f = vec![String::new(); 31];
    f[0] = format!("{:?}", ev.t());
    f[1] = ev.group().name().to_string();
    match ev {
        EventRecord::VoxelRemoved { index, label, color, .. } => {
            f[2] = index.i.to_string();
            f[3] = index.j.to_string();
            f[4] = index.k.to_string();
            f[5] = label.to_string();
            for c in 0..3 {
                f[6 + c] = color[c].to_string();
            }
        }
        EventRecord::ForceSample { force, .. } => {
            for c in 0..3 {
                f[9 + c] = format!("{:?}", force[c]);
            }
        }
        EventRecord::BurrChange { burr_id, radius_mm, tip, .. } => {
            f[12] = burr_id.to_string();
            f[13] = format!("{radius_mm:?}");
            f[14] = format!("{tip:?}").to_lowercase();
        }
        EventRecord::Kinematics { drill, camera, .. } => {
            for (c, v) in drill.to_array().iter().chain(camera.to_array().iter()).enumerate() {
                f[15 + c] = format!("{v:?}");
            }
        }
        EventRecord::DepthFrame { frame_id, reference, .. } => {
            f[29] = frame_id.to_string();
            f[30] = csv_field(reference);
        }
    }
    f.join(",")
}

fn export(a: &ExportArgs) -> CliResult {
    if a.hdf5.is_some() {
        return Err(CliError::new(
            ErrorKind::Unsupported,
            "HDF5 export is not built into this binary; use --csv or --ply",
        ));
    }
    if a.csv.is_none() && a.ply.is_none() {
        return Err(CliError::new(ErrorKind::Usage, "nothing to export: pass --csv and/or --ply"));
    }
    let rec = open_recording(&a.recording)?;
    if let Some(path) = &a.csv {
        let file = fs::File::create(path).map_err(|e| io(path, e))?;
        let mut out = std::io::BufWriter::new(file);
        writeln!(out, "{CSV_HEADER}").map_err(|e| io(path, e))?;
        for ev in rec.events() {
            writeln!(out, "{}", csv_row(&ev?)).map_err(|e| io(path, e))?;
        }
        out.flush().map_err(|e| io(path, e))?;
    }
    if let Some(path) = &a.ply {
        let analysis = metrics::analyze(&rec)?;
        let file = fs::File::create(path).map_err(|e| io(path, e))?;
        metrics::write_ply(&analysis.removed_points, std::io::BufWriter::new(file)).map_err(|e| io(path, e))?;
    }
    Ok(())
}

fn render(a: &RenderArgs) -> CliResult {
    let outputs: Vec<PathBuf> = a.output.split(',').map(|s| PathBuf::from(s.trim())).collect();
    if !(2..=3).contains(&outputs.len()) || outputs.iter().any(|p| p.as_os_str().is_empty()) {
        return Err(CliError::new(ErrorKind::Usage, "-o expects depth.png,label.png[,normals.png]"));
    }
    let vol = load_volume(&a.volume, None, "Bone")?;
    let params = RaycastParams { kernel_n: a.kernel, ..RaycastParams::default() };
    let maps = isosmooth::render_ortho_maps(&vol, &a.camera.0, (a.res.0, a.res.1), &params)?;
    isosmooth::write_depth_png(&maps, &outputs[0])?;
    isosmooth::write_label_png(&maps, vol.segments(), &outputs[1])?;
    if let Some(n) = outputs.get(2) {
        isosmooth::write_normal_png(&maps, n)?;
    }
    println!("{} of {} pixels hit the surface", maps.hits(), maps.width * maps.height);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn camera_spec_parses() {
        let c: CameraSpec = "8,8,40:0,0,-1:0,1,0:16,12".parse().unwrap();
        assert_eq!(c.0.center, Vec3::new(8.0, 8.0, 40.0));
        assert_eq!(c.0.width_mm, 16.0);
        assert!("1,2,3:0,0,0:0,1,0:4,4".parse::<CameraSpec>().is_err());
        assert!("1,2:0,0,1:0,1,0:4,4".parse::<CameraSpec>().is_err());
        assert!("1,2,3:0,0,1:0,0,1:4,4".parse::<CameraSpec>().is_err());
    }

    #[test]
    fn resolution_parses() {
        assert_eq!("64x32".parse::<Resolution>().unwrap(), Resolution(64, 32));
        assert!("0x4".parse::<Resolution>().is_err());
        assert!("64".parse::<Resolution>().is_err());
    }

    #[test]
    fn diagnostics_are_one_line() {
        let e = CliError::new(ErrorKind::Parse, "bad\nheader   line");
        assert_eq!(e.diagnostic(), "voxdrill: error kind=parse code=4: bad header line");
    }

    #[test]
    fn exit_codes_are_distinct() {
        use ErrorKind::*;
        let all = [Usage, Io, Parse, Unsupported, Validation, InsufficientData, Verification, Corrupt, Network];
        let codes: std::collections::BTreeSet<i32> = all.iter().map(|k| k.code()).collect();
        assert_eq!(codes.len(), all.len());
        assert!(!codes.contains(&0) && !codes.contains(&1));
    }

    #[test]
    fn unknown_flag_is_usage_error() {
        assert_eq!(run(["voxdrill", "metrics", "x", "--bogus"]), 2);
        assert_eq!(run(["voxdrill", "frobnicate"]), 2);
    }

    #[test]
    fn csv_quotes_references() {
        let ev = EventRecord::DepthFrame { t: 0.5, frame_id: 3, reference: "a,b".into() };
        let row = csv_row(&ev);
        assert!(row.starts_with("0.5,depth_frames,"));
        assert!(row.ends_with(",3,\"a,b\""));
        assert_eq!(row.matches(',').count(), CSV_HEADER.matches(',').count() + 1);
    }
}
