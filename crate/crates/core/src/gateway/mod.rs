//! Network front end for a running session.
//!
//! One simulation thread owns the [`Session`]. Connection threads talk to it
//! through a control channel (join/leave), a single-slot input mailbox that
//! always holds the newest controller input, and one bounded outgoing queue
//! per client. A client whose queue overflows is dropped with
//! `SLOW_CONSUMER`; the simulation never waits on a socket.
//!
//! A single TCP listener speaks two transports. Connections whose first
//! bytes are `GET ` are treated as HTTP: websocket upgrades carry one wire
//! frame per binary message, other requests are served from the optional UI
//! directory. Anything else is the raw framed protocol, which must open with
//! a `Join` frame.

pub mod client;
pub mod wire;

use std::collections::BTreeSet;
use std::io::{self, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::path::{Component, Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, SyncSender, TrySendError};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use nalgebra::Quaternion;
use thiserror::Error;
use tungstenite::{Message, WebSocket};

use crate::drill::DrillInput;
use crate::event::Pose;
use crate::session::{Session, SessionError};
use crate::Vec3;

use self::client::snapshot_frames;
use self::wire::{
    decode, encode, ErrorCode, FrameBuffer, Hello, InputFrame, Role, StateFrame, WireBurr, WireError, WireMessage,
    WireRemoval, WireSegment, WireWarning,
};

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("binding {addr}: {source}")]
    Bind { addr: String, source: io::Error },
    #[error("network: {0}")]
    Io(#[from] io::Error),
    #[error(transparent)]
    Wire(#[from] WireError),
    #[error(transparent)]
    Session(#[from] SessionError),
    #[error("handshake: {0}")]
    Handshake(String),
    #[error("server refused: {name} {text}")]
    Rejected { code: u16, name: String, text: String },
    #[error("mirror diverged: {0}")]
    Mirror(String),
    #[error("gateway stopped")]
    Stopped,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Pacing {
    /// One simulated second takes `time_scale` wall seconds.
    Realtime { time_scale: f64 },
    /// Tick as fast as possible.
    Unpaced,
}

#[derive(Debug, Clone)]
pub struct GatewayConfig {
    pub state_rate_hz: f64,
    /// Frames buffered per client before it counts as a slow consumer.
    pub queue_capacity: usize,
    /// Required `Join` token; `None` accepts any.
    pub token: Option<String>,
    pub pacing: Pacing,
    pub stop_after_ticks: Option<u64>,
    /// Hold the clock at zero until a controller joins.
    pub start_on_join: bool,
    /// Attach the grid digest to every n-th state frame (0 = only the last).
    pub digest_every_frames: u64,
    pub snapshot_chunk_bytes: usize,
    pub ui_dir: Option<PathBuf>,
    pub write_timeout: Duration,
    pub handshake_timeout: Duration,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        Self {
            state_rate_hz: 60.0,
            queue_capacity: 256,
            token: None,
            pacing: Pacing::Realtime { time_scale: 1.0 },
            stop_after_ticks: None,
            start_on_join: false,
            digest_every_frames: 60,
            snapshot_chunk_bytes: 64 * 1024,
            ui_dir: None,
            write_timeout: Duration::from_secs(2),
            handshake_timeout: Duration::from_secs(5),
        }
    }
}

/// Tick-interval statistics in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Cadence {
    pub intervals: usize,
    pub mean: f64,
    pub stddev: f64,
    pub p50: f64,
    pub p99: f64,
    pub max: f64,
}

impl Cadence {
    pub fn from_intervals(v: &[f64]) -> Self {
        if v.is_empty() {
            return Self::default();
        }
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        let mut s = v.to_vec();
        s.sort_by(f64::total_cmp);
        let q = |p: f64| s[((p * (s.len() - 1) as f64).round() as usize).min(s.len() - 1)];
        Self { intervals: v.len(), mean, stddev: var.sqrt(), p50: q(0.5), p99: q(0.99), max: s[s.len() - 1] }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ServerReport {
    pub ticks: u64,
    pub frames: u64,
    pub removals: u64,
    pub final_digest: u64,
    pub slow_consumers: u64,
    pub cadence: Cadence,
}

pub struct ServerOutcome {
    pub report: ServerReport,
    pub session: Session,
}

enum Outgoing {
    Frame(Arc<Vec<u8>>),
    Close(ErrorCode, String),
}

struct Registration {
    id: u64,
    role: Role,
    rx: Receiver<Outgoing>,
    evicted: Arc<AtomicBool>,
}

enum Control {
    Join { role: Role, token: String, reply: mpsc::Sender<Result<Registration, (ErrorCode, String)>> },
    Leave { id: u64 },
}

#[derive(Clone, Copy)]
struct AppliedInput {
    seq: u64,
    input: DrillInput,
    camera: Pose,
}

#[derive(Default)]
struct Mailbox {
    latest: Option<AppliedInput>,
    last_seq: u64,
}

struct Shared {
    control: Mutex<mpsc::Sender<Control>>,
    mailbox: Mutex<Mailbox>,
    stop: AtomicBool,
    burr_count: usize,
    cfg: GatewayConfig,
}

impl Shared {
    fn send_control(&self, c: Control) -> bool {
        self.control.lock().expect("control lock").send(c).is_ok()
    }

    fn join(&self, role: Role, token: String) -> Result<Registration, (ErrorCode, String)> {
        let (tx, rx) = mpsc::channel();
        if !self.send_control(Control::Join { role, token, reply: tx }) {
            return Err((ErrorCode::Shutdown, "session ended".into()));
        }
        rx.recv().unwrap_or_else(|_| Err((ErrorCode::Shutdown, "session ended".into())))
    }

    /// Stores the input unless an equal or newer sequence number was already seen.
    fn offer_input(&self, f: &InputFrame) -> Result<bool, String> {
        if f.burr_id as usize >= self.burr_count {
            return Err(format!("burr {} not in catalog of {}", f.burr_id, self.burr_count));
        }
        let [w, x, y, z] = f.orientation;
        let input =
            DrillInput::new(Vec3::from(f.tip_position), Quaternion::new(w, x, y, z), f.pedal, f.burr_id as usize)
                .map_err(|e| e.to_string())?;
        if !f.camera.iter().all(|v| v.is_finite()) {
            return Err("camera pose is not finite".into());
        }
        let mut mb = self.mailbox.lock().expect("mailbox lock");
        if f.seq <= mb.last_seq {
            return Ok(false);
        }
        mb.last_seq = f.seq;
        mb.latest = Some(AppliedInput { seq: f.seq, input, camera: Pose::from_array(f.camera) });
        Ok(true)
    }
}

/// A client living in this process, reading frames straight off its queue.
pub struct LocalClient {
    pub id: u64,
    rx: Receiver<Outgoing>,
    evicted: Arc<AtomicBool>,
}

impl LocalClient {
    /// Next encoded frame; `None` once the server dropped this client.
    pub fn recv_timeout(&self, timeout: Duration) -> Option<Result<WireMessage, WireError>> {
        match self.rx.recv_timeout(timeout) {
            Ok(Outgoing::Frame(b)) => Some(decode(&b)),
            Ok(Outgoing::Close(code, text)) => Some(Ok(WireMessage::error(code, text))),
            Err(_) => None,
        }
    }

    pub fn was_evicted(&self) -> bool {
        self.evicted.load(Ordering::SeqCst)
    }
}

pub struct GatewayHandle {
    addr: SocketAddr,
    shared: Arc<Shared>,
    sim: Option<JoinHandle<Result<ServerOutcome, GatewayError>>>,
    accept: Option<JoinHandle<()>>,
}

impl GatewayHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn stop(&self) {
        self.shared.stop.store(true, Ordering::SeqCst);
    }

    pub fn is_finished(&self) -> bool {
        self.sim.as_ref().is_none_or(|h| h.is_finished())
    }

    /// Registers an in-process client through the same path as network joins.
    pub fn attach_local(&self, role: Role, token: &str) -> Result<LocalClient, GatewayError> {
        let reg = self.shared.join(role, token.to_string()).map_err(|(code, text)| GatewayError::Rejected {
            code: code as u16,
            name: code.name().into(),
            text,
        })?;
        Ok(LocalClient { id: reg.id, rx: reg.rx, evicted: reg.evicted })
    }

    /// Waits for the simulation to end (stop flag or tick limit).
    pub fn wait(mut self) -> Result<ServerOutcome, GatewayError> {
        let out = self.sim.take().expect("joined once").join().unwrap_or(Err(GatewayError::Stopped));
        self.shared.stop.store(true, Ordering::SeqCst);
        if let Some(a) = self.accept.take() {
            let _ = a.join();
        }
        out
    }
}

impl Drop for GatewayHandle {
    fn drop(&mut self) {
        self.shared.stop.store(true, Ordering::SeqCst);
    }
}

pub fn bind(endpoint: &str) -> Result<TcpListener, GatewayError> {
    TcpListener::bind(endpoint).map_err(|source| GatewayError::Bind { addr: endpoint.to_string(), source })
}

/// Starts the simulation and accept threads.
pub fn serve(listener: TcpListener, session: Session, cfg: GatewayConfig) -> Result<GatewayHandle, GatewayError> {
    let addr = listener.local_addr()?;
    listener.set_nonblocking(true)?;
    let (ctl_tx, ctl_rx) = mpsc::channel();
    let shared = Arc::new(Shared {
        control: Mutex::new(ctl_tx),
        mailbox: Mutex::new(Mailbox::default()),
        stop: AtomicBool::new(false),
        burr_count: session.config().burrs.len(),
        cfg,
    });
    let sim_shared = shared.clone();
    let sim = thread::Builder::new()
        .name("gateway-sim".into())
        .spawn(move || SimLoop::new(session, sim_shared, ctl_rx).run())?;
    let acc_shared = shared.clone();
    let accept =
        thread::Builder::new().name("gateway-accept".into()).spawn(move || accept_loop(listener, acc_shared))?;
    Ok(GatewayHandle { addr, shared, sim: Some(sim), accept: Some(accept) })
}

struct ClientSlot {
    id: u64,
    tx: SyncSender<Outgoing>,
    evicted: Arc<AtomicBool>,
}

struct SimLoop {
    session: Session,
    shared: Arc<Shared>,
    control: Receiver<Control>,
    clients: Vec<ClientSlot>,
    controller: Option<u64>,
    next_id: u64,
    current: AppliedInput,
    frame_seq: u64,
    pending_removals: Vec<WireRemoval>,
    pending_warnings: BTreeSet<WireWarning>,
    last_report: Option<(Vec3, f64, u32)>,
    slow_consumers: u64,
    started: Option<Instant>,
    intervals: Vec<f64>,
}

static NEXT_SESSION_TOKEN: AtomicU64 = AtomicU64::new(1);

impl SimLoop {
    fn new(session: Session, shared: Arc<Shared>, control: Receiver<Control>) -> Self {
        // Park the idle drill above the volume, clear of material.
        let g = *session.volume().geometry();
        let extent = Vec3::new(
            g.spacing[0] * g.dims[0] as f64,
            g.spacing[1] * g.dims[1] as f64,
            g.spacing[2] * g.dims[2] as f64,
        );
        let park = Vec3::from(g.origin) + extent.component_mul(&Vec3::new(0.5, 0.5, 1.0)) + Vec3::new(0.0, 0.0, 50.0);
        let burr = session.burr_id();
        let start_now = !shared.cfg.start_on_join;
        Self {
            current: AppliedInput { seq: 0, input: DrillInput::at(park, 0.0, burr), camera: session.camera() },
            session,
            shared,
            control,
            clients: Vec::new(),
            controller: None,
            next_id: 1,
            frame_seq: 0,
            pending_removals: Vec::new(),
            pending_warnings: BTreeSet::new(),
            last_report: None,
            slow_consumers: 0,
            started: start_now.then(Instant::now),
            intervals: Vec::new(),
        }
    }

    fn hello(&self, role: Role, token: &str) -> WireMessage {
        let vol = self.session.volume();
        let g = vol.geometry();
        let sensitive = &self.session.model().sensitive;
        WireMessage::Hello(Hello {
            protocol_version: wire::PROTOCOL_VERSION as u16,
            digest: vol.digest(),
            dims: g.dims.map(|d| d as u32),
            spacing: g.spacing,
            origin: g.origin,
            segments: vol
                .segments()
                .iter()
                .map(|(label, s)| WireSegment {
                    label,
                    name: s.name.clone(),
                    color: s.color,
                    sensitive: sensitive.contains(&label),
                })
                .collect(),
            tick_rate_hz: self.session.config().tick_rate_hz,
            state_rate_hz: self.shared.cfg.state_rate_hz,
            role,
            session_token: token.to_string(),
        })
    }

    fn burr_list(&self) -> WireMessage {
        WireMessage::BurrList {
            burrs: self
                .session
                .config()
                .burrs
                .iter()
                .map(|b| WireBurr { radius_mm: b.radius_mm, tip: b.tip.code(), brr: b.brr })
                .collect(),
            active: self.session.burr_id() as u32,
        }
    }

    fn handle_control(&mut self, c: Control) {
        match c {
            Control::Join { role, token, reply } => {
                let _ = reply.send(self.register(role, &token));
            }
            Control::Leave { id } => self.remove_client(id),
        }
    }

    fn register(&mut self, role: Role, token: &str) -> Result<Registration, (ErrorCode, String)> {
        if let Some(required) = &self.shared.cfg.token {
            if token != required {
                return Err((ErrorCode::Unauthorized, "session token mismatch".into()));
            }
        }
        if role == Role::Controller && self.controller.is_some() {
            return Err((ErrorCode::Busy, "session already has a controller".into()));
        }
        let session_token = match &self.shared.cfg.token {
            Some(t) => t.clone(),
            None => format!("{:016x}", NEXT_SESSION_TOKEN.fetch_add(1, Ordering::Relaxed)),
        };
        // Handshake frames go in first so later state frames apply on top of them.
        let mut handshake = vec![self.hello(role, &session_token)];
        handshake.extend(snapshot_frames(self.session.volume(), self.shared.cfg.snapshot_chunk_bytes));
        handshake.push(self.burr_list());
        let (tx, rx) = mpsc::sync_channel(self.shared.cfg.queue_capacity.max(1) + handshake.len());
        for m in &handshake {
            tx.try_send(Outgoing::Frame(Arc::new(encode(m)))).expect("queue sized for handshake");
        }
        let id = self.next_id;
        self.next_id += 1;
        let evicted = Arc::new(AtomicBool::new(false));
        self.clients.push(ClientSlot { id, tx, evicted: evicted.clone() });
        if role == Role::Controller {
            self.controller = Some(id);
            if self.started.is_none() {
                self.started = Some(Instant::now());
            }
        }
        Ok(Registration { id, role, rx, evicted })
    }

    fn remove_client(&mut self, id: u64) {
        self.clients.retain(|c| c.id != id);
        if self.controller == Some(id) {
            self.controller = None;
            self.current.input.set_pedal(0.0);
            let mut mb = self.shared.mailbox.lock().expect("mailbox lock");
            mb.latest = None;
        }
    }

    fn broadcast(&mut self, frame: Arc<Vec<u8>>) {
        let mut dropped = Vec::new();
        for c in &self.clients {
            match c.tx.try_send(Outgoing::Frame(frame.clone())) {
                Ok(()) => {}
                Err(TrySendError::Full(_)) => {
                    c.evicted.store(true, Ordering::SeqCst);
                    dropped.push(c.id);
                }
                Err(TrySendError::Disconnected(_)) => dropped.push(c.id),
            }
        }
        for id in dropped {
            if self.clients.iter().any(|c| c.id == id && c.evicted.load(Ordering::SeqCst)) {
                self.slow_consumers += 1;
            }
            self.remove_client(id);
        }
    }

    fn emit_state(&mut self, with_digest: bool) {
        let Some((f_haptic, pitch, burr_id)) = self.last_report else { return };
        self.frame_seq += 1;
        let frame = StateFrame {
            seq: self.frame_seq,
            tick: self.session.tick(),
            t: self.session.t(),
            drill: Pose::new(self.current.input.tip_position, self.current.input.tip_orientation).to_array(),
            f_haptic: f_haptic.into(),
            pitch,
            applied_input_seq: self.current.seq,
            burr_id,
            warnings: std::mem::take(&mut self.pending_warnings).into_iter().collect(),
            removals: std::mem::take(&mut self.pending_removals),
            digest: with_digest.then(|| self.session.digest()),
        };
        self.broadcast(Arc::new(encode(&WireMessage::StateFrame(frame))));
    }

    fn frame_index(&self, tick: u64) -> u64 {
        (tick as f64 * self.shared.cfg.state_rate_hz / self.session.config().tick_rate_hz).floor() as u64
    }

    fn run(mut self) -> Result<ServerOutcome, GatewayError> {
        let result = self.run_inner();
        // Last frame flushes pending removals and always carries the digest.
        if self.last_report.is_some() {
            self.emit_state(true);
        }
        for c in &self.clients {
            let _ = c.tx.try_send(Outgoing::Close(ErrorCode::Shutdown, "session ended".into()));
        }
        self.clients.clear();
        self.shared.stop.store(true, Ordering::SeqCst);
        result?;
        let report = ServerReport {
            ticks: self.session.tick(),
            frames: self.frame_seq,
            removals: self.session.removed_total(),
            final_digest: self.session.digest(),
            slow_consumers: self.slow_consumers,
            cadence: Cadence::from_intervals(&self.intervals),
        };
        Ok(ServerOutcome { report, session: self.session })
    }

    fn run_inner(&mut self) -> Result<(), GatewayError> {
        let dt = self.session.dt();
        let mut last_tick_at: Option<Instant> = None;
        let mut ticks_run = 0u64;
        loop {
            if self.shared.stop.load(Ordering::SeqCst) {
                return Ok(());
            }
            if self.shared.cfg.stop_after_ticks.is_some_and(|n| ticks_run >= n) {
                return Ok(());
            }
            while let Ok(c) = self.control.try_recv() {
                self.handle_control(c);
            }
            let Some(start) = self.started else {
                match self.control.recv_timeout(Duration::from_millis(5)) {
                    Ok(c) => self.handle_control(c),
                    Err(RecvTimeoutError::Timeout) => {}
                    Err(RecvTimeoutError::Disconnected) => return Ok(()),
                }
                continue;
            };
            if let Pacing::Realtime { time_scale } = self.shared.cfg.pacing {
                let due = start + Duration::from_secs_f64((ticks_run + 1) as f64 * dt * time_scale);
                let now = Instant::now();
                if due > now {
                    thread::sleep(due - now);
                }
            }
            let now = Instant::now();
            if let Some(prev) = last_tick_at {
                self.intervals.push((now - prev).as_secs_f64());
            }
            last_tick_at = Some(now);

            if let Some(latest) = self.shared.mailbox.lock().expect("mailbox lock").latest.take() {
                self.current = latest;
            }
            self.session.set_camera(self.current.camera);
            let report = self.session.step(&self.current.input)?;
            ticks_run += 1;
            self.pending_removals.extend(report.outcome.removed.iter().map(|&(idx, label)| WireRemoval {
                i: idx.i,
                j: idx.j,
                k: idx.k,
                label,
            }));
            self.pending_warnings
                .extend(report.outcome.warnings.iter().map(|w| WireWarning { label: w.label, kind: w.kind.code() }));
            self.last_report = Some((report.outcome.f_haptic, report.outcome.pitch, self.session.burr_id() as u32));

            let tick = self.session.tick();
            let is_last = self.shared.cfg.stop_after_ticks.is_some_and(|n| ticks_run >= n);
            if self.frame_index(tick) > self.frame_index(tick - 1) && !is_last {
                let every = self.shared.cfg.digest_every_frames;
                let with_digest = every > 0 && (self.frame_seq + 1).is_multiple_of(every);
                self.emit_state(with_digest);
            }
        }
    }
}

fn accept_loop(listener: TcpListener, shared: Arc<Shared>) {
    while !shared.stop.load(Ordering::SeqCst) {
        match listener.accept() {
            Ok((stream, _)) => {
                let s = shared.clone();
                let _ = thread::Builder::new().name("gateway-conn".into()).spawn(move || {
                    let _ = handle_connection(stream, s);
                });
            }
            Err(e) if e.kind() == io::ErrorKind::WouldBlock => thread::sleep(Duration::from_millis(5)),
            Err(_) => thread::sleep(Duration::from_millis(20)),
        }
    }
}

const POLL: Duration = Duration::from_millis(2);

enum Transport {
    Raw { stream: TcpStream, buf: FrameBuffer },
    Ws(Box<WebSocket<TcpStream>>),
}

impl Transport {
    fn send(&mut self, frame: &[u8]) -> io::Result<()> {
        match self {
            Transport::Raw { stream, .. } => stream.write_all(frame),
            Transport::Ws(ws) => ws.send(Message::Binary(frame.to_vec())).map_err(ws_io),
        }
    }

    fn send_msg(&mut self, m: &WireMessage) -> io::Result<()> {
        self.send(&encode(m))
    }

    /// Waits at most one poll interval for a frame.
    fn poll(&mut self) -> io::Result<Option<Result<WireMessage, WireError>>> {
        match self {
            Transport::Raw { stream, buf } => {
                if let Some(f) = buf.next_frame() {
                    return Ok(Some(f));
                }
                if buf.is_poisoned() {
                    return Err(io::Error::new(io::ErrorKind::InvalidData, "unframeable input"));
                }
                let mut tmp = [0u8; 8192];
                match stream.read(&mut tmp) {
                    Ok(0) => Err(io::ErrorKind::UnexpectedEof.into()),
                    Ok(n) => {
                        buf.extend(&tmp[..n]);
                        Ok(buf.next_frame())
                    }
                    Err(e) if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) => Ok(None),
                    Err(e) => Err(e),
                }
            }
            Transport::Ws(ws) => match ws.read() {
                Ok(Message::Binary(b)) => Ok(Some(decode(&b))),
                Ok(Message::Close(_)) => Err(io::ErrorKind::UnexpectedEof.into()),
                Ok(_) => Ok(None),
                Err(tungstenite::Error::Io(e))
                    if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) =>
                {
                    Ok(None)
                }
                Err(e) => Err(ws_io(e)),
            },
        }
    }
}

fn ws_io(e: tungstenite::Error) -> io::Error {
    match e {
        tungstenite::Error::Io(e) => e,
        other => io::Error::other(other.to_string()),
    }
}

fn handle_connection(stream: TcpStream, shared: Arc<Shared>) -> io::Result<()> {
    stream.set_nodelay(true)?;
    stream.set_write_timeout(Some(shared.cfg.write_timeout))?;
    stream.set_read_timeout(Some(shared.cfg.handshake_timeout))?;
    let mut head = [0u8; 4];
    let deadline = Instant::now() + shared.cfg.handshake_timeout;
    loop {
        let n = stream.peek(&mut head)?;
        if n == 0 {
            return Ok(());
        }
        if n >= 4 || Instant::now() > deadline {
            break;
        }
        thread::sleep(POLL);
    }
    let mut transport = if &head == b"GET " {
        let request = peek_http_head(&stream, deadline)?;
        if !request.to_ascii_lowercase().contains("upgrade: websocket") {
            return serve_static(stream, &request, shared.cfg.ui_dir.as_deref());
        }
        let ws = tungstenite::accept(stream.try_clone()?).map_err(|e| io::Error::other(e.to_string()))?;
        Transport::Ws(Box::new(ws))
    } else {
        Transport::Raw { stream: stream.try_clone()?, buf: FrameBuffer::new() }
    };
    stream.set_read_timeout(Some(POLL))?;
    run_client(&mut transport, &shared)
}

fn run_client(t: &mut Transport, shared: &Shared) -> io::Result<()> {
    let deadline = Instant::now() + shared.cfg.handshake_timeout;
    let (role, token) = loop {
        if Instant::now() > deadline {
            let _ = t.send_msg(&WireMessage::error(ErrorCode::BadFrame, "expected Join"));
            return Ok(());
        }
        match t.poll()? {
            Some(Ok(WireMessage::Join { role, token })) => break (role, token),
            Some(Ok(_)) => {
                t.send_msg(&WireMessage::error(ErrorCode::BadFrame, "expected Join"))?;
                return Ok(());
            }
            Some(Err(e)) => {
                t.send_msg(&error_for(&e))?;
                return Ok(());
            }
            None => {}
        }
    };
    let reg = match shared.join(role, token) {
        Ok(r) => r,
        Err((code, text)) => {
            t.send_msg(&WireMessage::error(code, text))?;
            return Ok(());
        }
    };
    let result = pump_client(t, shared, &reg);
    shared.send_control(Control::Leave { id: reg.id });
    result
}

fn error_for(e: &WireError) -> WireMessage {
    let code = match e {
        WireError::Unsupported { .. } => ErrorCode::Unsupported,
        _ => ErrorCode::BadFrame,
    };
    WireMessage::error(code, e.to_string())
}

fn pump_client(t: &mut Transport, shared: &Shared, reg: &Registration) -> io::Result<()> {
    loop {
        loop {
            match reg.rx.try_recv() {
                Ok(Outgoing::Frame(b)) => t.send(&b)?,
                Ok(Outgoing::Close(code, text)) => {
                    let _ = t.send_msg(&WireMessage::error(code, text));
                    return Ok(());
                }
                Err(mpsc::TryRecvError::Empty) => break,
                Err(mpsc::TryRecvError::Disconnected) => {
                    if reg.evicted.load(Ordering::SeqCst) {
                        let _ = t.send_msg(&WireMessage::error(ErrorCode::SlowConsumer, "outgoing queue overflowed"));
                    }
                    return Ok(());
                }
            }
        }
        match t.poll()? {
            Some(Ok(WireMessage::InputFrame(f))) if reg.role == Role::Controller => match shared.offer_input(&f) {
                Ok(true) => t.send_msg(&WireMessage::Ack { seq: f.seq })?,
                Ok(false) => {}
                Err(reason) => t.send_msg(&WireMessage::error(ErrorCode::BadInput, reason))?,
            },
            Some(Ok(_)) => {}
            Some(Err(e)) => t.send_msg(&error_for(&e))?,
            None => {}
        }
    }
}

fn peek_http_head(stream: &TcpStream, deadline: Instant) -> io::Result<String> {
    let mut buf = vec![0u8; 8192];
    loop {
        let n = stream.peek(&mut buf)?;
        let text = String::from_utf8_lossy(&buf[..n]).into_owned();
        if text.contains("\r\n\r\n") || n == buf.len() || Instant::now() > deadline {
            return Ok(text);
        }
        thread::sleep(POLL);
    }
}

fn content_type(path: &Path) -> &'static str {
    match path.extension().and_then(|e| e.to_str()).unwrap_or("") {
        "html" | "htm" => "text/html; charset=utf-8",
        "js" | "mjs" => "text/javascript; charset=utf-8",
        "css" => "text/css; charset=utf-8",
        "json" => "application/json",
        "wasm" => "application/wasm",
        "png" => "image/png",
        "svg" => "image/svg+xml",
        _ => "application/octet-stream",
    }
}

/// Maps a request path onto a file under `root`, refusing anything that
/// would leave it.
pub fn resolve_static(root: &Path, url_path: &str) -> Option<PathBuf> {
    let path = url_path.split(['?', '#']).next().unwrap_or("/");
    let rel = Path::new(path.trim_start_matches('/'));
    if rel.components().any(|c| !matches!(c, Component::Normal(_))) {
        return None;
    }
    let mut full = root.join(rel);
    if full.is_dir() {
        full.push("index.html");
    }
    full.is_file().then_some(full)
}

fn serve_static(mut stream: TcpStream, request: &str, root: Option<&Path>) -> io::Result<()> {
    // Consume the request head we peeked.
    let head_len = request.find("\r\n\r\n").map(|p| p + 4).unwrap_or(request.len());
    let mut sink = vec![0u8; head_len];
    stream.read_exact(&mut sink)?;
    let target = request.split_whitespace().nth(1).unwrap_or("/");
    let found = root.and_then(|r| resolve_static(r, target));
    let (status, ctype, body) = match found.and_then(|p| std::fs::read(&p).ok().map(|b| (p, b))) {
        Some((p, body)) => ("200 OK", content_type(&p), body),
        None => ("404 Not Found", "text/plain; charset=utf-8", b"not found\n".to_vec()),
    };
    write!(
        stream,
        "HTTP/1.1 {status}\r\nContent-Type: {ctype}\r\nContent-Length: {}\r\nConnection: close\r\n\r\n",
        body.len()
    )?;
    stream.write_all(&body)?;
    stream.flush()
}
