//! Fixed-step simulation loop and scripted trajectories.
//!
//! Time is derived from an integer tick counter: after `n` steps the session
//! time is exactly `n / tick_rate_hz`. Each step emits, in this order, an
//! optional `BurrChange`, the `VoxelRemoved` events of that tick, a
//! `ForceSample` on decimated ticks, and one `Kinematics` record.

use std::collections::BTreeSet;
use std::hash::Hasher;
use std::path::Path;
use std::sync::{Arc, Mutex};

use nalgebra::{Quaternion, UnitQuaternion};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use twox_hash::XxHash64;

use crate::config::{ConfigError, SessionConfig};
use crate::drill::{Burr, DamageField, DrillError, DrillInput, DrillModel, TickOutcome};
use crate::event::{EventRecord, Pose};
use crate::volume::LabeledVolume;
use crate::Vec3;

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("volume has no occupied voxels")]
    EmptyVolume,
    #[error("session is closed")]
    Closed,
    #[error("burr {id} not in catalog of {len}")]
    UnknownBurr { id: usize, len: usize },
    #[error("trajectory: {0}")]
    Trajectory(String),
    #[error("event consumer failed: {0}")]
    Sink(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Drill(#[from] DrillError),
}

/// Consumer of session events, e.g. a recorder queue.
pub trait EventSink: Send {
    fn emit(&mut self, event: EventRecord) -> Result<(), SessionError>;
}

/// In-memory sink whose clones share one event list.
#[derive(Debug, Clone, Default)]
pub struct MemorySink(Arc<Mutex<Vec<EventRecord>>>);

impl MemorySink {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn events(&self) -> Vec<EventRecord> {
        self.0.lock().expect("sink lock").clone()
    }
}

impl EventSink for MemorySink {
    fn emit(&mut self, event: EventRecord) -> Result<(), SessionError> {
        self.0.lock().expect("sink lock").push(event);
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    pub tick: u64,
    pub t: f64,
    pub outcome: TickOutcome,
    pub drill_pose: Pose,
    pub camera_pose: Pose,
    pub burr_changed: bool,
}

pub struct Session {
    vol: LabeledVolume,
    initial_digest: u64,
    cfg: SessionConfig,
    model: DrillModel,
    damage: DamageField,
    tick: u64,
    burr_id: usize,
    camera: Pose,
    closed: bool,
    removed_total: u64,
    force_interval: u64,
    sink: Option<Box<dyn EventSink>>,
}

impl std::fmt::Debug for Session {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Session")
            .field("tick", &self.tick)
            .field("burr_id", &self.burr_id)
            .field("closed", &self.closed)
            .field("removed_total", &self.removed_total)
            .finish_non_exhaustive()
    }
}

impl Session {
    pub fn new(vol: LabeledVolume, cfg: SessionConfig) -> Result<Self, SessionError> {
        cfg.validate()?;
        if vol.occupied_count() == 0 {
            return Err(SessionError::EmptyVolume);
        }
        let model = cfg.drill_model(vol.segments())?;
        Ok(Self {
            initial_digest: vol.digest(),
            damage: DamageField::for_volume(&vol),
            burr_id: cfg.initial_burr(),
            force_interval: cfg.force_interval_ticks(),
            vol,
            cfg,
            model,
            tick: 0,
            camera: Pose::default(),
            closed: false,
            removed_total: 0,
            sink: None,
        })
    }

    pub fn attach_sink(&mut self, sink: Box<dyn EventSink>) {
        self.sink = Some(sink);
    }

    /// Detaches the sink, e.g. to drop a queue sender and let its consumer finish.
    pub fn take_sink(&mut self) -> Option<Box<dyn EventSink>> {
        self.sink.take()
    }

    pub fn volume(&self) -> &LabeledVolume {
        &self.vol
    }

    pub fn config(&self) -> &SessionConfig {
        &self.cfg
    }

    pub fn model(&self) -> &DrillModel {
        &self.model
    }

    pub fn tick(&self) -> u64 {
        self.tick
    }

    pub fn t(&self) -> f64 {
        self.tick as f64 / self.cfg.tick_rate_hz
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.cfg.tick_rate_hz
    }

    pub fn burr_id(&self) -> usize {
        self.burr_id
    }

    pub fn burr(&self) -> &Burr {
        &self.cfg.burrs[self.burr_id]
    }

    pub fn removed_total(&self) -> u64 {
        self.removed_total
    }

    pub fn initial_digest(&self) -> u64 {
        self.initial_digest
    }

    pub fn digest(&self) -> u64 {
        self.vol.digest()
    }

    pub fn is_closed(&self) -> bool {
        self.closed
    }

    pub fn camera(&self) -> Pose {
        self.camera
    }

    /// Camera pose is recorded with every tick but never affects cutting.
    pub fn set_camera(&mut self, pose: Pose) {
        self.camera = pose;
    }

    /// Hash over grid, damage, tick and active burr.
    pub fn state_digest(&self) -> u64 {
        let mut h = XxHash64::with_seed(0);
        h.write_u64(self.vol.digest());
        h.write_u64(self.tick);
        h.write_u64(self.burr_id as u64);
        for d in self.damage.values() {
            h.write_u64(d.to_bits());
        }
        h.finish()
    }

    fn emit(&mut self, ev: EventRecord) -> Result<(), SessionError> {
        match self.sink.as_mut() {
            Some(s) => s.emit(ev),
            None => Ok(()),
        }
    }

    pub fn step(&mut self, input: &DrillInput) -> Result<StepReport, SessionError> {
        if self.closed {
            return Err(SessionError::Closed);
        }
        if input.burr_id >= self.cfg.burrs.len() {
            return Err(SessionError::UnknownBurr { id: input.burr_id, len: self.cfg.burrs.len() });
        }
        let tick = self.tick + 1;
        let t = tick as f64 / self.cfg.tick_rate_hz;
        let dt = self.dt();

        let burr_changed = input.burr_id != self.burr_id;
        self.burr_id = input.burr_id;
        let burr = self.cfg.burrs[self.burr_id];
        let outcome = self.model.apply_drill_tick(&mut self.vol, &mut self.damage, input, &burr, t, dt)?;
        self.tick = tick;
        self.removed_total += outcome.removed.len() as u64;

        let drill_pose = Pose::new(input.tip_position, input.tip_orientation);
        let camera_pose = self.camera;
        if self.sink.is_some() {
            if burr_changed {
                self.emit(EventRecord::BurrChange {
                    t,
                    burr_id: self.burr_id as u32,
                    radius_mm: burr.radius_mm,
                    tip: burr.tip,
                })?;
            }
            for &(index, label) in &outcome.removed {
                let color = self.vol.segments().get(label).map(|s| s.rgb8()).unwrap_or([0, 0, 0]);
                self.emit(EventRecord::VoxelRemoved { t, index, label, color })?;
            }
            if tick.is_multiple_of(self.force_interval) {
                self.emit(EventRecord::ForceSample { t, force: outcome.f_haptic })?;
            }
            self.emit(EventRecord::Kinematics { t, drill: drill_pose, camera: camera_pose })?;
        }
        Ok(StepReport { tick, t, outcome, drill_pose, camera_pose, burr_changed })
    }

    /// Logs a rendered depth/label frame at the current session time.
    pub fn record_depth_frame(&mut self, frame_id: u64, reference: &str) -> Result<(), SessionError> {
        if self.closed {
            return Err(SessionError::Closed);
        }
        let t = self.t();
        self.emit(EventRecord::DepthFrame { t, frame_id, reference: reference.to_string() })
    }

    /// Steps through the trajectory from the current time, sampling it at
    /// each tick's end time relative to the start of the run.
    pub fn run_script(&mut self, traj: &Trajectory) -> Result<SessionSummary, SessionError> {
        self.run_script_with(traj, |_, _| Ok(()))
    }

    /// [`Session::run_script`] with a hook called after every tick.
    pub fn run_script_with<F>(&mut self, traj: &Trajectory, mut after_step: F) -> Result<SessionSummary, SessionError>
    where
        F: FnMut(&mut Session, &StepReport) -> Result<(), SessionError>,
    {
        traj.validate()?;
        for kf in &traj.keyframes {
            if let Some(b) = kf.burr {
                if b >= self.cfg.burrs.len() {
                    return Err(SessionError::UnknownBurr { id: b, len: self.cfg.burrs.len() });
                }
            }
        }
        let rate = self.cfg.tick_rate_hz;
        let steps = (traj.duration() * rate + 1e-9).floor() as u64;
        let mut summary = SessionSummary { start_tick: self.tick, ..SessionSummary::default() };
        for n in 1..=steps {
            let s = traj.sample(n as f64 / rate);
            let input =
                DrillInput::new(s.position, *s.orientation.quaternion(), s.pedal, s.burr.unwrap_or(self.burr_id))?;
            let report = self.step(&input)?;
            summary.absorb(&report);
            after_step(self, &report)?;
        }
        summary.end_tick = self.tick;
        summary.t_end = self.t();
        summary.final_digest = self.digest();
        Ok(summary)
    }

    /// Marks the session closed and detaches the sink.
    pub fn close(&mut self) -> Option<Box<dyn EventSink>> {
        self.closed = true;
        self.sink.take()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SessionSummary {
    pub start_tick: u64,
    pub end_tick: u64,
    pub steps: u64,
    pub t_end: f64,
    pub removals: u64,
    pub max_force: f64,
    pub burr_changes: u64,
    pub warnings: u64,
    pub warned_labels: BTreeSet<u16>,
    pub final_digest: u64,
}

impl SessionSummary {
    pub fn absorb(&mut self, r: &StepReport) {
        self.steps += 1;
        self.removals += r.outcome.removed.len() as u64;
        self.max_force = self.max_force.max(r.outcome.f_haptic.norm());
        self.burr_changes += r.burr_changed as u64;
        self.warnings += r.outcome.warnings.len() as u64;
        self.warned_labels.extend(r.outcome.warnings.iter().map(|w| w.label));
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Interpolation {
    Hold,
    #[default]
    Linear,
}

fn identity_quat() -> [f64; 4] {
    [1.0, 0.0, 0.0, 0.0]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Keyframe {
    pub t: f64,
    pub pos: [f64; 3],
    /// `[w, x, y, z]`
    #[serde(default = "identity_quat")]
    pub quat: [f64; 4],
    #[serde(default)]
    pub pedal: f64,
    /// Burr catalog index; omitted keeps the current burr.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub burr: Option<usize>,
}

impl Keyframe {
    pub fn new(t: f64, pos: [f64; 3], pedal: f64) -> Self {
        Self { t, pos, quat: identity_quat(), pedal, burr: None }
    }

    pub fn with_burr(mut self, burr: usize) -> Self {
        self.burr = Some(burr);
        self
    }

    fn orientation(&self) -> UnitQuaternion<f64> {
        let [w, x, y, z] = self.quat;
        UnitQuaternion::new_normalize(Quaternion::new(w, x, y, z))
    }
}

/// Scripted drill motion, stored as TOML or JSON:
///
/// ```toml
/// interpolation = "linear"   # or "hold"
/// [[keyframes]]
/// t = 0.0
/// pos = [10.0, 10.0, 40.0]
/// quat = [1.0, 0.0, 0.0, 0.0]
/// pedal = 0.0
/// burr = 6
/// [[keyframes]]
/// t = 2.0
/// pos = [10.0, 10.0, 20.0]
/// pedal = 1.0
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Trajectory {
    #[serde(default)]
    pub interpolation: Interpolation,
    pub keyframes: Vec<Keyframe>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectorySample {
    pub position: Vec3,
    pub orientation: UnitQuaternion<f64>,
    pub pedal: f64,
    pub burr: Option<usize>,
}

impl Trajectory {
    pub fn new(interpolation: Interpolation, keyframes: Vec<Keyframe>) -> Result<Self, SessionError> {
        let t = Self { interpolation, keyframes };
        t.validate()?;
        Ok(t)
    }

    /// JSON when the document starts with `{`, TOML otherwise.
    pub fn parse(text: &str) -> Result<Self, SessionError> {
        let traj: Trajectory = if text.trim_start().starts_with('{') {
            serde_json::from_str(text).map_err(|e| SessionError::Trajectory(e.to_string()))?
        } else {
            toml::from_str(text).map_err(|e| SessionError::Trajectory(e.to_string()))?
        };
        traj.validate()?;
        Ok(traj)
    }

    pub fn load(path: &Path) -> Result<Self, SessionError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| SessionError::Trajectory(format!("reading {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<(), SessionError> {
        let bad = |m: String| Err(SessionError::Trajectory(m));
        let Some(first) = self.keyframes.first() else {
            return bad("no keyframes".into());
        };
        if first.t != 0.0 {
            return bad(format!("first keyframe at t={}, expected 0", first.t));
        }
        for (n, kf) in self.keyframes.iter().enumerate() {
            if !kf.t.is_finite() || !kf.pos.iter().all(|v| v.is_finite()) {
                return bad(format!("keyframe {n}: non-finite time or position"));
            }
            if n > 0 && kf.t <= self.keyframes[n - 1].t {
                return bad(format!("keyframe {n}: time {} not after {}", kf.t, self.keyframes[n - 1].t));
            }
            let qn = kf.quat.iter().map(|v| v * v).sum::<f64>().sqrt();
            if !((qn - 1.0).abs() <= 1e-6) {
                return bad(format!("keyframe {n}: quaternion norm {qn}"));
            }
            if !(0.0..=1.0).contains(&kf.pedal) {
                return bad(format!("keyframe {n}: pedal {} outside [0,1]", kf.pedal));
            }
        }
        Ok(())
    }

    pub fn duration(&self) -> f64 {
        self.keyframes.last().map(|k| k.t).unwrap_or(0.0)
    }

    /// Position and pedal interpolate per the mode, orientation slerps in
    /// linear mode, burr always holds. Past the end the last keyframe holds.
    pub fn sample(&self, t: f64) -> TrajectorySample {
        let kfs = &self.keyframes;
        let i = kfs.partition_point(|k| k.t <= t).saturating_sub(1);
        let a = &kfs[i];
        let hold = TrajectorySample {
            position: Vec3::from(a.pos),
            orientation: a.orientation(),
            pedal: a.pedal,
            burr: kfs[..=i].iter().rev().find_map(|k| k.burr),
        };
        if self.interpolation == Interpolation::Hold || i + 1 >= kfs.len() {
            return hold;
        }
        let b = &kfs[i + 1];
        let s = (t - a.t) / (b.t - a.t);
        let pa = Vec3::from(a.pos);
        let pb = Vec3::from(b.pos);
        let qa = a.orientation();
        TrajectorySample {
            position: pa + (pb - pa) * s,
            orientation: qa.try_slerp(&b.orientation(), s, 1e-9).unwrap_or(qa),
            pedal: a.pedal + (b.pedal - a.pedal) * s,
            ..hold
        }
    }
}
