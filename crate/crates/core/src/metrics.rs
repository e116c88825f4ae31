//! Motion, force and removal metrics computed from recordings.
//!
//! Units: positions in mm and time in s, so speed is mm/s, acceleration
//! mm/s² and jerk mm/s³. Derivatives use second-order finite differences:
//! central stencils in the interior and one-sided stencils of the same order
//! at the ends.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::event::EventRecord;
use crate::recorder::{RecorderError, Recording, RecordingMeta};
use crate::volume::{GridGeometry, VoxelIndex};
use crate::Vec3;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("samples are not uniformly spaced: {0}")]
    NonUniform(String),
    #[error(transparent)]
    Recorder(#[from] RecorderError),
    #[error("writing output: {0}")]
    Io(#[from] std::io::Error),
}

/// Positions sampled every `dt` seconds starting at `t0`.
#[derive(Debug, Clone, PartialEq)]
pub struct KinematicsSeries {
    pub t0: f64,
    pub dt: f64,
    pub positions: Vec<Vec3>,
}

impl KinematicsSeries {
    pub fn uniform(t0: f64, dt: f64, positions: Vec<Vec3>) -> Result<Self, MetricsError> {
        if !(dt.is_finite() && dt > 0.0) {
            return Err(MetricsError::NonUniform(format!("dt = {dt}")));
        }
        Ok(Self { t0, dt, positions })
    }

    /// Accepts `(t, p)` samples that are already uniform within 1e-9 s.
    pub fn from_samples(samples: &[(f64, Vec3)]) -> Result<Self, MetricsError> {
        if samples.len() < 2 {
            return Err(MetricsError::InsufficientData(format!("{} kinematic samples", samples.len())));
        }
        let t0 = samples[0].0;
        let dt = (samples[samples.len() - 1].0 - t0) / (samples.len() - 1) as f64;
        for (k, (t, _)) in samples.iter().enumerate() {
            if (t - (t0 + k as f64 * dt)).abs() > 1e-9 {
                return Err(MetricsError::NonUniform(format!("sample {k} at t={t}")));
            }
        }
        Self::uniform(t0, dt, samples.iter().map(|s| s.1).collect())
    }

    /// Linear interpolation onto the grid `t = (tick0 + k) / rate`, where
    /// `tick0` is the first sample's tick. Grid points coinciding with
    /// recorded ticks reproduce the recorded positions exactly.
    pub fn resample(samples: &[(f64, Vec3)], rate_hz: f64) -> Result<Self, MetricsError> {
        if samples.is_empty() {
            return Err(MetricsError::InsufficientData("no kinematic samples".into()));
        }
        let tick0 = (samples[0].0 * rate_hz).round();
        let tick1 = (samples[samples.len() - 1].0 * rate_hz).round();
        let n = (tick1 - tick0) as usize + 1;
        let mut positions = Vec::with_capacity(n);
        let mut j = 0;
        for k in 0..n {
            let t = (tick0 + k as f64) / rate_hz;
            while j + 1 < samples.len() && samples[j + 1].0 <= t {
                j += 1;
            }
            let (ta, pa) = samples[j];
            let p = if ta == t || j + 1 == samples.len() {
                pa
            } else {
                let (tb, pb) = samples[j + 1];
                pa + (pb - pa) * ((t - ta) / (tb - ta))
            };
            positions.push(p);
        }
        Self::uniform(tick0 / rate_hz, 1.0 / rate_hz, positions)
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.dt * self.positions.len().saturating_sub(1) as f64
    }
}

/// First derivative; `None` below 2 samples.
pub fn velocity(x: &[Vec3], dt: f64) -> Option<Vec<Vec3>> {
    let n = x.len();
    match n {
        0 | 1 => None,
        2 => {
            let v = (x[1] - x[0]) / dt;
            Some(vec![v, v])
        }
        _ => Some(
            (0..n)
                .map(|i| {
                    if i == 0 {
                        (-3.0 * x[0] + 4.0 * x[1] - x[2]) / (2.0 * dt)
                    } else if i == n - 1 {
                        (3.0 * x[n - 1] - 4.0 * x[n - 2] + x[n - 3]) / (2.0 * dt)
                    } else {
                        (x[i + 1] - x[i - 1]) / (2.0 * dt)
                    }
                })
                .collect(),
        ),
    }
}

/// Second derivative; `None` below 3 samples.
pub fn acceleration(x: &[Vec3], dt: f64) -> Option<Vec<Vec3>> {
    let n = x.len();
    let dt2 = dt * dt;
    let central = |i: usize| (x[i + 1] - 2.0 * x[i] + x[i - 1]) / dt2;
    match n {
        0..=2 => None,
        3 => {
            let a = central(1);
            Some(vec![a; 3])
        }
        _ => Some(
            (0..n)
                .map(|i| {
                    if i == 0 {
                        (2.0 * x[0] - 5.0 * x[1] + 4.0 * x[2] - x[3]) / dt2
                    } else if i == n - 1 {
                        (2.0 * x[n - 1] - 5.0 * x[n - 2] + 4.0 * x[n - 3] - x[n - 4]) / dt2
                    } else {
                        central(i)
                    }
                })
                .collect(),
        ),
    }
}

/// Third derivative; `None` below 4 samples. With exactly 4 samples every
/// point gets the plain third difference.
pub fn jerk(x: &[Vec3], dt: f64) -> Option<Vec<Vec3>> {
    let n = x.len();
    let dt3 = dt * dt * dt;
    match n {
        0..=3 => None,
        4 => {
            let j = (x[3] - 3.0 * x[2] + 3.0 * x[1] - x[0]) / dt3;
            Some(vec![j; 4])
        }
        _ => Some(
            (0..n)
                .map(|i| {
                    let h = 2.0 * dt3;
                    if i == 0 {
                        (-5.0 * x[0] + 18.0 * x[1] - 24.0 * x[2] + 14.0 * x[3] - 3.0 * x[4]) / h
                    } else if i == 1 {
                        (-3.0 * x[0] + 10.0 * x[1] - 12.0 * x[2] + 6.0 * x[3] - x[4]) / h
                    } else if i == n - 1 {
                        (5.0 * x[n - 1] - 18.0 * x[n - 2] + 24.0 * x[n - 3] - 14.0 * x[n - 4] + 3.0 * x[n - 5]) / h
                    } else if i == n - 2 {
                        (3.0 * x[n - 1] - 10.0 * x[n - 2] + 12.0 * x[n - 3] - 6.0 * x[n - 4] + x[n - 5]) / h
                    } else {
                        (x[i + 2] - 2.0 * x[i + 1] + 2.0 * x[i - 1] - x[i - 2]) / h
                    }
                })
                .collect(),
        ),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Stat {
    pub mean: f64,
    pub max: f64,
}

impl Stat {
    pub fn of_norms(v: &[Vec3]) -> Option<Self> {
        if v.is_empty() {
            return None;
        }
        let mut sum = 0.0;
        let mut max = 0.0f64;
        for x in v {
            let m = x.norm();
            sum += m;
            max = max.max(m);
        }
        Some(Self { mean: sum / v.len() as f64, max })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KinematicsMetrics {
    pub samples: usize,
    pub dt_s: f64,
    pub path_length_mm: f64,
    pub speed: Option<Stat>,
    pub acceleration: Option<Stat>,
    pub jerk: Option<Stat>,
}

pub fn kinematics_metrics(series: &KinematicsSeries) -> KinematicsMetrics {
    let x = &series.positions;
    let path = x.windows(2).map(|w| (w[1] - w[0]).norm()).sum();
    KinematicsMetrics {
        samples: x.len(),
        dt_s: series.dt,
        path_length_mm: path,
        speed: velocity(x, series.dt).and_then(|v| Stat::of_norms(&v)),
        acceleration: acceleration(x, series.dt).and_then(|v| Stat::of_norms(&v)),
        jerk: jerk(x, series.dt).and_then(|v| Stat::of_norms(&v)),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForceMetrics {
    pub samples: usize,
    pub mean_n: f64,
    pub max_n: f64,
}

/// `None` when there are no samples.
pub fn force_metrics(forces: &[Vec3]) -> Option<ForceMetrics> {
    Stat::of_norms(forces).map(|s| ForceMetrics { samples: forces.len(), mean_n: s.mean, max_n: s.max })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelRemoval {
    pub label: u16,
    pub name: String,
    pub count: u64,
    pub volume_mm3: f64,
    pub sensitive: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RemovalMetrics {
    pub total: u64,
    pub total_volume_mm3: f64,
    pub per_label: Vec<LabelRemoval>,
    /// Removals whose label is missing from the segment table.
    pub unknown: u64,
    pub unintended_removal: bool,
    pub sensitive_counts: BTreeMap<String, u64>,
    pub warnings: Vec<String>,
}

/// A removed voxel center in world mm with its recorded color.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RemovedPoint {
    pub position: Vec3,
    pub color: [u8; 3],
}

pub fn removal_metrics(
    removals: &[(VoxelIndex, u16, [u8; 3])],
    meta: &RecordingMeta,
) -> (RemovalMetrics, Vec<RemovedPoint>) {
    let voxel_volume = meta.voxel_volume();
    let mut counts: BTreeMap<u16, u64> = BTreeMap::new();
    for &(_, label, _) in removals {
        *counts.entry(label).or_default() += 1;
    }
    let mut per_label = Vec::new();
    let mut unknown = 0;
    let mut warnings = Vec::new();
    let mut sensitive_counts = BTreeMap::new();
    for (&label, &count) in &counts {
        let sensitive = meta.sensitive.contains(&label);
        match meta.segments.get(label) {
            Some(seg) => per_label.push(LabelRemoval {
                label,
                name: seg.name.clone(),
                count,
                volume_mm3: count as f64 * voxel_volume,
                sensitive,
            }),
            None => {
                unknown += count;
                warnings.push(format!("{count} removed voxels carry label {label}, absent from the segment table"));
            }
        }
        if sensitive {
            sensitive_counts.insert(label.to_string(), count);
        }
    }
    let geometry = GridGeometry { dims: meta.dims, spacing: meta.spacing, origin: meta.origin };
    let points =
        removals.iter().map(|&(idx, _, color)| RemovedPoint { position: geometry.center_of(idx), color }).collect();
    let total = removals.len() as u64;
    let metrics = RemovalMetrics {
        total,
        total_volume_mm3: total as f64 * voxel_volume,
        per_label,
        unknown,
        unintended_removal: !sensitive_counts.is_empty(),
        sensitive_counts,
        warnings,
    };
    (metrics, points)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsReport {
    pub participant: String,
    pub events: u64,
    pub duration_s: f64,
    pub tick_rate_hz: f64,
    pub kinematics: Option<KinematicsMetrics>,
    pub force: Option<ForceMetrics>,
    pub removal: RemovalMetrics,
}

/// Report plus the removed-voxel point cloud.
#[derive(Debug, Clone, PartialEq)]
pub struct Analysis {
    pub report: MetricsReport,
    pub removed_points: Vec<RemovedPoint>,
}

pub fn analyze_events<I>(meta: &RecordingMeta, events: I) -> Result<Analysis, MetricsError>
where
    I: IntoIterator<Item = Result<EventRecord, RecorderError>>,
{
    let mut kin = Vec::new();
    let mut forces = Vec::new();
    let mut removals = Vec::new();
    let mut first_t = None;
    let mut last_t = 0.0;
    let mut n = 0u64;
    for ev in events {
        let ev = ev?;
        n += 1;
        first_t.get_or_insert(ev.t());
        last_t = ev.t();
        match ev {
            EventRecord::Kinematics { t, drill, .. } => kin.push((t, drill.position)),
            EventRecord::ForceSample { force, .. } => forces.push(force),
            EventRecord::VoxelRemoved { index, label, color, .. } => removals.push((index, label, color)),
            _ => {}
        }
    }
    let Some(first_t) = first_t else {
        return Err(MetricsError::InsufficientData("recording has no events".into()));
    };
    let kinematics = if kin.is_empty() {
        None
    } else {
        Some(kinematics_metrics(&KinematicsSeries::resample(&kin, meta.tick_rate_hz)?))
    };
    let (removal, removed_points) = removal_metrics(&removals, meta);
    let report = MetricsReport {
        participant: meta.participant.clone(),
        events: n,
        duration_s: last_t - first_t,
        tick_rate_hz: meta.tick_rate_hz,
        kinematics,
        force: force_metrics(&forces),
        removal,
    };
    Ok(Analysis { report, removed_points })
}

pub fn analyze(rec: &Recording) -> Result<Analysis, MetricsError> {
    analyze_events(rec.meta(), rec.events())
}

pub fn report(rec: &Recording) -> Result<MetricsReport, MetricsError> {
    Ok(analyze(rec)?.report)
}

impl MetricsReport {
    /// Pretty JSON with a trailing newline. Parsing and re-rendering gives
    /// the same bytes.
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn to_table(&self) -> String {
        let mut rows: Vec<(String, String, &str)> = vec![
            ("participant".into(), self.participant.clone(), ""),
            ("events".into(), self.events.to_string(), ""),
            ("duration".into(), format!("{:.3}", self.duration_s), "s"),
        ];
        let stat =
            |rows: &mut Vec<(String, String, &'static str)>, name: &str, s: Option<Stat>, unit: &'static str| match s {
                Some(s) => {
                    rows.push((format!("{name} mean"), format!("{:.4}", s.mean), unit));
                    rows.push((format!("{name} max"), format!("{:.4}", s.max), unit));
                }
                None => rows.push((name.to_string(), "n/a".into(), "")),
            };
        match &self.kinematics {
            Some(k) => {
                rows.push(("path length".into(), format!("{:.3}", k.path_length_mm), "mm"));
                stat(&mut rows, "speed", k.speed, "mm/s");
                stat(&mut rows, "acceleration", k.acceleration, "mm/s^2");
                stat(&mut rows, "jerk", k.jerk, "mm/s^3");
            }
            None => rows.push(("kinematics".into(), "n/a".into(), "")),
        }
        match &self.force {
            Some(f) => {
                rows.push(("force mean".into(), format!("{:.4}", f.mean_n), "N"));
                rows.push(("force max".into(), format!("{:.4}", f.max_n), "N"));
            }
            None => rows.push(("force".into(), "n/a".into(), "")),
        }
        rows.push(("removed voxels".into(), self.removal.total.to_string(), ""));
        rows.push(("removed volume".into(), format!("{:.3}", self.removal.total_volume_mm3), "mm^3"));
        for l in &self.removal.per_label {
            let flag = if l.sensitive { " (sensitive)" } else { "" };
            rows.push((format!("  {} [{}]{flag}", l.name, l.label), l.count.to_string(), "voxels"));
        }
        if self.removal.unknown > 0 {
            rows.push(("  unknown labels".into(), self.removal.unknown.to_string(), "voxels"));
        }
        rows.push(("unintended removal".into(), if self.removal.unintended_removal { "yes" } else { "no" }.into(), ""));

        let w0 = rows.iter().map(|r| r.0.chars().count()).max().unwrap_or(0);
        let w1 = rows.iter().map(|r| r.1.chars().count()).max().unwrap_or(0);
        let mut out = String::new();
        for (k, v, u) in rows {
            let line = format!("{k:<w0$}  {v:>w1$}  {u}");
            let _ = writeln!(out, "{}", line.trim_end());
        }
        out
    }
}

/// ASCII PLY point cloud with per-vertex colors.
pub fn write_ply<W: Write>(points: &[RemovedPoint], mut out: W) -> std::io::Result<()> {
    writeln!(out, "ply")?;
    writeln!(out, "format ascii 1.0")?;
    writeln!(out, "comment removed voxel centers, mm")?;
    writeln!(out, "element vertex {}", points.len())?;
    for p in ["x", "y", "z"] {
        writeln!(out, "property double {p}")?;
    }
    for c in ["red", "green", "blue"] {
        writeln!(out, "property uchar {c}")?;
    }
    writeln!(out, "end_header")?;
    for p in points {
        let v = p.position;
        writeln!(out, "{} {} {} {} {} {}", v.x, v.y, v.z, p.color[0], p.color[1], p.color[2])?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::SessionConfig;
    use crate::session::Session;
    use crate::volume::{LabeledVolume, Segment, SegmentTable};

    fn line(n: usize, dt: f64, v: Vec3) -> Vec<Vec3> {
        (0..n).map(|k| Vec3::new(1.0, -2.0, 0.5) + v * (k as f64 * dt)).collect()
    }

    #[test]
    fn constant_position_is_all_zero() {
        let s = KinematicsSeries::uniform(0.0, 0.001, vec![Vec3::new(1.0, 2.0, 3.0); 50]).unwrap();
        let m = kinematics_metrics(&s);
        assert_eq!(m.path_length_mm, 0.0);
        for st in [m.speed, m.acceleration, m.jerk] {
            assert_eq!(st, Some(Stat { mean: 0.0, max: 0.0 }));
        }
    }

    #[test]
    fn constant_velocity_line() {
        // Dyadic step keeps every sample exactly representable.
        let dt = 1.0 / 1024.0;
        let v = Vec3::new(3.0, 4.0, 0.0);
        let s = KinematicsSeries::uniform(0.0, dt, line(1024, dt, v)).unwrap();
        let m = kinematics_metrics(&s);
        let speed = m.speed.unwrap();
        assert!((speed.mean - 5.0).abs() < 1e-9 && (speed.max - 5.0).abs() < 1e-9);
        assert!(m.acceleration.unwrap().max < 1e-9);
        assert!(m.jerk.unwrap().max < 1e-9);
        assert!((m.path_length_mm - 5.0 * 1023.0 * dt).abs() < 1e-9);
    }

    #[test]
    fn too_few_samples() {
        let x = vec![Vec3::zeros(); 3];
        assert!(jerk(&x, 0.1).is_none());
        assert!(acceleration(&x, 0.1).is_some());
        assert!(velocity(&x[..1], 0.1).is_none());
        let cubic: Vec<Vec3> = (0..4).map(|k| Vec3::new((k as f64).powi(3), 0.0, 0.0)).collect();
        let j = jerk(&cubic, 1.0).unwrap();
        assert!(j.iter().all(|v| (v.x - 6.0).abs() < 1e-12));
    }

    #[test]
    fn stencils_exact_on_polynomials() {
        // Second-order stencils are exact for quadratics (accel, velocity) and
        // for quartics' third derivative only approximately; check cubics.
        let dt = 0.1;
        let cubic: Vec<Vec3> = (0..9)
            .map(|k| {
                let t = k as f64 * dt;
                Vec3::new(t * t * t, 2.0 * t * t, -t)
            })
            .collect();
        let j = jerk(&cubic, dt).unwrap();
        for v in &j {
            assert!((v - Vec3::new(6.0, 0.0, 0.0)).norm() < 1e-8, "{v:?}");
        }
        let a = acceleration(&cubic, dt).unwrap();
        for (k, v) in a.iter().enumerate() {
            let t = k as f64 * dt;
            assert!((v - Vec3::new(6.0 * t, 4.0, 0.0)).norm() < 1e-9, "{k} {v:?}");
        }
        let vel = velocity(&cubic[..3].iter().map(|p| Vec3::new(p.y, 0.0, 0.0)).collect::<Vec<_>>(), dt).unwrap();
        for (k, v) in vel.iter().enumerate() {
            assert!((v.x - 4.0 * k as f64 * dt).abs() < 1e-12);
        }
    }

    #[test]
    fn convergence_order_at_least_1_8() {
        let (a, w) = (2.0, 7.0);
        let err = |dt: f64| {
            let n = (1.0 / dt).round() as usize + 1;
            let x: Vec<Vec3> = (0..n).map(|k| Vec3::new(a * (w * k as f64 * dt).sin(), 0.0, 0.0)).collect();
            let j = jerk(&x, dt).unwrap();
            let acc = acceleration(&x, dt).unwrap();
            let mut ej = 0.0f64;
            let mut ea = 0.0f64;
            for k in 0..n {
                let t = k as f64 * dt;
                ej = ej.max((j[k].x + a * w.powi(3) * (w * t).cos()).abs());
                ea = ea.max((acc[k].x + a * w * w * (w * t).sin()).abs());
            }
            (ea, ej)
        };
        let (ea1, ej1) = err(0.01);
        let (ea2, ej2) = err(0.005);
        assert!((ea1 / ea2).log2() >= 1.8, "accel order {}", (ea1 / ea2).log2());
        assert!((ej1 / ej2).log2() >= 1.8, "jerk order {}", (ej1 / ej2).log2());
    }

    #[test]
    fn resample_fills_gaps_linearly() {
        let samples = vec![(0.0, Vec3::zeros()), (0.003, Vec3::new(3.0, 0.0, 0.0)), (0.004, Vec3::new(3.0, 1.0, 0.0))];
        let s = KinematicsSeries::resample(&samples, 1000.0).unwrap();
        assert_eq!(s.len(), 5);
        assert!((s.positions[1].x - 1.0).abs() < 1e-12);
        assert!((s.positions[2].x - 2.0).abs() < 1e-12);
        assert_eq!(s.positions[3], Vec3::new(3.0, 0.0, 0.0));
        assert!(KinematicsSeries::from_samples(&[(0.0, Vec3::zeros()), (0.1, Vec3::zeros()), (0.3, Vec3::zeros())])
            .is_err());
    }

    #[test]
    fn force_metrics_cases() {
        assert_eq!(force_metrics(&[]), None);
        let f = force_metrics(&[Vec3::new(3.0, 4.0, 0.0)]).unwrap();
        assert_eq!((f.mean_n, f.max_n), (5.0, 5.0));
    }

    fn meta_with(sensitive: &[u16]) -> RecordingMeta {
        let g = GridGeometry::new([4; 3], [0.5, 0.5, 2.0], [0.0; 3]).unwrap();
        let segs = SegmentTable::new()
            .with(1, Segment::new("Bone", [0.8, 0.8, 0.7]))
            .unwrap()
            .with(2, Segment::new("Facial Nerve", [1.0, 1.0, 0.0]))
            .unwrap();
        let vol = LabeledVolume::new(g, vec![1; 64], segs).unwrap();
        let cfg = SessionConfig { sensitive_labels: sensitive.iter().copied().collect(), ..SessionConfig::default() };
        let s = Session::new(vol, cfg).unwrap();
        RecordingMeta::for_session(&s, "p", "2026-01-01T00:00:00Z")
    }

    #[test]
    fn removal_accounting() {
        let meta = meta_with(&[2]);
        let bone = (VoxelIndex::new(0, 0, 0), 1, [204, 204, 179]);
        let (m, pts) = removal_metrics(&[bone, bone], &meta);
        assert!(!m.unintended_removal);
        assert_eq!(m.per_label[0].count, 2);
        assert_eq!(m.per_label[0].volume_mm3, 1.0);
        assert_eq!(pts.len(), 2);
        let nerve = (VoxelIndex::new(1, 0, 0), 2, [255, 255, 0]);
        let stray = (VoxelIndex::new(2, 0, 0), 9, [0, 0, 0]);
        let (m, _) = removal_metrics(&[bone, nerve, stray], &meta);
        assert!(m.unintended_removal);
        assert_eq!(m.sensitive_counts.get("2"), Some(&1));
        assert_eq!(m.unknown, 1);
        assert_eq!(m.warnings.len(), 1);
        let per_label_sum: u64 = m.per_label.iter().map(|l| l.count).sum::<u64>() + m.unknown;
        assert_eq!(per_label_sum, m.total);
    }

    #[test]
    fn empty_event_stream_is_insufficient() {
        let meta = meta_with(&[]);
        assert!(matches!(analyze_events(&meta, std::iter::empty()), Err(MetricsError::InsufficientData(_))));
    }

    #[test]
    fn json_round_trip_is_byte_identical() {
        let meta = meta_with(&[2]);
        let events: Vec<_> = (0..40)
            .map(|k| {
                let t = k as f64 / 1000.0;
                Ok(EventRecord::Kinematics {
                    t,
                    drill: crate::event::Pose::new(Vec3::new(0.1 * t.sin(), t, 1.0 / 3.0), Default::default()),
                    camera: Default::default(),
                })
            })
            .collect();
        let report = analyze_events(&meta, events).unwrap().report;
        let json = report.to_json();
        assert_eq!(MetricsReport::from_json(&json).unwrap().to_json(), json);
        assert!(report.to_table().contains("jerk max"));
    }

    #[test]
    fn ply_header_and_rows() {
        let pts = [RemovedPoint { position: Vec3::new(0.25, 0.5, 1.0), color: [1, 2, 3] }];
        let mut buf = Vec::new();
        write_ply(&pts, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.contains("element vertex 1\n"));
        assert!(text.ends_with("end_header\n0.25 0.5 1 1 2 3\n"));
    }
}
