//! Burr models, voxel ablation and the force/audio feedback laws.
//!
//! Cutting is a per-voxel damage accumulator: every voxel whose center lies
//! inside the burr sphere gains `pedal * brr * dt` damage per tick and is
//! removed once its damage reaches the hardness of its segment (1.0 unless
//! configured otherwise). There is no radial falloff, so with a large enough
//! removal rate a single tick removes exactly the enumerated sphere.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::PI;

use nalgebra::{Quaternion, UnitQuaternion};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::volume::{LabeledVolume, SegmentTable, VoxelIndex};
use crate::Vec3;

/// Burr radii stocked by the default catalog, mm.
pub const CATALOG_RADII_MM: [f64; 4] = [1.0, 2.0, 4.0, 6.0];
/// Default removal rate per mm of radius, damage units per second.
pub const CUTTING_BRR_PER_MM: f64 = 2.0;
pub const DIAMOND_BRR_PER_MM: f64 = 0.8;

#[derive(Debug, Error, PartialEq)]
pub enum DrillError {
    #[error("damage field dims {damage:?} do not match volume dims {volume:?}")]
    DimensionMismatch { volume: [usize; 3], damage: [usize; 3] },
    #[error("time step must be finite and > 0, got {0}")]
    BadTimeStep(f64),
    #[error("invalid burr: {0}")]
    InvalidBurr(String),
    #[error("burr id {id} is not in the catalog ({len} entries)")]
    UnknownBurr { id: usize, len: usize },
    #[error("orientation quaternion norm {0} is not 1 within 1e-6")]
    NonUnitQuaternion(f64),
    #[error("non-finite tip position")]
    NonFinitePosition,
    #[error("invalid {field}: {reason}")]
    Config { field: &'static str, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TipType {
    Cutting,
    Diamond,
}

impl TipType {
    pub fn code(self) -> u8 {
        match self {
            TipType::Cutting => 0,
            TipType::Diamond => 1,
        }
    }

    pub fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(TipType::Cutting),
            1 => Some(TipType::Diamond),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Burr {
    pub radius_mm: f64,
    pub tip: TipType,
    /// Damage units per second at full pedal.
    pub brr: f64,
}

impl Burr {
    pub fn new(radius_mm: f64, tip: TipType, brr: f64) -> Result<Self, DrillError> {
        let b = Self { radius_mm, tip, brr };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<(), DrillError> {
        if !(self.radius_mm.is_finite() && self.radius_mm > 0.0) {
            return Err(DrillError::InvalidBurr(format!("radius {} mm must be > 0", self.radius_mm)));
        }
        if !(self.brr.is_finite() && self.brr > 0.0) {
            return Err(DrillError::InvalidBurr(format!("removal rate {} must be > 0", self.brr)));
        }
        Ok(())
    }
}

/// Four radii × {cutting, diamond}, ordered by radius then tip.
pub fn default_burr_catalog() -> Vec<Burr> {
    CATALOG_RADII_MM
        .iter()
        .flat_map(|&r| {
            [
                Burr { radius_mm: r, tip: TipType::Cutting, brr: CUTTING_BRR_PER_MM * r },
                Burr { radius_mm: r, tip: TipType::Diamond, brr: DIAMOND_BRR_PER_MM * r },
            ]
        })
        .collect()
}

/// Index of the largest cutting burr, the usual opening burr.
pub fn largest_cutting(catalog: &[Burr]) -> Option<usize> {
    catalog
        .iter()
        .enumerate()
        .filter(|(_, b)| b.tip == TipType::Cutting)
        .max_by(|a, b| a.1.radius_mm.total_cmp(&b.1.radius_mm))
        .map(|(i, _)| i)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DrillInput {
    pub tip_position: Vec3,
    pub tip_orientation: UnitQuaternion<f64>,
    pedal: f64,
    pub burr_id: usize,
}

impl DrillInput {
    /// Validates the orientation norm (1e-6) and clamps the pedal into [0,1].
    pub fn new(
        tip_position: Vec3,
        orientation: Quaternion<f64>,
        pedal: f64,
        burr_id: usize,
    ) -> Result<Self, DrillError> {
        if !tip_position.iter().all(|v| v.is_finite()) {
            return Err(DrillError::NonFinitePosition);
        }
        let norm = orientation.norm();
        if !((norm - 1.0).abs() <= 1e-6) {
            return Err(DrillError::NonUnitQuaternion(norm));
        }
        Ok(Self {
            tip_position,
            tip_orientation: UnitQuaternion::new_normalize(orientation),
            pedal: clamp_pedal(pedal),
            burr_id,
        })
    }

    pub fn at(tip_position: Vec3, pedal: f64, burr_id: usize) -> Self {
        Self { tip_position, tip_orientation: UnitQuaternion::identity(), pedal: clamp_pedal(pedal), burr_id }
    }

    pub fn pedal(&self) -> f64 {
        self.pedal
    }

    pub fn set_pedal(&mut self, pedal: f64) {
        self.pedal = clamp_pedal(pedal);
    }
}

fn clamp_pedal(p: f64) -> f64 {
    if p.is_nan() {
        0.0
    } else {
        p.clamp(0.0, 1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AudioConfig {
    /// Pitch at zero force.
    pub p_max: f64,
    /// Force at which the device saturates, N.
    pub f_max: f64,
}

impl Default for AudioConfig {
    fn default() -> Self {
        Self { p_max: 2.0, f_max: 5.0 }
    }
}

impl AudioConfig {
    pub fn validate(&self) -> Result<(), DrillError> {
        positive("audio.p_max", self.p_max)?;
        positive("audio.f_max", self.f_max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HapticConfig {
    /// Vibration amplitude, N.
    pub a_drill: f64,
    /// Vibration angular frequency, rad/s.
    pub frequency: f64,
    /// Contact stiffness, N per unit overlap fraction.
    pub k_c: f64,
}

impl Default for HapticConfig {
    fn default() -> Self {
        Self { a_drill: 0.1, frequency: 2.0 * PI * 100.0, k_c: 10.0 }
    }
}

impl HapticConfig {
    pub fn validate(&self) -> Result<(), DrillError> {
        if !(self.a_drill.is_finite() && self.a_drill >= 0.0) {
            return Err(DrillError::Config { field: "haptic.a_drill", reason: "must be finite and >= 0".into() });
        }
        positive("haptic.frequency", self.frequency)?;
        positive("haptic.k_c", self.k_c)
    }
}

fn positive(field: &'static str, v: f64) -> Result<(), DrillError> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(DrillError::Config { field, reason: format!("must be finite and > 0, got {v}") })
    }
}

/// Accumulated cutting damage per voxel, same layout as the label array.
#[derive(Debug, Clone, PartialEq)]
pub struct DamageField {
    dims: [usize; 3],
    values: Vec<f64>,
}

impl DamageField {
    pub fn new(dims: [usize; 3]) -> Self {
        Self { dims, values: vec![0.0; dims[0] * dims[1] * dims[2]] }
    }

    pub fn for_volume(vol: &LabeledVolume) -> Self {
        Self::new(vol.dims())
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    fn linear(&self, idx: VoxelIndex) -> usize {
        idx.i as usize + self.dims[0] * (idx.j as usize + self.dims[1] * idx.k as usize)
    }

    pub fn get(&self, idx: VoxelIndex) -> f64 {
        self.values[self.linear(idx)]
    }
}

/// Voxels currently inside the burr sphere.
#[derive(Debug, Clone, PartialEq)]
pub struct ContactState {
    pub overlapped: Vec<VoxelIndex>,
    pub centroid: Option<Vec3>,
    pub overlap_fraction: f64,
}

impl ContactState {
    pub fn none() -> Self {
        Self { overlapped: Vec::new(), centroid: None, overlap_fraction: 0.0 }
    }

    pub fn from_overlap(vol: &LabeledVolume, overlapped: Vec<VoxelIndex>, radius_mm: f64) -> Self {
        if overlapped.is_empty() {
            return Self::none();
        }
        let sum = overlapped.iter().fold(Vec3::zeros(), |acc, &idx| acc + vol.voxel_to_world(idx));
        let centroid = sum / overlapped.len() as f64;
        let ideal = 4.0 / 3.0 * PI * radius_mm.powi(3) / vol.geometry().voxel_volume();
        let overlap_fraction = (overlapped.len() as f64 / ideal).min(1.0);
        Self { overlapped, centroid: Some(centroid), overlap_fraction }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WarningKind {
    Contact,
    Removal,
}

impl WarningKind {
    pub fn code(self) -> u8 {
        match self {
            WarningKind::Contact => 0,
            WarningKind::Removal => 1,
        }
    }

    pub fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(WarningKind::Contact),
            1 => Some(WarningKind::Removal),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Warning {
    pub label: u16,
    pub name: String,
    pub kind: WarningKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TickOutcome {
    pub removed: Vec<(VoxelIndex, u16)>,
    pub contact_count: usize,
    pub f_collision: Vec3,
    pub f_haptic: Vec3,
    pub pitch: f64,
    pub warnings: Vec<Warning>,
}

/// Non-air voxels whose centers lie within `radius_mm` of `tip`, ordered by
/// distance to the tip and then lexicographically.
pub fn intersect_voxels(vol: &LabeledVolume, tip: Vec3, radius_mm: f64) -> Vec<VoxelIndex> {
    let g = vol.geometry();
    let c = g.world_to_voxel(tip);
    let r2 = radius_mm * radius_mm;
    let mut range = [(0usize, 0usize); 3];
    for a in 0..3 {
        let extent = radius_mm / g.spacing[a];
        // One voxel of slack on each side absorbs rounding in world_to_voxel.
        let lo = (c[a] - extent).floor() - 1.0;
        let hi = (c[a] + extent).ceil() + 1.0;
        let max = (g.dims[a] - 1) as f64;
        if hi < 0.0 || lo > max || !lo.is_finite() || !hi.is_finite() {
            return Vec::new();
        }
        range[a] = (lo.max(0.0) as usize, hi.min(max) as usize);
    }
    let mut hits: Vec<(f64, VoxelIndex)> = Vec::new();
    for k in range[2].0..=range[2].1 {
        for j in range[1].0..=range[1].1 {
            for i in range[0].0..=range[0].1 {
                let idx = VoxelIndex::new(i as u32, j as u32, k as u32);
                if vol.get(idx) == 0 {
                    continue;
                }
                let d = g.center_of(idx) - tip;
                let d2 = d.norm_squared();
                if d2 <= r2 {
                    hits.push((d2.sqrt(), idx));
                }
            }
        }
    }
    hits.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(&b.1)));
    hits.into_iter().map(|(_, idx)| idx).collect()
}

/// Penalty force pushing the tip away from the overlapped material's centroid,
/// proportional to the overlap fraction and clamped at `f_max`.
pub fn collision_force(contact: &ContactState, tip: Vec3, cfg: &HapticConfig, f_max: f64) -> Vec3 {
    let Some(centroid) = contact.centroid else {
        return Vec3::zeros();
    };
    if contact.overlapped.is_empty() {
        return Vec3::zeros();
    }
    let away = tip - centroid;
    let norm = away.norm();
    let dir = if norm > 0.0 { away / norm } else { Vec3::z() };
    dir * (cfg.k_c * contact.overlap_fraction).min(f_max)
}

/// `p = p_max - |F| / F_max`
pub fn audio_pitch(f_collision: &Vec3, cfg: &AudioConfig) -> f64 {
    cfg.p_max - f_collision.norm() / cfg.f_max
}

/// `F_haptic = F_collision + (1,1,1) * A_drill * sin(f t)` while the drill runs.
pub fn haptic_force(f_collision: &Vec3, drill_on: bool, t: f64, cfg: &HapticConfig) -> Vec3 {
    if !drill_on {
        return *f_collision;
    }
    let v = cfg.a_drill * (cfg.frequency * t).sin();
    f_collision + Vec3::new(v, v, v)
}

/// One warning per distinct sensitive label touched; removal outranks contact.
pub fn check_sensitive<I>(touched: I, segments: &SegmentTable, sensitive: &BTreeSet<u16>) -> Vec<Warning>
where
    I: IntoIterator<Item = (u16, WarningKind)>,
{
    let mut worst: BTreeMap<u16, WarningKind> = BTreeMap::new();
    for (label, kind) in touched {
        if !sensitive.contains(&label) {
            continue;
        }
        let e = worst.entry(label).or_insert(kind);
        if kind.cmp(e) == Ordering::Greater {
            *e = kind;
        }
    }
    worst
        .into_iter()
        .map(|(label, kind)| Warning {
            label,
            name: segments.get(label).map(|s| s.name.clone()).unwrap_or_else(|| format!("label {label}")),
            kind,
        })
        .collect()
}

/// Everything the cutting/feedback laws need besides the burr itself.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DrillModel {
    pub audio: AudioConfig,
    pub haptic: HapticConfig,
    /// Damage needed to remove a voxel of each label; unlisted labels use 1.0.
    pub hardness: BTreeMap<u16, f64>,
    pub sensitive: BTreeSet<u16>,
}

impl DrillModel {
    pub fn hardness_of(&self, label: u16) -> f64 {
        self.hardness.get(&label).copied().unwrap_or(1.0)
    }

    /// Advances cutting by one tick at simulation time `t` (which drives the
    /// vibration phase). Contact and forces are evaluated on the pre-removal grid.
    pub fn apply_drill_tick(
        &self,
        vol: &mut LabeledVolume,
        damage: &mut DamageField,
        input: &DrillInput,
        burr: &Burr,
        t: f64,
        dt: f64,
    ) -> Result<TickOutcome, DrillError> {
        if damage.dims != vol.dims() {
            return Err(DrillError::DimensionMismatch { volume: vol.dims(), damage: damage.dims });
        }
        if !(dt.is_finite() && dt > 0.0) {
            return Err(DrillError::BadTimeStep(dt));
        }
        let tip = input.tip_position;
        let overlapped = intersect_voxels(vol, tip, burr.radius_mm);
        let contacted: Vec<u16> = overlapped.iter().map(|&idx| vol.get(idx)).collect();
        let contact = ContactState::from_overlap(vol, overlapped, burr.radius_mm);

        let f_collision = collision_force(&contact, tip, &self.haptic, self.audio.f_max);
        let pitch = audio_pitch(&f_collision, &self.audio);
        let drill_on = input.pedal() > 0.0;
        let f_haptic = haptic_force(&f_collision, drill_on, t, &self.haptic);

        let mut removed = Vec::new();
        if drill_on {
            let increment = input.pedal() * burr.brr * dt;
            for (&idx, &label) in contact.overlapped.iter().zip(&contacted) {
                let n = damage.linear(idx);
                damage.values[n] += increment;
                if damage.values[n] >= self.hardness_of(label) {
                    damage.values[n] = 0.0;
                    vol.clear(idx);
                    removed.push((idx, label));
                }
            }
        }

        let touched = contacted
            .iter()
            .map(|&l| (l, WarningKind::Contact))
            .chain(removed.iter().map(|&(_, l)| (l, WarningKind::Removal)));
        let warnings = check_sensitive(touched, vol.segments(), &self.sensitive);

        Ok(TickOutcome { removed, contact_count: contact.overlapped.len(), f_collision, f_haptic, pitch, warnings })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::{GridGeometry, Segment};
    use proptest::prelude::*;

    fn table() -> SegmentTable {
        let mut t = SegmentTable::new()
            .with(1, Segment::new("Bone", [0.8, 0.8, 0.7]))
            .unwrap()
            .with(2, Segment::new("Facial Nerve", [1.0, 1.0, 0.0]))
            .unwrap();
        t.set_sensitive(&[2].into());
        t
    }

    fn solid(n: usize, label: u16) -> LabeledVolume {
        let g = GridGeometry::new([n; 3], [1.0; 3], [0.0; 3]).unwrap();
        LabeledVolume::new(g, vec![label; n * n * n], table()).unwrap()
    }

    /// Full-grid enumeration, independent of the bounding-box walk.
    fn brute_force(vol: &LabeledVolume, tip: Vec3, r: f64) -> Vec<VoxelIndex> {
        let g = vol.geometry();
        let mut v: Vec<(f64, VoxelIndex)> = (0..g.voxel_count())
            .map(|n| g.unlinear(n))
            .filter(|&idx| vol.get(idx) != 0)
            .filter_map(|idx| {
                let d = (g.center_of(idx) - tip).norm_squared();
                (d <= r * r).then(|| (d.sqrt(), idx))
            })
            .collect();
        v.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        v.into_iter().map(|x| x.1).collect()
    }

    #[test]
    fn catalog_shape() {
        let c = default_burr_catalog();
        assert_eq!(c.len(), 8);
        assert!(c.iter().any(|b| b.radius_mm == 6.0 && b.tip == TipType::Cutting));
        for r in CATALOG_RADII_MM {
            let cut = c.iter().find(|b| b.radius_mm == r && b.tip == TipType::Cutting).unwrap();
            let dia = c.iter().find(|b| b.radius_mm == r && b.tip == TipType::Diamond).unwrap();
            assert!(cut.brr > dia.brr);
        }
        assert_eq!(c[largest_cutting(&c).unwrap()].radius_mm, 6.0);
    }

    #[test]
    fn far_tip_has_no_contact() {
        let vol = solid(8, 1);
        assert!(intersect_voxels(&vol, Vec3::new(100.0, 100.0, 100.0), 2.0).is_empty());
        assert!(intersect_voxels(&vol, Vec3::new(-1e300, 0.0, 0.0), 2.0).is_empty());
    }

    #[test]
    fn tiny_radius_hits_single_voxel() {
        let vol = solid(8, 1);
        assert_eq!(intersect_voxels(&vol, Vec3::new(3.0, 4.0, 5.0), 0.4), vec![VoxelIndex::new(3, 4, 5)]);
    }

    #[test]
    fn radius_two_sphere_matches_enumeration() {
        let vol = solid(9, 1);
        let tip = Vec3::new(4.0, 4.0, 4.0);
        let got = intersect_voxels(&vol, tip, 2.0);
        assert_eq!(got, brute_force(&vol, tip, 2.0));
        // Lattice points with x²+y²+z² ≤ 4: 1 + 6 + 12 + 8 + 6 = 33.
        assert_eq!(got.len(), 33);
        assert_eq!(got[0], VoxelIndex::new(4, 4, 4));
    }

    #[test]
    fn pedal_off_removes_nothing_but_pushes() {
        let mut vol = solid(8, 1);
        let mut dmg = DamageField::for_volume(&vol);
        let burr = Burr::new(1.5, TipType::Cutting, 100.0).unwrap();
        let out = DrillModel::default()
            .apply_drill_tick(&mut vol, &mut dmg, &DrillInput::at(Vec3::new(4.0, 4.0, 4.3), 0.0, 0), &burr, 0.0, 1e-3)
            .unwrap();
        assert!(out.removed.is_empty());
        assert!(out.f_collision.norm() > 0.0);
        assert!(dmg.values().iter().all(|&d| d == 0.0));
    }

    #[test]
    fn full_damage_removes_in_one_tick() {
        let mut vol = solid(4, 1);
        let mut dmg = DamageField::for_volume(&vol);
        let burr = Burr::new(0.4, TipType::Cutting, 1.0).unwrap();
        let input = DrillInput::at(Vec3::new(1.0, 1.0, 1.0), 1.0, 0);
        let out = DrillModel::default().apply_drill_tick(&mut vol, &mut dmg, &input, &burr, 0.0, 1.0).unwrap();
        assert_eq!(out.removed, vec![(VoxelIndex::new(1, 1, 1), 1)]);
        assert_eq!(vol.get(VoxelIndex::new(1, 1, 1)), 0);
    }

    #[test]
    fn half_rate_needs_two_ticks() {
        let mut vol = solid(4, 1);
        let mut dmg = DamageField::for_volume(&vol);
        let burr = Burr::new(0.4, TipType::Diamond, 0.5).unwrap();
        let input = DrillInput::at(Vec3::new(1.0, 1.0, 1.0), 1.0, 0);
        let m = DrillModel::default();
        assert!(m.apply_drill_tick(&mut vol, &mut dmg, &input, &burr, 1.0, 1.0).unwrap().removed.is_empty());
        assert_eq!(dmg.get(VoxelIndex::new(1, 1, 1)), 0.5);
        assert_eq!(m.apply_drill_tick(&mut vol, &mut dmg, &input, &burr, 2.0, 1.0).unwrap().removed.len(), 1);
    }

    #[test]
    fn mismatched_damage_field_is_rejected() {
        let mut vol = solid(4, 1);
        let mut dmg = DamageField::new([3, 4, 4]);
        let burr = default_burr_catalog()[0];
        let err = DrillModel::default()
            .apply_drill_tick(&mut vol, &mut dmg, &DrillInput::at(Vec3::zeros(), 1.0, 0), &burr, 0.0, 1e-3)
            .unwrap_err();
        assert!(matches!(err, DrillError::DimensionMismatch { .. }));
    }

    #[test]
    fn collision_force_cases() {
        let cfg = HapticConfig { a_drill: 0.0, frequency: 1.0, k_c: 100.0 };
        assert_eq!(collision_force(&ContactState::none(), Vec3::zeros(), &cfg, 3.0), Vec3::zeros());

        // Half-space x <= 3 filled; tip sits on the face, displaced toward +x.
        let g = GridGeometry::new([8; 3], [1.0; 3], [0.0; 3]).unwrap();
        let labels = (0..512).map(|n| if g.unlinear(n).i <= 3 { 1 } else { 0 }).collect();
        let vol = LabeledVolume::new(g, labels, table()).unwrap();
        let tip = Vec3::new(3.5, 3.5, 3.5);
        let contact = ContactState::from_overlap(&vol, intersect_voxels(&vol, tip, 2.0), 2.0);
        let f = collision_force(&contact, tip, &cfg, 3.0);
        assert!(f.x > 0.0);
        assert!(f.y.abs() < 1e-12 && f.z.abs() < 1e-12);
        // k_c * fraction exceeds F_max here, so the magnitude is the clamp.
        assert!((f.norm() - 3.0).abs() < 1e-12);
    }

    #[test]
    fn coincident_tip_pushes_plus_z() {
        let vol = solid(5, 1);
        let tip = Vec3::new(2.0, 2.0, 2.0);
        let contact = ContactState::from_overlap(&vol, intersect_voxels(&vol, tip, 1.0), 1.0);
        let f = collision_force(&contact, tip, &HapticConfig::default(), 5.0);
        assert_eq!(f.x, 0.0);
        assert_eq!(f.y, 0.0);
        assert!(f.z > 0.0);
    }

    #[test]
    fn pitch_examples() {
        let cfg = AudioConfig { p_max: 2.0, f_max: 2.0 };
        assert_eq!(audio_pitch(&Vec3::zeros(), &cfg), 2.0);
        assert_eq!(audio_pitch(&Vec3::new(0.0, 2.0, 0.0), &cfg), 1.0);
        assert_eq!(audio_pitch(&Vec3::new(1.0, 0.0, 0.0), &cfg), 1.5);
    }

    #[test]
    fn haptic_examples() {
        let fc = Vec3::new(0.25, -1.0, 2.0);
        let cfg = HapticConfig { a_drill: 0.5, frequency: PI, k_c: 1.0 };
        assert_eq!(haptic_force(&fc, false, 0.5, &cfg), fc);
        assert_eq!(haptic_force(&fc, true, 0.0, &cfg), fc);
        assert_eq!(haptic_force(&fc, true, 0.5, &cfg), fc + Vec3::new(0.5, 0.5, 0.5));
    }

    #[test]
    fn sensitive_warning_rules() {
        let t = table();
        let s: BTreeSet<u16> = [2].into();
        assert!(check_sensitive([(1, WarningKind::Contact), (1, WarningKind::Removal)], &t, &s).is_empty());
        let w = check_sensitive([(2, WarningKind::Removal)], &t, &s);
        assert_eq!(w, vec![Warning { label: 2, name: "Facial Nerve".into(), kind: WarningKind::Removal }]);
        let w =
            check_sensitive([(2, WarningKind::Contact), (2, WarningKind::Removal), (2, WarningKind::Contact)], &t, &s);
        assert_eq!(w.len(), 1);
        assert_eq!(w[0].kind, WarningKind::Removal);
    }

    #[test]
    fn quaternion_validation() {
        assert!(DrillInput::new(Vec3::zeros(), Quaternion::new(1.0, 0.0, 0.0, 0.0), 2.0, 0).is_ok());
        assert!(matches!(
            DrillInput::new(Vec3::zeros(), Quaternion::new(1.1, 0.0, 0.0, 0.0), 0.5, 0),
            Err(DrillError::NonUnitQuaternion(_))
        ));
        assert_eq!(DrillInput::at(Vec3::zeros(), 7.0, 0).pedal(), 1.0);
        assert_eq!(DrillInput::at(Vec3::zeros(), -1.0, 0).pedal(), 0.0);
    }

    proptest! {
        #[test]
        fn intersect_matches_brute_force(
            x in -3.0f64..15.0, y in -3.0f64..15.0, z in -3.0f64..15.0,
            r in 0.1f64..5.0, sx in 0.3f64..1.5, seed in any::<u64>(),
        ) {
            let g = GridGeometry::new([12, 10, 9], [sx, 1.0, 0.7], [0.5, -0.25, 0.0]).unwrap();
            let labels = (0..g.voxel_count()).map(|n| ((n as u64).wrapping_mul(seed | 1) >> 7) as u16 % 3).collect();
            let vol = LabeledVolume::new(g, labels, table()).unwrap();
            let tip = Vec3::new(x, y, z);
            prop_assert_eq!(intersect_voxels(&vol, tip, r), brute_force(&vol, tip, r));
        }

        #[test]
        fn carving_conserves_and_is_monotone(
            steps in proptest::collection::vec((0.0f64..10.0, 0.0f64..10.0, 0.0f64..10.0, 0.0f64..1.0), 1..20),
        ) {
            let mut vol = solid(10, 1);
            let initial = vol.occupied_count();
            let mut dmg = DamageField::for_volume(&vol);
            let burr = Burr::new(1.8, TipType::Cutting, 600.0).unwrap();
            let m = DrillModel::default();
            let mut removed_total = 0;
            let mut gone = BTreeSet::new();
            for (n, (x, y, z, pedal)) in steps.into_iter().enumerate() {
                let input = DrillInput::at(Vec3::new(x, y, z), pedal, 0);
                let out = m.apply_drill_tick(&mut vol, &mut dmg, &input, &burr, n as f64 * 1e-3, 1e-3).unwrap();
                removed_total += out.removed.len();
                gone.extend(out.removed.iter().map(|r| r.0));
                prop_assert!(out.pitch <= m.audio.p_max);
                prop_assert!((out.f_haptic - out.f_collision).amax() <= m.haptic.a_drill);
            }
            prop_assert_eq!(vol.occupied_count() + removed_total, initial);
            prop_assert_eq!(gone.len(), removed_total);
            prop_assert!(gone.iter().all(|&idx| vol.get(idx) == 0));
        }

        #[test]
        fn pitch_slope_is_minus_inverse_fmax(a in 0.0f64..5.0, b in 0.0f64..5.0, f_max in 0.5f64..10.0) {
            let cfg = AudioConfig { p_max: 3.0, f_max };
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            prop_assume!(hi - lo > 1e-9);
            let p_lo = audio_pitch(&Vec3::new(lo, 0.0, 0.0), &cfg);
            let p_hi = audio_pitch(&Vec3::new(0.0, hi, 0.0), &cfg);
            prop_assert!(p_hi < p_lo);
            prop_assert!(((p_hi - p_lo) / (hi - lo) + 1.0 / f_max).abs() < 1e-9);
        }
    }
}
