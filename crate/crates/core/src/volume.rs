//! Voxel grids: the carvable label volume, intensity volumes, segment tables
//! and the world/voxel coordinate mapping shared by every other module.
//!
//! Voxels are stored x-fastest (`i + nx * (j + ny * k)`), the same order NRRD
//! uses on disk, so parsing and writing never transpose.

use std::collections::{BTreeMap, BTreeSet};
use std::hash::Hasher;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use twox_hash::XxHash64;

use crate::Vec3;

/// Default color for segments that do not declare one (pastel bone).
pub const DEFAULT_SEGMENT_COLOR: [f64; 3] = [0.8, 0.8, 0.7];

#[derive(Debug, Error, PartialEq)]
pub enum VolumeError {
    #[error("dimension {axis} must be >= 1, got {value}")]
    BadDims { axis: usize, value: usize },
    #[error("spacing along axis {axis} must be finite and > 0, got {value}")]
    BadSpacing { axis: usize, value: f64 },
    #[error("voxel array has {actual} entries, expected {expected}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("label {0} is not present in the segment table")]
    UnknownLabel(u16),
    #[error("label 0 is reserved for empty space")]
    ReservedLabel,
    #[error("duplicate segment name {0:?}")]
    DuplicateName(String),
    #[error("duplicate segment label {0}")]
    DuplicateLabel(u16),
    #[error("iso value must lie strictly inside (0, 1), got {0}")]
    BadIsoValue(f64),
    #[error("intensity values must be finite")]
    NonFinite,
}

/// Integer voxel coordinate. Ordering is lexicographic on (i, j, k).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct VoxelIndex {
    pub i: u32,
    pub j: u32,
    pub k: u32,
}

impl VoxelIndex {
    pub const fn new(i: u32, j: u32, k: u32) -> Self {
        Self { i, j, k }
    }

    pub fn as_vec3(self) -> Vec3 {
        Vec3::new(self.i as f64, self.j as f64, self.k as f64)
    }
}

/// Shape and placement of a voxel grid. `origin` is the world position (mm)
/// of the center of voxel (0, 0, 0).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridGeometry {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub origin: [f64; 3],
}

impl GridGeometry {
    pub fn new(dims: [usize; 3], spacing: [f64; 3], origin: [f64; 3]) -> Result<Self, VolumeError> {
        for axis in 0..3 {
            if dims[axis] == 0 {
                return Err(VolumeError::BadDims { axis, value: dims[axis] });
            }
            if !(spacing[axis].is_finite() && spacing[axis] > 0.0) {
                return Err(VolumeError::BadSpacing { axis, value: spacing[axis] });
            }
        }
        Ok(Self { dims, spacing, origin })
    }

    pub fn voxel_count(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    /// Volume of one voxel in mm³.
    pub fn voxel_volume(&self) -> f64 {
        self.spacing[0] * self.spacing[1] * self.spacing[2]
    }

    #[inline]
    pub fn linear(&self, idx: VoxelIndex) -> usize {
        idx.i as usize + self.dims[0] * (idx.j as usize + self.dims[1] * idx.k as usize)
    }

    #[inline]
    pub fn unlinear(&self, n: usize) -> VoxelIndex {
        let i = n % self.dims[0];
        let rest = n / self.dims[0];
        VoxelIndex::new(i as u32, (rest % self.dims[1]) as u32, (rest / self.dims[1]) as u32)
    }

    pub fn contains(&self, idx: VoxelIndex) -> bool {
        (idx.i as usize) < self.dims[0] && (idx.j as usize) < self.dims[1] && (idx.k as usize) < self.dims[2]
    }

    /// Continuous voxel coordinates of a world point; integer values are voxel centers.
    pub fn world_to_voxel(&self, p: Vec3) -> Vec3 {
        Vec3::new(
            (p.x - self.origin[0]) / self.spacing[0],
            (p.y - self.origin[1]) / self.spacing[1],
            (p.z - self.origin[2]) / self.spacing[2],
        )
    }

    pub fn voxel_to_world(&self, v: Vec3) -> Vec3 {
        Vec3::new(
            self.origin[0] + v.x * self.spacing[0],
            self.origin[1] + v.y * self.spacing[1],
            self.origin[2] + v.z * self.spacing[2],
        )
    }

    pub fn center_of(&self, idx: VoxelIndex) -> Vec3 {
        self.voxel_to_world(idx.as_vec3())
    }

    /// Whether continuous voxel coordinates fall inside some voxel's cell.
    pub fn in_bounds(&self, v: Vec3) -> bool {
        (0..3).all(|a| v[a] >= -0.5 && v[a] < self.dims[a] as f64 - 0.5)
    }

    /// Normalized texture coordinates in [0,1]³: voxel `i` center sits at `(i + 0.5) / n`.
    pub fn voxel_to_normalized(&self, v: Vec3) -> Vec3 {
        Vec3::new(
            (v.x + 0.5) / self.dims[0] as f64,
            (v.y + 0.5) / self.dims[1] as f64,
            (v.z + 0.5) / self.dims[2] as f64,
        )
    }

    pub fn normalized_to_voxel(&self, p: Vec3) -> Vec3 {
        Vec3::new(p.x * self.dims[0] as f64 - 0.5, p.y * self.dims[1] as f64 - 0.5, p.z * self.dims[2] as f64 - 0.5)
    }

    pub fn world_to_normalized(&self, p: Vec3) -> Vec3 {
        self.voxel_to_normalized(self.world_to_voxel(p))
    }

    pub fn normalized_to_world(&self, p: Vec3) -> Vec3 {
        self.voxel_to_world(self.normalized_to_voxel(p))
    }

    /// Per-axis step of one voxel in normalized coordinates.
    pub fn phi(&self) -> Vec3 {
        Vec3::new(1.0 / self.dims[0] as f64, 1.0 / self.dims[1] as f64, 1.0 / self.dims[2] as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub name: String,
    pub color: [f64; 3],
    #[serde(default)]
    pub sensitive: bool,
}

impl Segment {
    pub fn new(name: impl Into<String>, color: [f64; 3]) -> Self {
        Self { name: name.into(), color, sensitive: false }
    }

    /// Color quantized to 8 bits per channel.
    pub fn rgb8(&self) -> [u8; 3] {
        color_to_rgb8(self.color)
    }
}

pub fn color_to_rgb8(c: [f64; 3]) -> [u8; 3] {
    c.map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
}

/// Label value → segment description. Label 0 never appears; names are unique.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BTreeMap<u16, Segment>", into = "BTreeMap<u16, Segment>")]
pub struct SegmentTable {
    entries: BTreeMap<u16, Segment>,
}

impl SegmentTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, label: u16, segment: Segment) -> Result<(), VolumeError> {
        if label == 0 {
            return Err(VolumeError::ReservedLabel);
        }
        if self.entries.contains_key(&label) {
            return Err(VolumeError::DuplicateLabel(label));
        }
        if self.entries.values().any(|s| s.name == segment.name) {
            return Err(VolumeError::DuplicateName(segment.name));
        }
        self.entries.insert(label, segment);
        Ok(())
    }

    pub fn with(mut self, label: u16, segment: Segment) -> Result<Self, VolumeError> {
        self.insert(label, segment)?;
        Ok(self)
    }

    pub fn get(&self, label: u16) -> Option<&Segment> {
        self.entries.get(&label)
    }

    pub fn contains(&self, label: u16) -> bool {
        self.entries.contains_key(&label)
    }

    pub fn iter(&self) -> impl Iterator<Item = (u16, &Segment)> {
        self.entries.iter().map(|(k, v)| (*k, v))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Marks the given labels sensitive and clears the flag everywhere else.
    /// Labels missing from the table are ignored.
    pub fn set_sensitive(&mut self, labels: &BTreeSet<u16>) {
        for (label, seg) in self.entries.iter_mut() {
            seg.sensitive = labels.contains(label);
        }
    }

    pub fn sensitive_labels(&self) -> BTreeSet<u16> {
        self.entries.iter().filter(|(_, s)| s.sensitive).map(|(k, _)| *k).collect()
    }

    pub fn label_by_name(&self, name: &str) -> Option<u16> {
        self.entries.iter().find(|(_, s)| s.name == name).map(|(k, _)| *k)
    }
}

impl TryFrom<BTreeMap<u16, Segment>> for SegmentTable {
    type Error = VolumeError;

    fn try_from(map: BTreeMap<u16, Segment>) -> Result<Self, Self::Error> {
        let mut table = SegmentTable::new();
        for (label, seg) in map {
            table.insert(label, seg)?;
        }
        Ok(table)
    }
}

impl From<SegmentTable> for BTreeMap<u16, Segment> {
    fn from(t: SegmentTable) -> Self {
        t.entries
    }
}

/// Carvable anatomy: one segment label per voxel, 0 meaning air.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledVolume {
    geometry: GridGeometry,
    labels: Vec<u16>,
    segments: SegmentTable,
}

impl LabeledVolume {
    pub fn new(geometry: GridGeometry, labels: Vec<u16>, segments: SegmentTable) -> Result<Self, VolumeError> {
        let expected = geometry.voxel_count();
        if labels.len() != expected {
            return Err(VolumeError::LengthMismatch { expected, actual: labels.len() });
        }
        let present: BTreeSet<u16> = labels.iter().copied().filter(|&l| l != 0).collect();
        if let Some(&bad) = present.iter().find(|l| !segments.contains(**l)) {
            return Err(VolumeError::UnknownLabel(bad));
        }
        Ok(Self { geometry, labels, segments })
    }

    /// An all-air volume.
    pub fn empty(geometry: GridGeometry, segments: SegmentTable) -> Self {
        Self { labels: vec![0; geometry.voxel_count()], geometry, segments }
    }

    pub fn geometry(&self) -> &GridGeometry {
        &self.geometry
    }

    pub fn dims(&self) -> [usize; 3] {
        self.geometry.dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.geometry.spacing
    }

    pub fn origin(&self) -> [f64; 3] {
        self.geometry.origin
    }

    pub fn labels(&self) -> &[u16] {
        &self.labels
    }

    pub fn segments(&self) -> &SegmentTable {
        &self.segments
    }

    pub fn segments_mut(&mut self) -> &mut SegmentTable {
        &mut self.segments
    }

    pub fn get(&self, idx: VoxelIndex) -> u16 {
        self.labels[self.geometry.linear(idx)]
    }

    /// Label at `idx`, or 0 when the index lies outside the grid.
    pub fn get_checked(&self, idx: VoxelIndex) -> u16 {
        if self.geometry.contains(idx) {
            self.get(idx)
        } else {
            0
        }
    }

    pub fn set(&mut self, idx: VoxelIndex, label: u16) -> Result<(), VolumeError> {
        if label != 0 && !self.segments.contains(label) {
            return Err(VolumeError::UnknownLabel(label));
        }
        let n = self.geometry.linear(idx);
        self.labels[n] = label;
        Ok(())
    }

    /// Sets a voxel to air. The only mutation drilling performs.
    pub fn clear(&mut self, idx: VoxelIndex) {
        let n = self.geometry.linear(idx);
        self.labels[n] = 0;
    }

    pub fn occupied_count(&self) -> usize {
        self.labels.iter().filter(|&&l| l != 0).count()
    }

    pub fn label_counts(&self) -> BTreeMap<u16, usize> {
        let mut counts = BTreeMap::new();
        for &l in self.labels.iter().filter(|&&l| l != 0) {
            *counts.entry(l).or_insert(0) += 1;
        }
        counts
    }

    pub fn world_to_voxel(&self, p: Vec3) -> Vec3 {
        self.geometry.world_to_voxel(p)
    }

    pub fn voxel_to_world(&self, idx: VoxelIndex) -> Vec3 {
        self.geometry.center_of(idx)
    }

    pub fn digest(&self) -> u64 {
        grid_digest(&self.geometry, &self.labels)
    }
}

/// Density volume normalized to [0,1] with an iso threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct IntensityVolume {
    geometry: GridGeometry,
    values: Vec<f64>,
    iso_value: f64,
}

impl IntensityVolume {
    pub fn new(geometry: GridGeometry, values: Vec<f64>, iso_value: f64) -> Result<Self, VolumeError> {
        let expected = geometry.voxel_count();
        if values.len() != expected {
            return Err(VolumeError::LengthMismatch { expected, actual: values.len() });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(VolumeError::NonFinite);
        }
        if !(iso_value > 0.0 && iso_value < 1.0) {
            return Err(VolumeError::BadIsoValue(iso_value));
        }
        Ok(Self { geometry, values, iso_value })
    }

    pub fn geometry(&self) -> &GridGeometry {
        &self.geometry
    }

    pub fn dims(&self) -> [usize; 3] {
        self.geometry.dims
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn iso_value(&self) -> f64 {
        self.iso_value
    }

    pub fn with_iso_value(mut self, iso: f64) -> Result<Self, VolumeError> {
        if !(iso > 0.0 && iso < 1.0) {
            return Err(VolumeError::BadIsoValue(iso));
        }
        self.iso_value = iso;
        Ok(self)
    }

    /// Binarizes at the iso value into a single-segment label volume.
    pub fn threshold(&self, label: u16, segment: Segment) -> Result<LabeledVolume, VolumeError> {
        let segments = SegmentTable::new().with(label, segment)?;
        let labels = self.values.iter().map(|&v| if v >= self.iso_value { label } else { 0 }).collect();
        LabeledVolume::new(self.geometry, labels, segments)
    }
}

/// Either kind of volume a scan can decode to.
#[derive(Debug, Clone, PartialEq)]
pub enum Volume {
    Intensity(IntensityVolume),
    Labeled(LabeledVolume),
}

impl Volume {
    pub fn geometry(&self) -> &GridGeometry {
        match self {
            Volume::Intensity(v) => v.geometry(),
            Volume::Labeled(v) => v.geometry(),
        }
    }
}

/// Content hash over dims, spacing and the label array.
///
/// XXH64 (seed 0) of: the three dims as u64 LE, the three spacings as f64 LE
/// bit patterns, then each label as u16 LE. Origin and segment names are
/// deliberately excluded so that relabeling metadata does not change identity.
pub fn grid_digest(geometry: &GridGeometry, labels: &[u16]) -> u64 {
    let mut h = XxHash64::with_seed(0);
    for d in geometry.dims {
        h.write(&(d as u64).to_le_bytes());
    }
    for s in geometry.spacing {
        h.write(&s.to_bits().to_le_bytes());
    }
    let mut buf = Vec::with_capacity(8192);
    for chunk in labels.chunks(4096) {
        buf.clear();
        for &l in chunk {
            buf.extend_from_slice(&l.to_le_bytes());
        }
        h.write(&buf);
    }
    h.finish()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bone_table() -> SegmentTable {
        SegmentTable::new().with(1, Segment::new("Bone", DEFAULT_SEGMENT_COLOR)).unwrap()
    }

    #[test]
    fn identity_spacing_maps_index_to_world() {
        let g = GridGeometry::new([8, 8, 8], [1.0; 3], [0.0; 3]).unwrap();
        assert_eq!(g.center_of(VoxelIndex::new(3, 4, 5)), Vec3::new(3.0, 4.0, 5.0));
    }

    #[test]
    fn offset_origin_half_spacing() {
        let g = GridGeometry::new([4, 4, 4], [0.5; 3], [10.0, 0.0, 0.0]).unwrap();
        assert_eq!(g.world_to_voxel(Vec3::new(10.5, 0.0, 0.0)), Vec3::new(1.0, 0.0, 0.0));
    }

    #[test]
    fn rejects_bad_geometry() {
        assert!(matches!(GridGeometry::new([0, 1, 1], [1.0; 3], [0.0; 3]), Err(VolumeError::BadDims { axis: 0, .. })));
        assert!(matches!(
            GridGeometry::new([1, 1, 1], [1.0, -1.0, 1.0], [0.0; 3]),
            Err(VolumeError::BadSpacing { axis: 1, .. })
        ));
    }

    #[test]
    fn volume_rejects_unknown_label_and_bad_length() {
        let g = GridGeometry::new([2, 1, 1], [1.0; 3], [0.0; 3]).unwrap();
        assert_eq!(LabeledVolume::new(g, vec![0, 7], bone_table()), Err(VolumeError::UnknownLabel(7)));
        assert!(matches!(LabeledVolume::new(g, vec![0], bone_table()), Err(VolumeError::LengthMismatch { .. })));
    }

    #[test]
    fn segment_table_invariants() {
        let mut t = bone_table();
        assert_eq!(t.insert(0, Segment::new("Air", [0.0; 3])), Err(VolumeError::ReservedLabel));
        assert_eq!(t.insert(2, Segment::new("Bone", [0.0; 3])), Err(VolumeError::DuplicateName("Bone".into())));
        assert_eq!(t.insert(1, Segment::new("Other", [0.0; 3])), Err(VolumeError::DuplicateLabel(1)));
    }

    #[test]
    fn digest_detects_single_voxel_flip() {
        let g = GridGeometry::new([4, 4, 4], [1.0; 3], [0.0; 3]).unwrap();
        let a = LabeledVolume::new(g, vec![1; 64], bone_table()).unwrap();
        let mut b = a.clone();
        assert_eq!(a.digest(), b.digest());
        b.clear(VoxelIndex::new(2, 1, 3));
        assert_ne!(a.digest(), b.digest());
    }

    #[test]
    fn digest_golden_value() {
        // Frozen once; guards against accidental changes to the hashed layout.
        let g = GridGeometry::new([3, 2, 2], [0.5, 0.25, 1.0], [0.0; 3]).unwrap();
        let labels: Vec<u16> = (0..12).map(|n| (n % 3) as u16).collect();
        assert_eq!(grid_digest(&g, &labels), GOLDEN_DIGEST);
    }

    // XXH64 (seed 0) of the little-endian dims, spacing bits and labels.
    const GOLDEN_DIGEST: u64 = 11_608_781_333_518_894_784;

    proptest! {
        #[test]
        fn world_voxel_roundtrip(
            i in 0u32..500, j in 0u32..500, k in 0u32..500,
            sx in 0.1f64..2.0, sy in 0.1f64..2.0, sz in 0.1f64..2.0,
            ox in -200.0f64..200.0, oy in -200.0f64..200.0, oz in -200.0f64..200.0,
        ) {
            let g = GridGeometry::new([500; 3], [sx, sy, sz], [ox, oy, oz]).unwrap();
            let idx = VoxelIndex::new(i, j, k);
            let back = g.world_to_voxel(g.center_of(idx));
            // 1e-12 relative to the index magnitude; absolute error grows with |world|.
            prop_assert!((back - idx.as_vec3()).amax() <= 1e-12 * (1.0 + idx.as_vec3().amax()));
        }

        #[test]
        fn linear_unlinear_inverse(nx in 1usize..20, ny in 1usize..20, nz in 1usize..20, seed in 0usize..10_000) {
            let g = GridGeometry::new([nx, ny, nz], [1.0; 3], [0.0; 3]).unwrap();
            let n = seed % g.voxel_count();
            prop_assert_eq!(g.linear(g.unlinear(n)), n);
        }
    }
}
