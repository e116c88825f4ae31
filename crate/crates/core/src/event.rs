//! Session events, grouped the way recordings store them.

use nalgebra::{Quaternion, UnitQuaternion};
use serde::{Deserialize, Serialize};

use crate::drill::TipType;
use crate::volume::VoxelIndex;
use crate::Vec3;

/// Position (mm) plus orientation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub position: Vec3,
    pub orientation: UnitQuaternion<f64>,
}

impl Default for Pose {
    fn default() -> Self {
        Self { position: Vec3::zeros(), orientation: UnitQuaternion::identity() }
    }
}

impl Pose {
    pub fn new(position: Vec3, orientation: UnitQuaternion<f64>) -> Self {
        Self { position, orientation }
    }

    /// `[x, y, z, qw, qx, qy, qz]`
    pub fn to_array(&self) -> [f64; 7] {
        let q = self.orientation.quaternion();
        [self.position.x, self.position.y, self.position.z, q.w, q.i, q.j, q.k]
    }

    /// Inverse of [`Pose::to_array`]. The quaternion is taken as stored, without
    /// renormalizing, so recorded poses round-trip bit for bit.
    pub fn from_array(a: [f64; 7]) -> Self {
        Self {
            position: Vec3::new(a[0], a[1], a[2]),
            orientation: UnitQuaternion::new_unchecked(Quaternion::new(a[3], a[4], a[5], a[6])),
        }
    }
}

/// Record groups. The discriminant doubles as the on-disk group id.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Group {
    VoxelsRemoved = 0,
    ForceFeedback = 1,
    BurrChange = 2,
    Kinematics = 3,
    DepthFrames = 4,
}

impl Group {
    pub const ALL: [Group; 5] =
        [Group::VoxelsRemoved, Group::ForceFeedback, Group::BurrChange, Group::Kinematics, Group::DepthFrames];

    pub fn id(self) -> u8 {
        self as u8
    }

    pub fn from_id(id: u8) -> Option<Self> {
        Self::ALL.get(id as usize).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Group::VoxelsRemoved => "voxels_removed",
            Group::ForceFeedback => "force_feedback",
            Group::BurrChange => "burr_change",
            Group::Kinematics => "kinematics",
            Group::DepthFrames => "depth_frames",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum EventRecord {
    VoxelRemoved {
        t: f64,
        index: VoxelIndex,
        label: u16,
        color: [u8; 3],
    },
    ForceSample {
        t: f64,
        force: Vec3,
    },
    BurrChange {
        t: f64,
        burr_id: u32,
        radius_mm: f64,
        tip: TipType,
    },
    Kinematics {
        t: f64,
        drill: Pose,
        camera: Pose,
    },
    /// Pointer to a rendered depth/label map stored next to the recording.
    DepthFrame {
        t: f64,
        frame_id: u64,
        reference: String,
    },
}

impl EventRecord {
    pub fn t(&self) -> f64 {
        match *self {
            EventRecord::VoxelRemoved { t, .. }
            | EventRecord::ForceSample { t, .. }
            | EventRecord::BurrChange { t, .. }
            | EventRecord::Kinematics { t, .. }
            | EventRecord::DepthFrame { t, .. } => t,
        }
    }

    pub fn group(&self) -> Group {
        match self {
            EventRecord::VoxelRemoved { .. } => Group::VoxelsRemoved,
            EventRecord::ForceSample { .. } => Group::ForceFeedback,
            EventRecord::BurrChange { .. } => Group::BurrChange,
            EventRecord::Kinematics { .. } => Group::Kinematics,
            EventRecord::DepthFrame { .. } => Group::DepthFrames,
        }
    }

    /// Equality on stored bits, so NaN and -0.0 compare exactly.
    pub fn bit_eq(&self, other: &Self) -> bool {
        use EventRecord::*;
        let v = |a: &Vec3, b: &Vec3| a.iter().zip(b.iter()).all(|(x, y)| x.to_bits() == y.to_bits());
        let p = |a: &Pose, b: &Pose| a.to_array().iter().zip(b.to_array()).all(|(x, y)| x.to_bits() == y.to_bits());
        match (self, other) {
            (
                VoxelRemoved { t: t1, index: i1, label: l1, color: c1 },
                VoxelRemoved { t: t2, index: i2, label: l2, color: c2 },
            ) => t1.to_bits() == t2.to_bits() && i1 == i2 && l1 == l2 && c1 == c2,
            (ForceSample { t: t1, force: f1 }, ForceSample { t: t2, force: f2 }) => {
                t1.to_bits() == t2.to_bits() && v(f1, f2)
            }
            (
                BurrChange { t: t1, burr_id: b1, radius_mm: r1, tip: p1 },
                BurrChange { t: t2, burr_id: b2, radius_mm: r2, tip: p2 },
            ) => t1.to_bits() == t2.to_bits() && b1 == b2 && r1.to_bits() == r2.to_bits() && p1 == p2,
            (Kinematics { t: t1, drill: d1, camera: c1 }, Kinematics { t: t2, drill: d2, camera: c2 }) => {
                t1.to_bits() == t2.to_bits() && p(d1, d2) && p(c1, c2)
            }
            (DepthFrame { t: t1, frame_id: f1, reference: r1 }, DepthFrame { t: t2, frame_id: f2, reference: r2 }) => {
                t1.to_bits() == t2.to_bits() && f1 == f2 && r1 == r2
            }
            _ => false,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pose_array_round_trip() {
        let q = UnitQuaternion::from_euler_angles(0.1, -0.4, 2.0);
        let p = Pose::new(Vec3::new(1.0, -2.5, 3.25), q);
        let back = Pose::from_array(p.to_array());
        assert_eq!(back.to_array(), p.to_array());
    }

    #[test]
    fn group_ids_are_stable() {
        for g in Group::ALL {
            assert_eq!(Group::from_id(g.id()), Some(g));
        }
        assert_eq!(Group::from_id(5), None);
        assert_eq!(Group::Kinematics.name(), "kinematics");
    }

    #[test]
    fn bit_eq_distinguishes_signed_zero() {
        let a = EventRecord::ForceSample { t: 0.0, force: Vec3::new(0.0, 1.0, 2.0) };
        let b = EventRecord::ForceSample { t: 0.0, force: Vec3::new(-0.0, 1.0, 2.0) };
        assert!(a.bit_eq(&a.clone()));
        assert!(!a.bit_eq(&b));
        assert_eq!(a, b);
    }
}
