//! Fixtures shared by the integration tests.
#![allow(dead_code)]

use voxdrill::config::SessionConfig;
use voxdrill::session::{Interpolation, Keyframe, Trajectory};
use voxdrill::volume::{GridGeometry, LabeledVolume, Segment, SegmentTable};

pub const BONE: u16 = 1;
pub const NERVE: u16 = 2;

/// `n`-cube of bone filling the lower three quarters of the grid, with a
/// nerve running along x a few voxels under the bone surface.
pub fn bone_block(n: usize, spacing: f64) -> LabeledVolume {
    let g = GridGeometry::new([n; 3], [spacing; 3], [0.0; 3]).unwrap();
    let table = SegmentTable::new()
        .with(BONE, Segment::new("Bone", [0.9, 0.88, 0.8]))
        .unwrap()
        .with(NERVE, Segment::new("Nerve", [1.0, 0.85, 0.1]))
        .unwrap();
    let top = n * 3 / 4;
    let mut labels = vec![0u16; g.voxel_count()];
    for k in 0..top {
        for j in 0..n {
            for i in 0..n {
                let nerve = k + 4 == top && j.abs_diff(n / 2) <= 1;
                labels[i + n * (j + n * k)] = if nerve { NERVE } else { BONE };
            }
        }
    }
    LabeledVolume::new(g, labels, table).unwrap()
}

pub fn config() -> SessionConfig {
    SessionConfig { sensitive_names: vec!["Nerve".into()], default_burr: Some(2), ..SessionConfig::default() }
}

/// Top surface height of [`bone_block`] in mm.
pub fn surface_z(n: usize, spacing: f64) -> f64 {
    (n * 3 / 4) as f64 * spacing
}

/// Approach, plunge and sweep across the block over `duration` seconds,
/// swapping to a smaller burr halfway.
pub fn sweep_script(n: usize, spacing: f64, duration: f64) -> Trajectory {
    let c = n as f64 * spacing / 2.0;
    let z = surface_z(n, spacing);
    let d = duration;
    let kf = vec![
        Keyframe::new(0.0, [c - 0.3 * c, c, z + 4.0], 0.0),
        Keyframe::new(0.1 * d, [c - 0.3 * c, c, z + 0.5], 1.0),
        Keyframe::new(0.3 * d, [c - 0.3 * c, c, z - 1.0], 1.0),
        Keyframe::new(0.5 * d, [c + 0.3 * c, c + 0.2 * c, z - 1.5], 1.0),
        Keyframe::new(0.5 * d + 0.01, [c + 0.3 * c, c + 0.2 * c, z - 1.5], 1.0).with_burr(0),
        Keyframe::new(0.8 * d, [c, c - 0.3 * c, z - 2.5], 0.8),
        Keyframe::new(d, [c, c - 0.3 * c, z + 3.0], 0.0),
    ];
    Trajectory::new(Interpolation::Linear, kf).unwrap()
}
