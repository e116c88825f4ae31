//! Iso-surface ray casting with bisection refinement, smoothed surface
//! normals, and orthographic depth/label/normal map rendering.
//!
//! All sampling happens in normalized volume coordinates `[0,1]³` with texture
//! conventions: voxel `i` center sits at `(i + 0.5) / n`, samples are trilinear
//! and clamp to the edge. Labeled volumes are sampled as occupancy
//! (`label != 0 → 1.0`) and count as inside where occupancy ≥ 0.5; intensity
//! volumes are inside where the sampled value ≥ their iso value.
//!
//! Normals are the normalized sum of N³ central-difference gradients taken on
//! a voxel-spaced lattice centered at the hit point. They point along
//! increasing density, i.e. into the material.

use std::path::Path;

use image::{ImageBuffer, Luma, Rgb, RgbImage};
use rayon::prelude::*;
use thiserror::Error;

use crate::volume::{GridGeometry, IntensityVolume, LabeledVolume, SegmentTable, VoxelIndex};
use crate::Vec3;

pub const DEFAULT_BISECT_ITERS: u32 = 8;
pub const DEFAULT_KERNEL_N: usize = 3;

/// Depth PNG quantization: one count per 0.01 mm. 65535 marks a miss.
pub const DEPTH_PNG_UNITS_PER_MM: f64 = 100.0;
pub const DEPTH_PNG_MISS: u16 = u16::MAX;

#[derive(Debug, Error, PartialEq)]
pub enum IsoError {
    #[error("ray direction must be unit length, |d| = {0}")]
    NonUnitDirection(f64),
    #[error("march step must be finite and > 0, got {0}")]
    BadStep(f64),
    #[error("smoothing sample count must be odd and >= 1, got {0}")]
    BadKernel(usize),
    #[error("accumulated gradient vanished; no surface normal")]
    DegenerateNormal,
    #[error("degenerate camera: {0}")]
    DegenerateCamera(&'static str),
    #[error("render resolution must be at least 1x1")]
    BadResolution,
    #[error("writing {path}: {reason}")]
    Image { path: String, reason: String },
}

/// A volume the ray caster can sample.
pub trait ScalarField: Sync {
    fn geometry(&self) -> &GridGeometry;
    /// Scalar at a linear voxel index.
    fn voxel_value(&self, n: usize) -> f64;
    /// Sampled values at or above this are inside.
    fn threshold(&self) -> f64;
}

impl ScalarField for LabeledVolume {
    fn geometry(&self) -> &GridGeometry {
        LabeledVolume::geometry(self)
    }

    #[inline]
    fn voxel_value(&self, n: usize) -> f64 {
        if self.labels()[n] != 0 {
            1.0
        } else {
            0.0
        }
    }

    fn threshold(&self) -> f64 {
        0.5
    }
}

impl ScalarField for IntensityVolume {
    fn geometry(&self) -> &GridGeometry {
        IntensityVolume::geometry(self)
    }

    #[inline]
    fn voxel_value(&self, n: usize) -> f64 {
        self.values()[n]
    }

    fn threshold(&self) -> f64 {
        self.iso_value()
    }
}

/// Trilinear sample at normalized coordinates. The flag reports whether any
/// axis had to be clamped to the outermost voxel centers.
pub fn sample<F: ScalarField + ?Sized>(field: &F, p: Vec3) -> (f64, bool) {
    let g = field.geometry();
    let mut base = [0usize; 3];
    let mut next = [0usize; 3];
    let mut frac = [0.0f64; 3];
    let mut clamped = false;
    for a in 0..3 {
        let n = g.dims[a];
        let u = p[a] * n as f64 - 0.5;
        let max = (n - 1) as f64;
        let uc = if u < 0.0 {
            clamped = true;
            0.0
        } else if u > max {
            clamped = true;
            max
        } else if u.is_nan() {
            clamped = true;
            0.0
        } else {
            u
        };
        let i0 = (uc.floor() as usize).min(n.saturating_sub(2));
        base[a] = i0;
        next[a] = (i0 + 1).min(n - 1);
        frac[a] = uc - i0 as f64;
    }
    let [nx, ny, _] = g.dims;
    let at = |i: usize, j: usize, k: usize| field.voxel_value(i + nx * (j + ny * k));
    let (x0, x1) = (base[0], next[0]);
    let (y0, y1) = (base[1], next[1]);
    let (z0, z1) = (base[2], next[2]);
    let [fx, fy, fz] = frac;
    let c00 = at(x0, y0, z0) * (1.0 - fx) + at(x1, y0, z0) * fx;
    let c10 = at(x0, y1, z0) * (1.0 - fx) + at(x1, y1, z0) * fx;
    let c01 = at(x0, y0, z1) * (1.0 - fx) + at(x1, y0, z1) * fx;
    let c11 = at(x0, y1, z1) * (1.0 - fx) + at(x1, y1, z1) * fx;
    let c0 = c00 * (1.0 - fy) + c10 * fy;
    let c1 = c01 * (1.0 - fy) + c11 * fy;
    (c0 * (1.0 - fz) + c1 * fz, clamped)
}

fn inside<F: ScalarField + ?Sized>(field: &F, p: Vec3) -> bool {
    sample(field, p).0 >= field.threshold()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gradient {
    pub value: Vec3,
    /// Some stencil sample fell outside the voxel-center range and was clamped.
    pub clamped: bool,
}

/// Central difference with a one-voxel offset per axis:
/// `g_d = (s(p + φ_d e_d) - s(p - φ_d e_d)) / 2`.
pub fn raw_gradient<F: ScalarField + ?Sized>(field: &F, p: Vec3) -> Gradient {
    let phi = field.geometry().phi();
    let mut value = Vec3::zeros();
    let mut clamped = false;
    for a in 0..3 {
        let mut off = Vec3::zeros();
        off[a] = phi[a];
        let (hi, c1) = sample(field, p + off);
        let (lo, c2) = sample(field, p - off);
        value[a] = (hi - lo) / 2.0;
        clamped |= c1 | c2;
    }
    Gradient { value, clamped }
}

/// Sample-count and lattice spacing of the normal smoothing stencil.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmoothingKernel {
    n: usize,
    delta_p: Vec3,
    phi: Vec3,
}

impl SmoothingKernel {
    pub fn new(n: usize, geometry: &GridGeometry) -> Result<Self, IsoError> {
        if n == 0 || n.is_multiple_of(2) {
            return Err(IsoError::BadKernel(n));
        }
        let half = (n as f64 - 1.0) / 2.0;
        Ok(Self { n, delta_p: Vec3::new(half, half, half), phi: geometry.phi() })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn delta_p(&self) -> Vec3 {
        self.delta_p
    }

    pub fn phi(&self) -> Vec3 {
        self.phi
    }

    /// Offsets in normalized coordinates, x outermost, z innermost.
    pub fn offsets(&self) -> impl Iterator<Item = Vec3> + '_ {
        let n = self.n;
        (0..n).flat_map(move |x| {
            (0..n).flat_map(move |y| {
                (0..n).map(move |z| (Vec3::new(x as f64, y as f64, z as f64) - self.delta_p).component_mul(&self.phi))
            })
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmoothedNormal {
    pub eta: Vec3,
    pub clamped: bool,
    /// Gradient evaluations spent on this normal (always N³).
    pub gradient_evals: usize,
}

/// Normalized sum of the central-difference gradients over the N³ lattice.
pub fn smoothed_normal<F: ScalarField + ?Sized>(
    field: &F,
    p_iso: Vec3,
    kernel: &SmoothingKernel,
) -> Result<SmoothedNormal, IsoError> {
    let mut eta = Vec3::zeros();
    let mut clamped = false;
    let mut evals = 0;
    for offset in kernel.offsets() {
        let g = raw_gradient(field, p_iso + offset);
        eta += g.value;
        clamped |= g.clamped;
        evals += 1;
    }
    let norm = eta.norm();
    if !(norm.is_finite() && norm > 1e-12) {
        return Err(IsoError::DegenerateNormal);
    }
    Ok(SmoothedNormal { eta: eta / norm, clamped, gradient_evals: evals })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RaycastParams {
    /// March step in normalized units; `None` = half the smallest voxel step.
    pub step: Option<f64>,
    pub bisect_iters: u32,
    pub kernel_n: usize,
}

impl Default for RaycastParams {
    fn default() -> Self {
        Self { step: None, bisect_iters: DEFAULT_BISECT_ITERS, kernel_n: DEFAULT_KERNEL_N }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RayHit {
    /// Surface point in normalized coordinates.
    pub p_iso: Vec3,
    /// Ray parameter of `p_iso` (normalized units).
    pub t_hit: f64,
    pub eta: Vec3,
    /// Width of the final bisection bracket (0 when the ray starts inside).
    pub bracket: f64,
    /// The normal fell back to the ray direction because the gradient sum vanished.
    pub degenerate: bool,
    pub clamped: bool,
    pub gradient_evals: usize,
}

/// Parameter interval where the ray overlaps the unit cube, clipped to t ≥ 0.
fn unit_cube_span(origin: Vec3, dir: Vec3) -> Option<(f64, f64)> {
    let mut t0 = 0.0f64;
    let mut t1 = f64::INFINITY;
    for a in 0..3 {
        if dir[a] == 0.0 {
            if origin[a] < 0.0 || origin[a] > 1.0 {
                return None;
            }
            continue;
        }
        let inv = 1.0 / dir[a];
        let (mut lo, mut hi) = ((0.0 - origin[a]) * inv, (1.0 - origin[a]) * inv);
        if lo > hi {
            std::mem::swap(&mut lo, &mut hi);
        }
        t0 = t0.max(lo);
        t1 = t1.min(hi);
    }
    (t0 <= t1).then_some((t0, t1))
}

/// Marches from `origin` along unit `dir` (normalized coordinates) to the
/// first inside sample, then bisects the last step `bisect_iters` times.
pub fn raycast_iso<F: ScalarField + ?Sized>(
    field: &F,
    origin: Vec3,
    dir: Vec3,
    params: &RaycastParams,
) -> Result<Option<RayHit>, IsoError> {
    let len = dir.norm();
    if !((len - 1.0).abs() <= 1e-6) {
        return Err(IsoError::NonUnitDirection(len));
    }
    let g = field.geometry();
    let step = params.step.unwrap_or_else(|| g.phi().min() / 2.0);
    if !(step.is_finite() && step > 0.0) {
        return Err(IsoError::BadStep(step));
    }
    let kernel = SmoothingKernel::new(params.kernel_n, g)?;
    let Some((t_enter, t_exit)) = unit_cube_span(origin, dir) else {
        return Ok(None);
    };
    let at = |t: f64| origin + dir * t;

    let (t_hit, bracket) = if inside(field, at(t_enter)) {
        (t_enter, 0.0)
    } else {
        let mut t = t_enter;
        loop {
            if t >= t_exit {
                return Ok(None);
            }
            let t_next = (t + step).min(t_exit);
            if inside(field, at(t_next)) {
                let (mut lo, mut hi) = (t, t_next);
                for _ in 0..params.bisect_iters {
                    let mid = 0.5 * (lo + hi);
                    if inside(field, at(mid)) {
                        hi = mid;
                    } else {
                        lo = mid;
                    }
                }
                break (0.5 * (lo + hi), hi - lo);
            }
            t = t_next;
        }
    };

    let p_iso = at(t_hit).map(|v| v.clamp(0.0, 1.0));
    let (eta, degenerate, clamped, gradient_evals) = match smoothed_normal(field, p_iso, &kernel) {
        Ok(n) => (n.eta, false, n.clamped, n.gradient_evals),
        Err(IsoError::DegenerateNormal) => (dir, true, false, kernel.n().pow(3)),
        Err(e) => return Err(e),
    };
    Ok(Some(RayHit { p_iso, t_hit, eta, bracket, degenerate, clamped, gradient_evals }))
}

/// Orthographic camera in world millimetres.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrthoCamera {
    pub center: Vec3,
    pub view_dir: Vec3,
    pub up: Vec3,
    pub width_mm: f64,
    pub height_mm: f64,
}

impl OrthoCamera {
    /// Orthonormal (right, up, forward).
    pub fn basis(&self) -> Result<(Vec3, Vec3, Vec3), IsoError> {
        let fwd_len = self.view_dir.norm();
        if !(fwd_len.is_finite() && fwd_len > 0.0) {
            return Err(IsoError::DegenerateCamera("zero view direction"));
        }
        let forward = self.view_dir / fwd_len;
        let right = forward.cross(&self.up);
        let rl = right.norm();
        if !(rl.is_finite() && rl > 1e-9) {
            return Err(IsoError::DegenerateCamera("up vector parallel to view direction"));
        }
        let right = right / rl;
        let up = right.cross(&forward);
        if !(self.width_mm > 0.0 && self.height_mm > 0.0) {
            return Err(IsoError::DegenerateCamera("non-positive image extent"));
        }
        Ok((right, up, forward))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OrthoMaps {
    pub width: usize,
    pub height: usize,
    /// Distance along the view direction in mm; `f64::INFINITY` on a miss.
    pub depth: Vec<f64>,
    pub labels: Vec<u16>,
    /// Zero vector on a miss.
    pub normals: Vec<Vec3>,
}

impl OrthoMaps {
    pub fn hits(&self) -> usize {
        self.depth.iter().filter(|d| d.is_finite()).count()
    }
}

/// Label of the occupied trilinear neighbor nearest to `p` (normalized coords).
fn label_near(vol: &LabeledVolume, p: Vec3) -> u16 {
    let g = vol.geometry();
    let v = g.normalized_to_voxel(p);
    let mut best: Option<(f64, VoxelIndex, u16)> = None;
    for dz in 0..2 {
        for dy in 0..2 {
            for dx in 0..2 {
                let c = [v.x.floor() + dx as f64, v.y.floor() + dy as f64, v.z.floor() + dz as f64];
                if (0..3).any(|a| c[a] < 0.0 || c[a] > (g.dims[a] - 1) as f64) {
                    continue;
                }
                let idx = VoxelIndex::new(c[0] as u32, c[1] as u32, c[2] as u32);
                let label = vol.get(idx);
                if label == 0 {
                    continue;
                }
                let d = (idx.as_vec3() - v).norm_squared();
                let better = match best {
                    None => true,
                    Some((bd, bi, _)) => d < bd || (d == bd && idx < bi),
                };
                if better {
                    best = Some((d, idx, label));
                }
            }
        }
    }
    best.map(|b| b.2).unwrap_or(0)
}

/// One orthographic ray per pixel; row-major, row 0 at the top of the image.
pub fn render_ortho_maps(
    vol: &LabeledVolume,
    camera: &OrthoCamera,
    res: (usize, usize),
    params: &RaycastParams,
) -> Result<OrthoMaps, IsoError> {
    let (w, h) = res;
    if w == 0 || h == 0 {
        return Err(IsoError::BadResolution);
    }
    let (right, up, forward) = camera.basis()?;
    let g = *vol.geometry();
    let scale = Vec3::new(
        1.0 / (g.spacing[0] * g.dims[0] as f64),
        1.0 / (g.spacing[1] * g.dims[1] as f64),
        1.0 / (g.spacing[2] * g.dims[2] as f64),
    );
    let dir_n = forward.component_mul(&scale);
    // Normalized units per world mm along the view direction.
    let stretch = dir_n.norm();
    let dir_n = dir_n / stretch;
    // Validate params once so per-pixel errors cannot be step/kernel errors.
    SmoothingKernel::new(params.kernel_n, &g)?;

    let pixels: Vec<(f64, u16, Vec3)> = (0..w * h)
        .into_par_iter()
        .map(|n| {
            let (x, y) = (n % w, n / w);
            let u = ((x as f64 + 0.5) / w as f64 - 0.5) * camera.width_mm;
            let v = (0.5 - (y as f64 + 0.5) / h as f64) * camera.height_mm;
            let origin_w = camera.center + right * u + up * v;
            let origin_n = g.world_to_normalized(origin_w);
            match raycast_iso(vol, origin_n, dir_n, params) {
                Ok(Some(hit)) => (hit.t_hit / stretch, label_near(vol, hit.p_iso), hit.eta),
                _ => (f64::INFINITY, 0, Vec3::zeros()),
            }
        })
        .collect();

    let mut maps = OrthoMaps {
        width: w,
        height: h,
        depth: Vec::with_capacity(w * h),
        labels: Vec::with_capacity(w * h),
        normals: Vec::with_capacity(w * h),
    };
    for (d, l, n) in pixels {
        maps.depth.push(d);
        maps.labels.push(l);
        maps.normals.push(n);
    }
    Ok(maps)
}

fn image_err(path: &Path, e: impl std::fmt::Display) -> IsoError {
    IsoError::Image { path: path.display().to_string(), reason: e.to_string() }
}

/// 16-bit grayscale depth image in units of 0.01 mm; misses are 65535.
pub fn write_depth_png(maps: &OrthoMaps, path: &Path) -> Result<(), IsoError> {
    let img: ImageBuffer<Luma<u16>, Vec<u16>> = ImageBuffer::from_fn(maps.width as u32, maps.height as u32, |x, y| {
        let d = maps.depth[y as usize * maps.width + x as usize];
        Luma([quantize_depth(d)])
    });
    img.save_with_format(path, image::ImageFormat::Png).map_err(|e| image_err(path, e))
}

pub fn quantize_depth(depth_mm: f64) -> u16 {
    if !depth_mm.is_finite() {
        return DEPTH_PNG_MISS;
    }
    (depth_mm * DEPTH_PNG_UNITS_PER_MM).round().clamp(0.0, (DEPTH_PNG_MISS - 1) as f64) as u16
}

/// RGB label image colored by segment; misses and unknown labels are black.
pub fn write_label_png(maps: &OrthoMaps, segments: &SegmentTable, path: &Path) -> Result<(), IsoError> {
    let img = RgbImage::from_fn(maps.width as u32, maps.height as u32, |x, y| {
        let l = maps.labels[y as usize * maps.width + x as usize];
        Rgb(segments.get(l).map(|s| s.rgb8()).unwrap_or([0, 0, 0]))
    });
    img.save_with_format(path, image::ImageFormat::Png).map_err(|e| image_err(path, e))
}

/// Normals packed as `(n + 1) / 2 * 255` per channel.
pub fn write_normal_png(maps: &OrthoMaps, path: &Path) -> Result<(), IsoError> {
    let img = RgbImage::from_fn(maps.width as u32, maps.height as u32, |x, y| {
        let n = maps.normals[y as usize * maps.width + x as usize];
        Rgb([0, 1, 2].map(|a| ((n[a] + 1.0) * 0.5 * 255.0).round().clamp(0.0, 255.0) as u8))
    });
    img.save_with_format(path, image::ImageFormat::Png).map_err(|e| image_err(path, e))
}
