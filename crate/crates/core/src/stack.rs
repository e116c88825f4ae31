//! Label volume ⇄ image stack conversion.
//!
//! One image per z-slice (`slice_0000.png`, …), pixel (x, y) = voxel (i, j),
//! colored with the segment color and black for air. Spatial data and the
//! segment table go in a `volume.meta` sidecar of `key=value` lines:
//!
//! ```text
//! format=voxdrill-stack/1
//! dims=<nx> <ny> <nz>
//! spacing=<sx> <sy> <sz>
//! origin=<ox> <oy> <oz>
//! image_format=png|jpeg
//! slice_digits=<d>
//! segment.<label>.name=<text>
//! segment.<label>.color=<r> <g> <b>
//! segment.<label>.sensitive=true|false
//! ```
//!
//! PNG stacks re-import to the identical label grid as long as segment colors
//! are distinct after 8-bit quantization and none is pure black. JPEG is lossy
//! and only offered for viewing.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use image::{ImageFormat as ImgFormat, Rgb, RgbImage};
use thiserror::Error;

use crate::volume::{GridGeometry, LabeledVolume, Segment, SegmentTable, VolumeError};

pub const SIDECAR_NAME: &str = "volume.meta";
const STACK_FORMAT: &str = "voxdrill-stack/1";

#[derive(Debug, Error)]
pub enum StackError {
    #[error("unknown image format {0:?} (expected png or jpeg)")]
    UnknownFormat(String),
    #[error("i/o on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("image {path}: {source}")]
    Image { path: PathBuf, source: image::ImageError },
    #[error("sidecar key `{key}`: {reason}")]
    Sidecar { key: String, reason: String },
    #[error("slice {slice}: image is {got:?}, expected {expected:?}")]
    SliceSize { slice: usize, got: (u32, u32), expected: (u32, u32) },
    #[error("slice {slice} pixel ({x},{y}) color {color:?} matches no segment")]
    UnknownColor { slice: usize, x: u32, y: u32, color: [u8; 3] },
    #[error("segments {a} and {b} share color {color:?}; the stack cannot be decoded unambiguously")]
    AmbiguousColor { a: u16, b: u16, color: [u8; 3] },
    #[error(transparent)]
    Volume(#[from] VolumeError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImageFormat {
    Png,
    Jpeg,
}

impl ImageFormat {
    pub fn extension(self) -> &'static str {
        match self {
            ImageFormat::Png => "png",
            ImageFormat::Jpeg => "jpg",
        }
    }

    fn codec(self) -> ImgFormat {
        match self {
            ImageFormat::Png => ImgFormat::Png,
            ImageFormat::Jpeg => ImgFormat::Jpeg,
        }
    }

    fn name(self) -> &'static str {
        match self {
            ImageFormat::Png => "png",
            ImageFormat::Jpeg => "jpeg",
        }
    }
}

impl FromStr for ImageFormat {
    type Err = StackError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "png" => Ok(ImageFormat::Png),
            "jpeg" | "jpg" => Ok(ImageFormat::Jpeg),
            other => Err(StackError::UnknownFormat(other.to_string())),
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StackError + '_ {
    move |source| StackError::Io { path: path.to_path_buf(), source }
}

fn slice_digits(nz: usize) -> usize {
    nz.saturating_sub(1).to_string().len().max(4)
}

pub fn slice_file_name(k: usize, digits: usize, format: ImageFormat) -> String {
    format!("slice_{k:0digits$}.{}", format.extension())
}

fn render_sidecar(vol: &LabeledVolume, format: ImageFormat, digits: usize) -> String {
    let g = vol.geometry();
    let mut s = String::new();
    let _ = writeln!(s, "format={STACK_FORMAT}");
    let _ = writeln!(s, "dims={} {} {}", g.dims[0], g.dims[1], g.dims[2]);
    let _ = writeln!(s, "spacing={} {} {}", g.spacing[0], g.spacing[1], g.spacing[2]);
    let _ = writeln!(s, "origin={} {} {}", g.origin[0], g.origin[1], g.origin[2]);
    let _ = writeln!(s, "image_format={}", format.name());
    let _ = writeln!(s, "slice_digits={digits}");
    for (label, seg) in vol.segments().iter() {
        let [r, gg, b] = seg.color;
        let _ = writeln!(s, "segment.{label}.name={}", seg.name);
        let _ = writeln!(s, "segment.{label}.color={r} {gg} {b}");
        let _ = writeln!(s, "segment.{label}.sensitive={}", seg.sensitive);
    }
    s
}

/// Writes `c_z` slice images plus the sidecar into `dir` (created if needed).
/// Returns the number of image files written.
pub fn export_image_stack(vol: &LabeledVolume, dir: &Path, format: ImageFormat) -> Result<usize, StackError> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let [nx, ny, nz] = vol.dims();
    let digits = slice_digits(nz);
    let palette: BTreeMap<u16, [u8; 3]> = vol.segments().iter().map(|(l, s)| (l, s.rgb8())).collect();
    let labels = vol.labels();
    for k in 0..nz {
        let mut img = RgbImage::new(nx as u32, ny as u32);
        let base = k * nx * ny;
        for j in 0..ny {
            for i in 0..nx {
                let label = labels[base + j * nx + i];
                let c = if label == 0 { [0, 0, 0] } else { palette[&label] };
                img.put_pixel(i as u32, j as u32, Rgb(c));
            }
        }
        let path = dir.join(slice_file_name(k, digits, format));
        img.save_with_format(&path, format.codec())
            .map_err(|source| StackError::Image { path: path.clone(), source })?;
    }
    let sidecar = dir.join(SIDECAR_NAME);
    std::fs::write(&sidecar, render_sidecar(vol, format, digits)).map_err(io_err(&sidecar))?;
    Ok(nz)
}

fn sidecar_err(key: &str, reason: impl Into<String>) -> StackError {
    StackError::Sidecar { key: key.to_string(), reason: reason.into() }
}

fn parse_triple<T: FromStr>(key: &str, v: &str) -> Result<[T; 3], StackError> {
    let parts: Vec<T> = v
        .split_whitespace()
        .map(|p| p.parse::<T>())
        .collect::<Result<_, _>>()
        .map_err(|_| sidecar_err(key, format!("cannot parse {v:?}")))?;
    <[T; 3]>::try_from(parts).map_err(|_| sidecar_err(key, "expected three values"))
}

struct Sidecar {
    geometry: GridGeometry,
    format: ImageFormat,
    digits: usize,
    segments: SegmentTable,
}

fn parse_sidecar(text: &str) -> Result<Sidecar, StackError> {
    let mut kv = BTreeMap::new();
    for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
        let (k, v) = line.split_once('=').ok_or_else(|| sidecar_err(line, "expected key=value"))?;
        kv.insert(k.trim().to_string(), v.trim().to_string());
    }
    let get = |k: &str| kv.get(k).map(String::as_str).ok_or_else(|| sidecar_err(k, "missing"));
    if get("format")? != STACK_FORMAT {
        return Err(sidecar_err("format", format!("expected {STACK_FORMAT}")));
    }
    let dims = parse_triple::<usize>("dims", get("dims")?)?;
    let spacing = parse_triple::<f64>("spacing", get("spacing")?)?;
    let origin = parse_triple::<f64>("origin", get("origin")?)?;
    let geometry = GridGeometry::new(dims, spacing, origin)?;
    let format: ImageFormat = get("image_format")?.parse()?;
    let digits: usize = get("slice_digits")?.parse().map_err(|_| sidecar_err("slice_digits", "not an integer"))?;

    let mut segs: BTreeMap<u16, Segment> = BTreeMap::new();
    for (k, v) in kv.iter().filter(|(k, _)| k.starts_with("segment.")) {
        let mut parts = k.splitn(3, '.').skip(1);
        let (Some(label), Some(attr)) = (parts.next(), parts.next()) else {
            return Err(sidecar_err(k, "expected segment.<label>.<attr>"));
        };
        let label: u16 = label.parse().map_err(|_| sidecar_err(k, "label is not an integer"))?;
        let seg = segs.entry(label).or_insert_with(|| Segment::new(String::new(), [0.0; 3]));
        match attr {
            "name" => seg.name = v.clone(),
            "color" => seg.color = parse_triple::<f64>(k, v)?,
            "sensitive" => seg.sensitive = v.parse().map_err(|_| sidecar_err(k, "expected true or false"))?,
            _ => return Err(sidecar_err(k, "unknown attribute")),
        }
    }
    let mut segments = SegmentTable::new();
    for (label, seg) in segs {
        segments.insert(label, seg)?;
    }
    Ok(Sidecar { geometry, format, digits, segments })
}

/// Rebuilds a label volume from a stack written by [`export_image_stack`].
pub fn import_image_stack(dir: &Path) -> Result<LabeledVolume, StackError> {
    let sidecar_path = dir.join(SIDECAR_NAME);
    let text = std::fs::read_to_string(&sidecar_path).map_err(io_err(&sidecar_path))?;
    let meta = parse_sidecar(&text)?;

    let mut by_color: BTreeMap<[u8; 3], u16> = BTreeMap::new();
    by_color.insert([0, 0, 0], 0);
    for (label, seg) in meta.segments.iter() {
        let c = seg.rgb8();
        if let Some(&other) = by_color.get(&c) {
            return Err(StackError::AmbiguousColor { a: other, b: label, color: c });
        }
        by_color.insert(c, label);
    }

    let [nx, ny, nz] = meta.geometry.dims;
    let mut labels = Vec::with_capacity(meta.geometry.voxel_count());
    for k in 0..nz {
        let path = dir.join(slice_file_name(k, meta.digits, meta.format));
        let img = image::open(&path).map_err(|source| StackError::Image { path: path.clone(), source })?.to_rgb8();
        if img.dimensions() != (nx as u32, ny as u32) {
            return Err(StackError::SliceSize { slice: k, got: img.dimensions(), expected: (nx as u32, ny as u32) });
        }
        for (x, y, px) in img.enumerate_pixels() {
            let label = by_color.get(&px.0).ok_or(StackError::UnknownColor { slice: k, x, y, color: px.0 })?;
            labels.push(*label);
        }
    }
    Ok(LabeledVolume::new(meta.geometry, labels, meta.segments)?)
}
