//! NRRD and segmented NRRD (3D Slicer `.seg.nrrd`) reading and writing.
//!
//! Supported subset: 3D grids, `raw` or `gzip` encoding, little-endian
//! `uint8`/`uint16`/`int16`/`float32` samples, attached data only. Segmented
//! files must use the label-map layout (one grid, incremental labels);
//! one-hot layer stacks are rejected.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;
use thiserror::Error;

use crate::volume::{
    GridGeometry, IntensityVolume, LabeledVolume, Segment, SegmentTable, Volume, VolumeError, DEFAULT_SEGMENT_COLOR,
};

/// Key/value pair the writer uses to persist an intensity volume's iso value.
const ISO_KEY: &str = "voxdrill_iso";
const DEFAULT_ISO: f64 = 0.5;

#[derive(Debug, Error)]
pub enum NrrdError {
    #[error("not a NRRD file: {0}")]
    Magic(String),
    #[error("malformed header field `{field}`: {reason}")]
    Header { field: String, reason: String },
    #[error("unsupported {feature}: {value}")]
    Unsupported { feature: &'static str, value: String },
    #[error("payload truncated: expected {expected} bytes, found {actual} ({} bytes missing)", expected - actual)]
    Truncated { expected: usize, actual: usize },
    #[error("payload has {} trailing bytes beyond the expected {expected}", actual - expected)]
    TrailingData { expected: usize, actual: usize },
    #[error("segment metadata field `{field}`: {reason}")]
    Segment { field: String, reason: String },
    #[error("conflicting segments: label value {label} used by Segment{first} and Segment{second}")]
    SegmentConflict { label: u16, first: usize, second: usize },
    #[error("value {value} does not fit in {scalar}")]
    OutOfRange { value: f64, scalar: &'static str },
    #[error(transparent)]
    Volume(#[from] VolumeError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

fn header_err(field: &str, reason: impl Into<String>) -> NrrdError {
    NrrdError::Header { field: field.to_string(), reason: reason.into() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScalarType {
    U8,
    U16,
    I16,
    F32,
}

impl ScalarType {
    pub const ALL: [ScalarType; 4] = [ScalarType::U8, ScalarType::U16, ScalarType::I16, ScalarType::F32];

    fn parse(s: &str) -> Result<Self, NrrdError> {
        match s.trim() {
            "uchar" | "unsigned char" | "uint8" | "uint8_t" => Ok(Self::U8),
            "ushort" | "unsigned short" | "unsigned short int" | "uint16" | "uint16_t" => Ok(Self::U16),
            "short" | "short int" | "signed short" | "signed short int" | "int16" | "int16_t" => Ok(Self::I16),
            "float" | "float32" => Ok(Self::F32),
            other => Err(NrrdError::Unsupported { feature: "element type", value: other.to_string() }),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::U8 => "uint8",
            Self::U16 => "uint16",
            Self::I16 => "int16",
            Self::F32 => "float",
        }
    }

    pub fn size(self) -> usize {
        match self {
            Self::U8 => 1,
            Self::U16 | Self::I16 => 2,
            Self::F32 => 4,
        }
    }

    fn is_integer(self) -> bool {
        self != Self::F32
    }

    fn max_value(self) -> f64 {
        match self {
            Self::U8 => u8::MAX as f64,
            Self::U16 => u16::MAX as f64,
            Self::I16 => i16::MAX as f64,
            Self::F32 => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Encoding {
    Raw,
    Gzip,
}

impl Encoding {
    pub const ALL: [Encoding; 2] = [Encoding::Raw, Encoding::Gzip];

    fn parse(s: &str) -> Result<Self, NrrdError> {
        match s.trim() {
            "raw" => Ok(Self::Raw),
            "gzip" | "gz" => Ok(Self::Gzip),
            other => Err(NrrdError::Unsupported { feature: "encoding", value: other.to_string() }),
        }
    }

    fn name(self) -> &'static str {
        match self {
            Self::Raw => "raw",
            Self::Gzip => "gzip",
        }
    }
}

/// Parsed header: standard fields (lower-cased names) and `key:=value` pairs.
#[derive(Debug, Default, Clone)]
pub struct NrrdHeader {
    pub fields: BTreeMap<String, String>,
    pub key_values: BTreeMap<String, String>,
}

impl NrrdHeader {
    fn field(&self, name: &str) -> Option<&str> {
        self.fields.get(name).map(String::as_str)
    }

    fn require(&self, name: &str) -> Result<&str, NrrdError> {
        self.field(name).ok_or_else(|| header_err(name, "required field missing"))
    }
}

/// Splits the file into header and payload. The header ends at the first blank line.
fn split_header(bytes: &[u8]) -> Result<(NrrdHeader, &[u8]), NrrdError> {
    let mut pos = 0;
    let mut header = NrrdHeader::default();
    let mut first = true;
    loop {
        let Some(nl) = bytes[pos..].iter().position(|&b| b == b'\n') else {
            if first {
                return Err(NrrdError::Magic("missing magic line".into()));
            }
            return Err(header_err("header", "no blank line separating header from data"));
        };
        let raw = &bytes[pos..pos + nl];
        pos += nl + 1;
        let line =
            std::str::from_utf8(raw).map_err(|_| header_err("header", "non UTF-8 header line"))?.trim_end_matches('\r');
        if first {
            first = false;
            let ok = line.len() == 8 && line.starts_with("NRRD000") && line.as_bytes()[7].is_ascii_digit();
            if !ok {
                let shown: String = line.chars().take(16).collect();
                return Err(NrrdError::Magic(format!("bad magic line {shown:?}")));
            }
            continue;
        }
        if line.is_empty() {
            return Ok((header, &bytes[pos..]));
        }
        if line.starts_with('#') {
            continue;
        }
        let kv = line.find(":=");
        let field = line.find(": ");
        match (kv, field) {
            (Some(a), b) if b.is_none_or(|b| a < b) => {
                header.key_values.insert(line[..a].to_string(), line[a + 2..].to_string());
            }
            (_, Some(b)) => {
                header.fields.insert(line[..b].trim().to_ascii_lowercase(), line[b + 2..].trim().to_string());
            }
            _ => return Err(header_err(line, "expected `field: value` or `key:=value`")),
        }
    }
}

fn parse_vector(field: &str, s: &str) -> Result<Option<[f64; 3]>, NrrdError> {
    let s = s.trim();
    if s == "none" {
        return Ok(None);
    }
    let inner = s
        .strip_prefix('(')
        .and_then(|r| r.strip_suffix(')'))
        .ok_or_else(|| header_err(field, format!("expected (x,y,z), got {s:?}")))?;
    let parts: Vec<f64> = inner
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| header_err(field, format!("non-numeric vector {s:?}")))?;
    if parts.len() != 3 || parts.iter().any(|v| !v.is_finite()) {
        return Err(header_err(field, format!("expected three finite components, got {s:?}")));
    }
    Ok(Some([parts[0], parts[1], parts[2]]))
}

/// Splits `(a,b,c) (d,e,f) none` into its vector tokens.
fn vector_tokens(s: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut rest = s.trim();
    while !rest.is_empty() {
        if rest.starts_with('(') {
            let end = rest.find(')').map(|e| e + 1).unwrap_or(rest.len());
            out.push(&rest[..end]);
            rest = rest[end..].trim_start();
        } else {
            let end = rest.find(char::is_whitespace).unwrap_or(rest.len());
            out.push(&rest[..end]);
            rest = rest[end..].trim_start();
        }
    }
    out
}

fn has_segment_keys(header: &NrrdHeader) -> bool {
    header.key_values.keys().any(|k| k.starts_with("Segment0_"))
}

fn geometry_from(header: &NrrdHeader) -> Result<GridGeometry, NrrdError> {
    let dimension: usize =
        header.require("dimension")?.parse().map_err(|_| header_err("dimension", "not an integer"))?;
    if dimension != 3 {
        if dimension == 4 && has_segment_keys(header) {
            return Err(NrrdError::Unsupported {
                feature: "segmentation layout",
                value: "one-hot multi-layer grid (dimension 4); export as a label map".into(),
            });
        }
        return Err(header_err("dimension", format!("only 3D volumes are supported, got {dimension}")));
    }
    let sizes: Vec<usize> = header
        .require("sizes")?
        .split_whitespace()
        .map(str::parse)
        .collect::<Result<_, _>>()
        .map_err(|_| header_err("sizes", "non-integer size"))?;
    if sizes.len() != 3 || sizes.contains(&0) {
        return Err(header_err("sizes", format!("expected three positive sizes, got {sizes:?}")));
    }

    let spacing = if let Some(dirs) = header.field("space directions") {
        let tokens = vector_tokens(dirs);
        if tokens.len() != 3 {
            return Err(header_err("space directions", format!("expected 3 vectors, got {}", tokens.len())));
        }
        let mut spacing = [0.0; 3];
        for (axis, tok) in tokens.iter().enumerate() {
            let v = parse_vector("space directions", tok)?
                .ok_or_else(|| header_err("space directions", "spatial axis declared `none`"))?;
            spacing[axis] = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        }
        spacing
    } else if let Some(sp) = header.field("spacings") {
        let v: Vec<f64> = sp
            .split_whitespace()
            .map(str::parse)
            .collect::<Result<_, _>>()
            .map_err(|_| header_err("spacings", "non-numeric spacing"))?;
        if v.len() != 3 {
            return Err(header_err("spacings", "expected three values"));
        }
        [v[0], v[1], v[2]]
    } else {
        [1.0; 3]
    };

    let origin = match header.field("space origin") {
        Some(o) => parse_vector("space origin", o)?.unwrap_or([0.0; 3]),
        None => [0.0; 3],
    };

    GridGeometry::new([sizes[0], sizes[1], sizes[2]], spacing, origin).map_err(|e| match e {
        VolumeError::BadSpacing { .. } => header_err("space directions", e.to_string()),
        other => NrrdError::Volume(other),
    })
}

fn decode_payload(payload: &[u8], encoding: Encoding, expected: usize) -> Result<Vec<u8>, NrrdError> {
    let data = match encoding {
        Encoding::Raw => payload.to_vec(),
        Encoding::Gzip => {
            let mut out = Vec::with_capacity(expected);
            let mut dec = GzDecoder::new(payload);
            if let Err(e) = dec.read_to_end(&mut out) {
                if e.kind() == std::io::ErrorKind::UnexpectedEof || out.len() < expected {
                    return Err(NrrdError::Truncated { expected, actual: out.len() });
                }
                return Err(NrrdError::Io(e));
            }
            out
        }
    };
    if data.len() < expected {
        return Err(NrrdError::Truncated { expected, actual: data.len() });
    }
    if data.len() > expected {
        return Err(NrrdError::TrailingData { expected, actual: data.len() });
    }
    Ok(data)
}

fn samples_as_f64(data: &[u8], scalar: ScalarType) -> Vec<f64> {
    match scalar {
        ScalarType::U8 => data.iter().map(|&b| b as f64).collect(),
        ScalarType::U16 => data.chunks_exact(2).map(|c| u16::from_le_bytes([c[0], c[1]]) as f64).collect(),
        ScalarType::I16 => data.chunks_exact(2).map(|c| i16::from_le_bytes([c[0], c[1]]) as f64).collect(),
        ScalarType::F32 => data.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64).collect(),
    }
}

/// Decodes a NRRD byte stream into a label volume (integer data with
/// `Segment0_*` metadata) or a min-max normalized intensity volume.
pub fn parse_nrrd(bytes: &[u8]) -> Result<Volume, NrrdError> {
    let (header, payload) = split_header(bytes)?;
    if header.fields.contains_key("data file") || header.fields.contains_key("datafile") {
        return Err(NrrdError::Unsupported { feature: "detached data", value: "data file".into() });
    }
    let geometry = geometry_from(&header)?;
    let scalar = ScalarType::parse(header.require("type")?)?;
    let encoding = Encoding::parse(header.require("encoding")?)?;
    if scalar.size() > 1 {
        if let Some(endian) = header.field("endian") {
            match endian {
                "little" => {}
                "big" => return Err(NrrdError::Unsupported { feature: "endianness", value: "big".into() }),
                other => return Err(header_err("endian", format!("unknown value {other:?}"))),
            }
        }
    }
    if let Some(skip) = header.field("byte skip") {
        if skip.trim() != "0" {
            return Err(NrrdError::Unsupported { feature: "byte skip", value: skip.to_string() });
        }
    }

    let expected = geometry.voxel_count() * scalar.size();
    let data = decode_payload(payload, encoding, expected)?;
    let samples = samples_as_f64(&data, scalar);

    if scalar.is_integer() && has_segment_keys(&header) {
        let segments = parse_seg_metadata(&header.key_values)?;
        let mut labels = Vec::with_capacity(samples.len());
        for v in samples {
            if !(0.0..=u16::MAX as f64).contains(&v) {
                return Err(NrrdError::Segment { field: "labels".into(), reason: format!("negative label {v}") });
            }
            labels.push(v as u16);
        }
        return Ok(Volume::Labeled(LabeledVolume::new(geometry, labels, segments)?));
    }

    let (min, max) = samples.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if !min.is_finite() || !max.is_finite() {
        return Err(NrrdError::Volume(VolumeError::NonFinite));
    }
    let range = max - min;
    let values =
        if range > 0.0 { samples.iter().map(|&v| (v - min) / range).collect() } else { vec![0.0; samples.len()] };
    let iso = match header.key_values.get(ISO_KEY) {
        Some(s) => s.trim().parse().map_err(|_| header_err(ISO_KEY, "not a number"))?,
        None => DEFAULT_ISO,
    };
    Ok(Volume::Intensity(IntensityVolume::new(geometry, values, iso)?))
}

pub fn read_nrrd_file(path: impl AsRef<Path>) -> Result<Volume, NrrdError> {
    let bytes = std::fs::read(path)?;
    parse_nrrd(&bytes)
}

/// Builds a segment table from `Segment<N>_*` key/value pairs, N = 0, 1, 2, …
/// until the first index with neither a name nor a label value.
pub fn parse_seg_metadata(fields: &BTreeMap<String, String>) -> Result<SegmentTable, NrrdError> {
    let mut table = SegmentTable::new();
    let mut owner: BTreeMap<u16, usize> = BTreeMap::new();
    for n in 0usize.. {
        let key = |suffix: &str| format!("Segment{n}_{suffix}");
        let name = fields.get(&key("Name"));
        let label_value = fields.get(&key("LabelValue"));
        if name.is_none() && label_value.is_none() {
            break;
        }
        let label: u16 = match label_value {
            Some(v) => v.trim().parse().map_err(|_| NrrdError::Segment {
                field: key("LabelValue"),
                reason: format!("not a label value: {v:?}"),
            })?,
            None => u16::try_from(n + 1).unwrap_or(u16::MAX),
        };
        if label == 0 {
            return Err(NrrdError::Segment { field: key("LabelValue"), reason: "label 0 is reserved".into() });
        }
        if let Some(&first) = owner.get(&label) {
            return Err(NrrdError::SegmentConflict { label, first, second: n });
        }
        owner.insert(label, n);

        let color = match fields.get(&key("Color")) {
            Some(c) => {
                let parts: Vec<f64> = c
                    .split_whitespace()
                    .map(str::parse)
                    .collect::<Result<_, _>>()
                    .map_err(|_| NrrdError::Segment { field: key("Color"), reason: format!("bad color {c:?}") })?;
                if parts.len() != 3 {
                    return Err(NrrdError::Segment { field: key("Color"), reason: "expected three components".into() });
                }
                [parts[0], parts[1], parts[2]]
            }
            None => DEFAULT_SEGMENT_COLOR,
        };
        let mut segment = Segment::new(name.cloned().unwrap_or_else(|| format!("Segment_{n}")), color);
        if let Some(tags) = fields.get(&key("Tags")) {
            segment.sensitive = tags.split('|').any(|t| t.trim() == "Sensitive:1");
        }
        if let Some(layer) = fields.get(&key("Layer")) {
            if layer.trim() != "0" {
                return Err(NrrdError::Unsupported {
                    feature: "segmentation layout",
                    value: format!("segment {n} on layer {layer}; only single-layer label maps are supported"),
                });
            }
        }
        table.insert(label, segment)?;
    }
    Ok(table)
}

fn write_header(out: &mut Vec<u8>, g: &GridGeometry, scalar: ScalarType, encoding: Encoding) {
    let [sx, sy, sz] = g.spacing;
    let [ox, oy, oz] = g.origin;
    let _ = write!(
        out,
        "NRRD0004\n\
         # Complete NRRD file format specification at:\n\
         # http://teem.sourceforge.net/nrrd/format.html\n\
         type: {}\n\
         dimension: 3\n\
         space: left-posterior-superior\n\
         sizes: {} {} {}\n\
         space directions: ({sx},0,0) (0,{sy},0) (0,0,{sz})\n\
         kinds: domain domain domain\n\
         endian: little\n\
         encoding: {}\n\
         space origin: ({ox},{oy},{oz})\n",
        scalar.name(),
        g.dims[0],
        g.dims[1],
        g.dims[2],
        encoding.name(),
    );
}

fn encode_payload(out: &mut Vec<u8>, data: Vec<u8>, encoding: Encoding) -> Result<(), NrrdError> {
    out.push(b'\n');
    match encoding {
        Encoding::Raw => out.extend_from_slice(&data),
        Encoding::Gzip => {
            let mut enc = GzEncoder::new(Vec::new(), Compression::default());
            enc.write_all(&data)?;
            out.extend_from_slice(&enc.finish()?);
        }
    }
    Ok(())
}

fn encode_samples<I: Iterator<Item = f64>>(values: I, scalar: ScalarType, n: usize) -> Result<Vec<u8>, NrrdError> {
    let mut data = Vec::with_capacity(n * scalar.size());
    for v in values {
        match scalar {
            ScalarType::U8 => {
                if !(0.0..=255.0).contains(&v) {
                    return Err(NrrdError::OutOfRange { value: v, scalar: "uint8" });
                }
                data.push(v as u8);
            }
            ScalarType::U16 => {
                if !(0.0..=65535.0).contains(&v) {
                    return Err(NrrdError::OutOfRange { value: v, scalar: "uint16" });
                }
                data.extend_from_slice(&(v as u16).to_le_bytes());
            }
            ScalarType::I16 => {
                if !(-32768.0..=32767.0).contains(&v) {
                    return Err(NrrdError::OutOfRange { value: v, scalar: "int16" });
                }
                data.extend_from_slice(&(v as i16).to_le_bytes());
            }
            ScalarType::F32 => data.extend_from_slice(&(v as f32).to_le_bytes()),
        }
    }
    Ok(data)
}

/// Serializes a label volume as a segmented NRRD (label-map layout).
/// Writing labels as `float` is rejected: float data never parses back as labels.
pub fn write_labeled(vol: &LabeledVolume, scalar: ScalarType, encoding: Encoding) -> Result<Vec<u8>, NrrdError> {
    if !scalar.is_integer() {
        return Err(NrrdError::Unsupported { feature: "label element type", value: scalar.name().into() });
    }
    let mut out = Vec::new();
    write_header(&mut out, vol.geometry(), scalar, encoding);
    for (n, (label, seg)) in vol.segments().iter().enumerate() {
        let [r, g, b] = seg.color;
        let _ = write!(
            out,
            "Segment{n}_Color:={r} {g} {b}\n\
             Segment{n}_ID:=Segment_{label}\n\
             Segment{n}_LabelValue:={label}\n\
             Segment{n}_Layer:=0\n\
             Segment{n}_Name:={}\n",
            seg.name
        );
        if seg.sensitive {
            let _ = writeln!(out, "Segment{n}_Tags:=Sensitive:1|");
        }
    }
    let data = encode_samples(vol.labels().iter().map(|&l| l as f64), scalar, vol.labels().len())?;
    encode_payload(&mut out, data, encoding)?;
    Ok(out)
}

/// Serializes an intensity volume. Integer types store `round(v * max)`;
/// the iso value travels as a key/value pair.
pub fn write_intensity(vol: &IntensityVolume, scalar: ScalarType, encoding: Encoding) -> Result<Vec<u8>, NrrdError> {
    let mut out = Vec::new();
    write_header(&mut out, vol.geometry(), scalar, encoding);
    let _ = writeln!(out, "{ISO_KEY}:={}", vol.iso_value());
    let scale = scalar.max_value();
    let values = vol.values().iter().map(|&v| if scalar.is_integer() { (v * scale).round() } else { v });
    let data = encode_samples(values, scalar, vol.values().len())?;
    encode_payload(&mut out, data, encoding)?;
    Ok(out)
}

pub fn write_labeled_file(
    vol: &LabeledVolume,
    path: impl AsRef<Path>,
    scalar: ScalarType,
    encoding: Encoding,
) -> Result<(), NrrdError> {
    std::fs::write(path, write_labeled(vol, scalar, encoding)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::VoxelIndex;

    fn raw_nrrd(header_extra: &str, ty: &str, payload: &[u8]) -> Vec<u8> {
        let mut v = format!(
            "NRRD0004\ntype: {ty}\ndimension: 3\nsizes: 2 2 2\nencoding: raw\nendian: little\n{header_extra}\n"
        )
        .into_bytes();
        v.extend_from_slice(payload);
        v
    }

    #[test]
    fn zero_uint8_volume_is_all_zero_intensity() {
        let v = parse_nrrd(&raw_nrrd("", "uint8", &[0; 8])).unwrap();
        let Volume::Intensity(v) = v else { panic!("expected intensity") };
        assert_eq!(v.dims(), [2, 2, 2]);
        assert!(v.values().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn spacing_from_space_directions() {
        let v = parse_nrrd(&raw_nrrd("space directions: (0.2,0,0) (0,0.2,0) (0,0,0.2)\n", "uint8", &[0; 8])).unwrap();
        assert_eq!(v.geometry().spacing, [0.2, 0.2, 0.2]);
    }

    #[test]
    fn oblique_direction_uses_norm() {
        let v = parse_nrrd(&raw_nrrd("space directions: (3,4,0) (0,1,0) (0,0,2)\n", "uint8", &[0; 8])).unwrap();
        assert_eq!(v.geometry().spacing, [5.0, 1.0, 2.0]);
    }

    #[test]
    fn intensity_is_min_max_normalized() {
        let payload: Vec<u8> = (0..8).map(|i| 10 + i * 10).collect();
        let Volume::Intensity(v) = parse_nrrd(&raw_nrrd("", "uchar", &payload)).unwrap() else { panic!() };
        assert_eq!(v.values()[0], 0.0);
        assert_eq!(v.values()[7], 1.0);
        assert!((v.values()[1] - 1.0 / 7.0).abs() < 1e-15);
    }

    #[test]
    fn truncated_payload_reports_missing_bytes() {
        let err = parse_nrrd(&raw_nrrd("", "uint16", &[0; 10])).unwrap_err();
        assert!(matches!(err, NrrdError::Truncated { expected: 16, actual: 10 }));
        assert!(err.to_string().contains("6 bytes missing"), "{err}");
    }

    #[test]
    fn bad_magic_and_header_errors_name_field() {
        assert!(matches!(parse_nrrd(b"P6\n1 1\n"), Err(NrrdError::Magic(_))));
        let bad = b"NRRD0004\ntype: uint8\ndimension: 2\nsizes: 2 2\nencoding: raw\n\n\0\0\0\0";
        match parse_nrrd(bad) {
            Err(NrrdError::Header { field, .. }) => assert_eq!(field, "dimension"),
            other => panic!("{other:?}"),
        }
        let bad = b"NRRD0004\ntype: uint8\ndimension: 3\nsizes: 2 x 2\nencoding: raw\n\n";
        match parse_nrrd(bad) {
            Err(NrrdError::Header { field, .. }) => assert_eq!(field, "sizes"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unsupported_type_encoding_and_endianness() {
        assert!(matches!(
            parse_nrrd(&raw_nrrd("", "double", &[0; 64])),
            Err(NrrdError::Unsupported { feature: "element type", .. })
        ));
        let txt = b"NRRD0004\ntype: uint8\ndimension: 3\nsizes: 1 1 1\nencoding: ascii\n\n0\n";
        assert!(matches!(parse_nrrd(txt), Err(NrrdError::Unsupported { feature: "encoding", .. })));
        let big = b"NRRD0004\ntype: uint16\ndimension: 3\nsizes: 1 1 1\nendian: big\nencoding: raw\n\n\0\0";
        assert!(matches!(parse_nrrd(big), Err(NrrdError::Unsupported { feature: "endianness", .. })));
    }

    #[test]
    fn one_hot_layout_rejected() {
        let s = b"NRRD0004\ntype: uint8\ndimension: 4\nsizes: 2 1 1 1\nencoding: raw\nSegment0_Name:=A\n\n\0\0";
        assert!(matches!(parse_nrrd(s), Err(NrrdError::Unsupported { feature: "segmentation layout", .. })));
    }

    #[test]
    fn seg_metadata_single_segment() {
        let fields: BTreeMap<String, String> =
            [("Segment0_Name", "Bone"), ("Segment0_LabelValue", "1"), ("Segment0_Color", "0.8 0.8 0.7")]
                .into_iter()
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .collect();
        let t = parse_seg_metadata(&fields).unwrap();
        assert_eq!(t.len(), 1);
        assert_eq!(t.get(1), Some(&Segment::new("Bone", [0.8, 0.8, 0.7])));
    }

    #[test]
    fn seg_metadata_empty_and_defaults() {
        assert!(parse_seg_metadata(&BTreeMap::new()).unwrap().is_empty());
        let fields = BTreeMap::from([("Segment0_Name".to_string(), "Tegmen".to_string())]);
        let t = parse_seg_metadata(&fields).unwrap();
        assert_eq!(t.get(1).unwrap().color, DEFAULT_SEGMENT_COLOR);
        assert!(!t.get(1).unwrap().sensitive);
    }

    #[test]
    fn seg_metadata_five_segments_enumerated() {
        let mut fields = BTreeMap::new();
        for n in 0..5 {
            fields.insert(format!("Segment{n}_Name"), format!("S{n}"));
            fields.insert(format!("Segment{n}_LabelValue"), format!("{}", n + 1));
        }
        let t = parse_seg_metadata(&fields).unwrap();
        let labels: Vec<u16> = t.iter().map(|(l, _)| l).collect();
        assert_eq!(labels, vec![1, 2, 3, 4, 5]);
    }

    #[test]
    fn seg_metadata_conflicts_and_bad_values() {
        let mk = |pairs: &[(&str, &str)]| -> BTreeMap<String, String> {
            pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
        };
        let dup = mk(&[
            ("Segment0_Name", "A"),
            ("Segment0_LabelValue", "3"),
            ("Segment1_Name", "B"),
            ("Segment1_LabelValue", "3"),
        ]);
        assert!(matches!(parse_seg_metadata(&dup), Err(NrrdError::SegmentConflict { label: 3, first: 0, second: 1 })));
        let nonnum = mk(&[("Segment0_Name", "A"), ("Segment0_LabelValue", "three")]);
        assert!(matches!(parse_seg_metadata(&nonnum), Err(NrrdError::Segment { .. })));
    }

    #[test]
    fn labeled_roundtrip_all_integer_types_and_encodings() {
        let g = GridGeometry::new([5, 4, 3], [0.2, 0.25, 0.5], [-10.5, 3.0, 7.25]).unwrap();
        let mut segs = SegmentTable::new()
            .with(1, Segment::new("Bone", [0.8, 0.8, 0.7]))
            .unwrap()
            .with(2, Segment::new("Facial Nerve", [1.0, 1.0, 0.0]))
            .unwrap()
            .with(7, Segment::new("Sigmoid Sinus", [0.1, 0.2, 0.9]))
            .unwrap();
        segs.set_sensitive(&[2].into());
        let labels: Vec<u16> = (0..60).map(|n| [0, 1, 2, 7][n % 4]).collect();
        let vol = LabeledVolume::new(g, labels, segs).unwrap();
        for scalar in [ScalarType::U8, ScalarType::U16, ScalarType::I16] {
            for enc in Encoding::ALL {
                let bytes = write_labeled(&vol, scalar, enc).unwrap();
                let Volume::Labeled(back) = parse_nrrd(&bytes).unwrap() else { panic!("{scalar:?} {enc:?}") };
                assert_eq!(back, vol, "{scalar:?} {enc:?}");
                assert_eq!(back.get(VoxelIndex::new(3, 0, 0)), 7);
            }
        }
        assert!(write_labeled(&vol, ScalarType::F32, Encoding::Raw).is_err());
    }

    #[test]
    fn gzip_truncation_detected() {
        let g = GridGeometry::new([8, 8, 8], [1.0; 3], [0.0; 3]).unwrap();
        let segs = SegmentTable::new().with(1, Segment::new("Bone", [0.8, 0.8, 0.7])).unwrap();
        let vol = LabeledVolume::new(g, (0..512).map(|n| (n % 2) as u16).collect(), segs).unwrap();
        let bytes = write_labeled(&vol, ScalarType::U8, Encoding::Gzip).unwrap();
        let cut = &bytes[..bytes.len() - 12];
        assert!(matches!(parse_nrrd(cut), Err(NrrdError::Truncated { .. })));
    }
}
