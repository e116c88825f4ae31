//! Binary frames exchanged with interactive clients.
//!
//! Every frame is `u32 length (LE) | u8 tag | u8 version | payload`, where
//! `length` counts the tag, version and payload bytes. All integers and
//! floats are little-endian; strings are `u32 byte length + UTF-8`; lists
//! are `u32 count + items`. The layout of each payload is given in
//! `docs/wire-protocol.md`.

use thiserror::Error;

pub const PROTOCOL_VERSION: u8 = 1;
/// Largest accepted `length` field.
pub const MAX_FRAME_LEN: u32 = 16 * 1024 * 1024;

pub mod tag {
    pub const JOIN: u8 = 0x01;
    pub const HELLO: u8 = 0x02;
    pub const VOLUME_SNAPSHOT: u8 = 0x03;
    pub const INPUT_FRAME: u8 = 0x04;
    pub const STATE_FRAME: u8 = 0x05;
    pub const BURR_LIST: u8 = 0x06;
    pub const ACK: u8 = 0x07;
    pub const ERROR: u8 = 0x08;
}

/// Codes carried by `Error` frames.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u16)]
pub enum ErrorCode {
    Unsupported = 1,
    Busy = 2,
    SlowConsumer = 3,
    Unauthorized = 4,
    BadFrame = 5,
    BadInput = 6,
    Shutdown = 7,
}

impl ErrorCode {
    pub fn from_u16(v: u16) -> Option<Self> {
        use ErrorCode::*;
        [Unsupported, Busy, SlowConsumer, Unauthorized, BadFrame, BadInput, Shutdown]
            .into_iter()
            .find(|c| *c as u16 == v)
    }

    pub fn name(self) -> &'static str {
        match self {
            ErrorCode::Unsupported => "UNSUPPORTED",
            ErrorCode::Busy => "BUSY",
            ErrorCode::SlowConsumer => "SLOW_CONSUMER",
            ErrorCode::Unauthorized => "UNAUTHORIZED",
            ErrorCode::BadFrame => "BAD_FRAME",
            ErrorCode::BadInput => "BAD_INPUT",
            ErrorCode::Shutdown => "SHUTDOWN",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum WireError {
    #[error("truncated frame: need {need} bytes, have {have}")]
    Truncated { need: usize, have: usize },
    #[error("frame length {len} exceeds limit {max}")]
    TooLarge { len: u32, max: u32 },
    #[error("unsupported message tag {tag:#04x} version {version}")]
    Unsupported { tag: u8, version: u8 },
    #[error("malformed payload: {0}")]
    Malformed(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Controller = 0,
    Spectator = 1,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WireSegment {
    pub label: u16,
    pub name: String,
    pub color: [f64; 3],
    pub sensitive: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WireBurr {
    pub radius_mm: f64,
    /// 0 = cutting, 1 = diamond
    pub tip: u8,
    pub brr: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct WireWarning {
    pub label: u16,
    /// 0 = contact, 1 = removal
    pub kind: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WireRemoval {
    pub i: u32,
    pub j: u32,
    pub k: u32,
    pub label: u16,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hello {
    pub protocol_version: u16,
    pub digest: u64,
    pub dims: [u32; 3],
    pub spacing: [f64; 3],
    pub origin: [f64; 3],
    pub segments: Vec<WireSegment>,
    pub tick_rate_hz: f64,
    pub state_rate_hz: f64,
    pub role: Role,
    pub session_token: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InputFrame {
    pub seq: u64,
    pub tip_position: [f64; 3],
    /// `[w, x, y, z]`
    pub orientation: [f64; 4],
    pub pedal: f64,
    pub burr_id: u32,
    /// `[x, y, z, qw, qx, qy, qz]`
    pub camera: [f64; 7],
}

#[derive(Debug, Clone, PartialEq)]
pub struct StateFrame {
    pub seq: u64,
    pub tick: u64,
    pub t: f64,
    /// `[x, y, z, qw, qx, qy, qz]`
    pub drill: [f64; 7],
    pub f_haptic: [f64; 3],
    pub pitch: f64,
    /// Sequence number of the input applied on the last tick (0 = none yet).
    pub applied_input_seq: u64,
    pub burr_id: u32,
    pub warnings: Vec<WireWarning>,
    pub removals: Vec<WireRemoval>,
    /// Server grid digest after this frame's removals, sent periodically.
    pub digest: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum WireMessage {
    Join { role: Role, token: String },
    Hello(Hello),
    VolumeSnapshot { chunk_index: u32, chunk_total: u32, data: Vec<u8> },
    InputFrame(InputFrame),
    StateFrame(StateFrame),
    BurrList { burrs: Vec<WireBurr>, active: u32 },
    Ack { seq: u64 },
    Error { code: u16, text: String },
}

impl WireMessage {
    pub fn tag(&self) -> u8 {
        match self {
            WireMessage::Join { .. } => tag::JOIN,
            WireMessage::Hello(_) => tag::HELLO,
            WireMessage::VolumeSnapshot { .. } => tag::VOLUME_SNAPSHOT,
            WireMessage::InputFrame(_) => tag::INPUT_FRAME,
            WireMessage::StateFrame(_) => tag::STATE_FRAME,
            WireMessage::BurrList { .. } => tag::BURR_LIST,
            WireMessage::Ack { .. } => tag::ACK,
            WireMessage::Error { .. } => tag::ERROR,
        }
    }

    pub fn error(code: ErrorCode, text: impl Into<String>) -> Self {
        WireMessage::Error { code: code as u16, text: text.into() }
    }
}

struct Out(Vec<u8>);

impl Out {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u16(&mut self, v: u16) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64s(&mut self, v: &[f64]) {
        v.iter().for_each(|&x| self.f64(x));
    }
    fn bytes(&mut self, b: &[u8]) {
        self.u32(b.len() as u32);
        self.0.extend_from_slice(b);
    }
    fn str(&mut self, s: &str) {
        self.bytes(s.as_bytes());
    }
}

pub fn encode(msg: &WireMessage) -> Vec<u8> {
    let mut o = Out(vec![0, 0, 0, 0, msg.tag(), PROTOCOL_VERSION]);
    match msg {
        WireMessage::Join { role, token } => {
            o.u8(*role as u8);
            o.str(token);
        }
        WireMessage::Hello(h) => {
            o.u16(h.protocol_version);
            o.u64(h.digest);
            h.dims.iter().for_each(|&d| o.u32(d));
            o.f64s(&h.spacing);
            o.f64s(&h.origin);
            o.u32(h.segments.len() as u32);
            for s in &h.segments {
                o.u16(s.label);
                o.str(&s.name);
                o.f64s(&s.color);
                o.u8(s.sensitive as u8);
            }
            o.f64(h.tick_rate_hz);
            o.f64(h.state_rate_hz);
            o.u8(h.role as u8);
            o.str(&h.session_token);
        }
        WireMessage::VolumeSnapshot { chunk_index, chunk_total, data } => {
            o.u32(*chunk_index);
            o.u32(*chunk_total);
            o.bytes(data);
        }
        WireMessage::InputFrame(f) => {
            o.u64(f.seq);
            o.f64s(&f.tip_position);
            o.f64s(&f.orientation);
            o.f64(f.pedal);
            o.u32(f.burr_id);
            o.f64s(&f.camera);
        }
        WireMessage::StateFrame(f) => {
            o.u64(f.seq);
            o.u64(f.tick);
            o.f64(f.t);
            o.f64s(&f.drill);
            o.f64s(&f.f_haptic);
            o.f64(f.pitch);
            o.u64(f.applied_input_seq);
            o.u32(f.burr_id);
            o.u32(f.warnings.len() as u32);
            for w in &f.warnings {
                o.u16(w.label);
                o.u8(w.kind);
            }
            o.u32(f.removals.len() as u32);
            for r in &f.removals {
                o.u32(r.i);
                o.u32(r.j);
                o.u32(r.k);
                o.u16(r.label);
            }
            match f.digest {
                Some(d) => {
                    o.u8(1);
                    o.u64(d);
                }
                None => o.u8(0),
            }
        }
        WireMessage::BurrList { burrs, active } => {
            o.u32(burrs.len() as u32);
            for b in burrs {
                o.f64(b.radius_mm);
                o.u8(b.tip);
                o.f64(b.brr);
            }
            o.u32(*active);
        }
        WireMessage::Ack { seq } => o.u64(*seq),
        WireMessage::Error { code, text } => {
            o.u16(*code);
            o.str(text);
        }
    }
    let len = (o.0.len() - 4) as u32;
    o.0[..4].copy_from_slice(&len.to_le_bytes());
    o.0
}

struct In<'a> {
    b: &'a [u8],
    pos: usize,
}

impl<'a> In<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], WireError> {
        if self.b.len() - self.pos < n {
            return Err(WireError::Malformed(format!("payload ends {} bytes early", n - (self.b.len() - self.pos))));
        }
        let s = &self.b[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8, WireError> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16, WireError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<u32, WireError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64, WireError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64, WireError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64s<const N: usize>(&mut self) -> Result<[f64; N], WireError> {
        let mut a = [0.0; N];
        for v in &mut a {
            *v = self.f64()?;
        }
        Ok(a)
    }
    fn count(&mut self, item_size: usize) -> Result<usize, WireError> {
        let n = self.u32()? as usize;
        // Reject counts that cannot fit before allocating.
        if n.saturating_mul(item_size) > self.b.len() - self.pos {
            return Err(WireError::Malformed(format!("list of {n} items overruns payload")));
        }
        Ok(n)
    }
    fn bytes(&mut self) -> Result<Vec<u8>, WireError> {
        let n = self.count(1)?;
        Ok(self.take(n)?.to_vec())
    }
    fn str(&mut self) -> Result<String, WireError> {
        String::from_utf8(self.bytes()?).map_err(|_| WireError::Malformed("string is not UTF-8".into()))
    }
    fn role(&mut self) -> Result<Role, WireError> {
        match self.u8()? {
            0 => Ok(Role::Controller),
            1 => Ok(Role::Spectator),
            r => Err(WireError::Malformed(format!("unknown role {r}"))),
        }
    }
}

/// Total size of the frame at the start of `buf`, once its length prefix is
/// available.
pub fn frame_len(buf: &[u8]) -> Result<Option<usize>, WireError> {
    if buf.len() < 4 {
        return Ok(None);
    }
    let len = u32::from_le_bytes(buf[..4].try_into().unwrap());
    if len > MAX_FRAME_LEN {
        return Err(WireError::TooLarge { len, max: MAX_FRAME_LEN });
    }
    if len < 2 {
        return Err(WireError::Malformed(format!("frame length {len} below header size")));
    }
    Ok(Some(4 + len as usize))
}

/// Decodes exactly one frame occupying all of `frame`.
pub fn decode(frame: &[u8]) -> Result<WireMessage, WireError> {
    let total = match frame_len(frame)? {
        Some(n) => n,
        None => return Err(WireError::Truncated { need: 4, have: frame.len() }),
    };
    if frame.len() < total {
        return Err(WireError::Truncated { need: total, have: frame.len() });
    }
    if frame.len() > total {
        return Err(WireError::Malformed(format!("{} bytes after frame end", frame.len() - total)));
    }
    let (t, version) = (frame[4], frame[5]);
    if version != PROTOCOL_VERSION || !(tag::JOIN..=tag::ERROR).contains(&t) {
        return Err(WireError::Unsupported { tag: t, version });
    }
    let mut r = In { b: &frame[6..], pos: 0 };
    let msg = match t {
        tag::JOIN => WireMessage::Join { role: r.role()?, token: r.str()? },
        tag::HELLO => {
            let protocol_version = r.u16()?;
            let digest = r.u64()?;
            let dims = [r.u32()?, r.u32()?, r.u32()?];
            let spacing = r.f64s()?;
            let origin = r.f64s()?;
            let n = r.count(2 + 4 + 24 + 1)?;
            let mut segments = Vec::with_capacity(n);
            for _ in 0..n {
                segments.push(WireSegment {
                    label: r.u16()?,
                    name: r.str()?,
                    color: r.f64s()?,
                    sensitive: r.u8()? != 0,
                });
            }
            WireMessage::Hello(Hello {
                protocol_version,
                digest,
                dims,
                spacing,
                origin,
                segments,
                tick_rate_hz: r.f64()?,
                state_rate_hz: r.f64()?,
                role: r.role()?,
                session_token: r.str()?,
            })
        }
        tag::VOLUME_SNAPSHOT => {
            WireMessage::VolumeSnapshot { chunk_index: r.u32()?, chunk_total: r.u32()?, data: r.bytes()? }
        }
        tag::INPUT_FRAME => WireMessage::InputFrame(InputFrame {
            seq: r.u64()?,
            tip_position: r.f64s()?,
            orientation: r.f64s()?,
            pedal: r.f64()?,
            burr_id: r.u32()?,
            camera: r.f64s()?,
        }),
        tag::STATE_FRAME => {
            let seq = r.u64()?;
            let tick = r.u64()?;
            let t = r.f64()?;
            let drill = r.f64s()?;
            let f_haptic = r.f64s()?;
            let pitch = r.f64()?;
            let applied_input_seq = r.u64()?;
            let burr_id = r.u32()?;
            let nw = r.count(3)?;
            let mut warnings = Vec::with_capacity(nw);
            for _ in 0..nw {
                warnings.push(WireWarning { label: r.u16()?, kind: r.u8()? });
            }
            let nr = r.count(14)?;
            let mut removals = Vec::with_capacity(nr);
            for _ in 0..nr {
                removals.push(WireRemoval { i: r.u32()?, j: r.u32()?, k: r.u32()?, label: r.u16()? });
            }
            let digest = match r.u8()? {
                0 => None,
                1 => Some(r.u64()?),
                f => return Err(WireError::Malformed(format!("digest flag {f}"))),
            };
            WireMessage::StateFrame(StateFrame {
                seq,
                tick,
                t,
                drill,
                f_haptic,
                pitch,
                applied_input_seq,
                burr_id,
                warnings,
                removals,
                digest,
            })
        }
        tag::BURR_LIST => {
            let n = r.count(17)?;
            let mut burrs = Vec::with_capacity(n);
            for _ in 0..n {
                burrs.push(WireBurr { radius_mm: r.f64()?, tip: r.u8()?, brr: r.f64()? });
            }
            WireMessage::BurrList { burrs, active: r.u32()? }
        }
        tag::ACK => WireMessage::Ack { seq: r.u64()? },
        tag::ERROR => WireMessage::Error { code: r.u16()?, text: r.str()? },
        _ => unreachable!(),
    };
    if r.pos != r.b.len() {
        return Err(WireError::Malformed(format!("{} trailing payload bytes", r.b.len() - r.pos)));
    }
    Ok(msg)
}

/// Splits a byte stream into frames. Malformed frames with a valid length
/// are skipped whole, so the stream stays in sync; an oversized length
/// cannot be resynchronized and poisons the buffer.
#[derive(Debug, Default)]
pub struct FrameBuffer {
    buf: Vec<u8>,
    poisoned: bool,
}

impl FrameBuffer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn extend(&mut self, bytes: &[u8]) {
        self.buf.extend_from_slice(bytes);
    }

    pub fn buffered(&self) -> usize {
        self.buf.len()
    }

    pub fn is_poisoned(&self) -> bool {
        self.poisoned
    }

    /// Next complete frame, if any.
    pub fn next_frame(&mut self) -> Option<Result<WireMessage, WireError>> {
        if self.poisoned {
            return None;
        }
        match frame_len(&self.buf) {
            Ok(None) => None,
            Ok(Some(n)) if self.buf.len() < n => None,
            Ok(Some(n)) => {
                let msg = decode(&self.buf[..n]);
                self.buf.drain(..n);
                Some(msg)
            }
            Err(e) => {
                self.poisoned = true;
                Some(Err(e))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    pub(crate) fn empty_state_frame() -> WireMessage {
        WireMessage::StateFrame(StateFrame {
            seq: 0,
            tick: 0,
            t: 0.0,
            drill: [0.0; 7],
            f_haptic: [0.0; 3],
            pitch: 0.0,
            applied_input_seq: 0,
            burr_id: 0,
            warnings: vec![],
            removals: vec![],
            digest: None,
        })
    }

    #[test]
    fn empty_state_frame_has_fixed_size() {
        let bytes = encode(&empty_state_frame());
        assert_eq!(bytes.len(), 4 + 2 + 8 + 8 + 8 + 56 + 24 + 8 + 8 + 4 + 4 + 4 + 1);
        assert_eq!(&bytes[..6], &[(bytes.len() - 4) as u8, 0, 0, 0, tag::STATE_FRAME, PROTOCOL_VERSION]);
    }

    #[test]
    fn unknown_tag_and_version() {
        let mut bytes = encode(&WireMessage::Ack { seq: 9 });
        bytes[5] = 2;
        assert_eq!(decode(&bytes), Err(WireError::Unsupported { tag: tag::ACK, version: 2 }));
        bytes[5] = 1;
        bytes[4] = 0x7f;
        assert_eq!(decode(&bytes), Err(WireError::Unsupported { tag: 0x7f, version: 1 }));
    }

    #[test]
    fn truncated_and_oversized() {
        let bytes = encode(&WireMessage::Ack { seq: 9 });
        assert!(matches!(decode(&bytes[..bytes.len() - 1]), Err(WireError::Truncated { .. })));
        assert!(matches!(decode(&bytes[..2]), Err(WireError::Truncated { .. })));
        let huge = (MAX_FRAME_LEN + 1).to_le_bytes();
        assert!(matches!(decode(&huge), Err(WireError::TooLarge { .. })));
    }

    #[test]
    fn frame_buffer_resyncs_after_bad_frame() {
        let mut fb = FrameBuffer::new();
        let good = encode(&WireMessage::Ack { seq: 1 });
        let mut bad = encode(&WireMessage::Ack { seq: 2 });
        bad[4] = 0x55;
        let good2 = encode(&WireMessage::Ack { seq: 3 });
        let stream: Vec<u8> = [good.clone(), bad, good2].concat();
        // Feed in awkward pieces.
        for chunk in stream.chunks(5) {
            fb.extend(chunk);
        }
        assert_eq!(fb.next_frame(), Some(Ok(WireMessage::Ack { seq: 1 })));
        assert!(matches!(fb.next_frame(), Some(Err(WireError::Unsupported { .. }))));
        assert_eq!(fb.next_frame(), Some(Ok(WireMessage::Ack { seq: 3 })));
        assert_eq!(fb.next_frame(), None);
        fb.extend(&u32::MAX.to_le_bytes());
        assert!(matches!(fb.next_frame(), Some(Err(WireError::TooLarge { .. }))));
        assert!(fb.is_poisoned());
    }

    #[test]
    fn lying_list_count_rejected() {
        let mut bytes = encode(&WireMessage::BurrList { burrs: vec![], active: 0 });
        bytes[6..10].copy_from_slice(&1_000_000u32.to_le_bytes());
        assert!(matches!(decode(&bytes), Err(WireError::Malformed(_))));
    }

    fn f() -> impl Strategy<Value = f64> {
        -1e6f64..1e6
    }

    fn arb_message() -> impl Strategy<Value = WireMessage> {
        let s = "[a-zA-Z0-9 é]{0,12}";
        prop_oneof![
            (any::<bool>(), s).prop_map(|(c, token)| WireMessage::Join {
                role: if c { Role::Controller } else { Role::Spectator },
                token
            }),
            (
                any::<u64>(),
                [1u32..300, 1u32..300, 1u32..300],
                [f(), f(), f()],
                proptest::collection::vec((any::<u16>(), s, [f(), f(), f()], any::<bool>()), 0..4),
                s
            )
                .prop_map(|(digest, dims, v, segs, token)| WireMessage::Hello(Hello {
                    protocol_version: 1,
                    digest,
                    dims,
                    spacing: v,
                    origin: [v[2], v[0], v[1]],
                    segments: segs
                        .into_iter()
                        .map(|(label, name, color, sensitive)| WireSegment { label, name, color, sensitive })
                        .collect(),
                    tick_rate_hz: 1000.0,
                    state_rate_hz: 60.0,
                    role: Role::Spectator,
                    session_token: token,
                })),
            (any::<u32>(), any::<u32>(), proptest::collection::vec(any::<u8>(), 0..300)).prop_map(
                |(chunk_index, chunk_total, data)| WireMessage::VolumeSnapshot { chunk_index, chunk_total, data }
            ),
            (
                any::<u64>(),
                [f(), f(), f()],
                [f(), f(), f(), f()],
                0.0f64..1.0,
                any::<u32>(),
                proptest::array::uniform7(f())
            )
                .prop_map(|(seq, tip_position, orientation, pedal, burr_id, camera)| {
                    WireMessage::InputFrame(InputFrame { seq, tip_position, orientation, pedal, burr_id, camera })
                }),
            (
                any::<u64>(),
                any::<u64>(),
                proptest::array::uniform7(f()),
                proptest::collection::vec((any::<u16>(), 0u8..2), 0..5),
                proptest::collection::vec((any::<u32>(), any::<u32>(), any::<u32>(), any::<u16>()), 0..20),
                proptest::option::of(any::<u64>())
            )
                .prop_map(|(seq, tick, drill, w, r, digest)| WireMessage::StateFrame(StateFrame {
                    seq,
                    tick,
                    t: tick as f64 / 1000.0,
                    drill,
                    f_haptic: [drill[0], drill[1], drill[2]],
                    pitch: drill[3],
                    applied_input_seq: seq / 2,
                    burr_id: 3,
                    warnings: w.into_iter().map(|(label, kind)| WireWarning { label, kind }).collect(),
                    removals: r.into_iter().map(|(i, j, k, label)| WireRemoval { i, j, k, label }).collect(),
                    digest,
                })),
            (proptest::collection::vec((f(), 0u8..2, f()), 0..9), any::<u32>()).prop_map(|(b, active)| {
                WireMessage::BurrList {
                    burrs: b.into_iter().map(|(radius_mm, tip, brr)| WireBurr { radius_mm, tip, brr }).collect(),
                    active,
                }
            }),
            any::<u64>().prop_map(|seq| WireMessage::Ack { seq }),
            (any::<u16>(), s).prop_map(|(code, text)| WireMessage::Error { code, text }),
        ]
    }

    proptest! {
        #[test]
        fn round_trip(msg in arb_message()) {
            let bytes = encode(&msg);
            prop_assert_eq!(frame_len(&bytes).unwrap(), Some(bytes.len()));
            prop_assert_eq!(decode(&bytes).unwrap(), msg);
        }

        #[test]
        fn every_truncation_is_an_error(msg in arb_message()) {
            let bytes = encode(&msg);
            for cut in 0..bytes.len() {
                prop_assert!(decode(&bytes[..cut]).is_err());
            }
        }
    }
}
