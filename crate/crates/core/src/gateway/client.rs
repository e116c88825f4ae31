//! Client side of the gateway: snapshot chunking, a local mirror of the
//! grid, and a blocking raw-TCP client.

use std::io::{Read, Write};
use std::net::{SocketAddr, TcpStream};
use std::time::{Duration, Instant};

use flate2::read::DeflateDecoder;
use flate2::write::DeflateEncoder;
use flate2::Compression;

use super::wire::{encode, ErrorCode, FrameBuffer, Hello, InputFrame, Role, StateFrame, WireError, WireMessage};
use super::GatewayError;
use crate::volume::{GridGeometry, LabeledVolume, Segment, SegmentTable, VoxelIndex};

/// Splits the DEFLATE-compressed little-endian label array into snapshot frames.
pub fn snapshot_frames(vol: &LabeledVolume, chunk_bytes: usize) -> Vec<WireMessage> {
    let mut enc = DeflateEncoder::new(Vec::new(), Compression::fast());
    let mut raw = Vec::with_capacity(vol.labels().len() * 2);
    for l in vol.labels() {
        raw.extend_from_slice(&l.to_le_bytes());
    }
    enc.write_all(&raw).expect("in-memory write");
    let packed = enc.finish().expect("in-memory write");
    let chunks: Vec<&[u8]> =
        if packed.is_empty() { vec![&[][..]] } else { packed.chunks(chunk_bytes.max(1)).collect() };
    let total = chunks.len() as u32;
    chunks
        .into_iter()
        .enumerate()
        .map(|(i, c)| WireMessage::VolumeSnapshot { chunk_index: i as u32, chunk_total: total, data: c.to_vec() })
        .collect()
}

/// Rebuilds the grid described by `hello` from its snapshot chunks.
pub fn assemble_snapshot(hello: &Hello, chunks: &[(u32, u32, Vec<u8>)]) -> Result<LabeledVolume, GatewayError> {
    let bad = |m: &str| GatewayError::Handshake(m.to_string());
    let total = chunks.first().map(|c| c.1).ok_or_else(|| bad("no snapshot chunks"))?;
    if chunks.len() != total as usize || chunks.iter().enumerate().any(|(i, c)| c.0 != i as u32 || c.1 != total) {
        return Err(bad("snapshot chunks out of order or missing"));
    }
    let packed: Vec<u8> = chunks.iter().flat_map(|c| c.2.iter().copied()).collect();
    let mut raw = Vec::new();
    DeflateDecoder::new(&packed[..]).read_to_end(&mut raw).map_err(|e| bad(&format!("snapshot inflate: {e}")))?;
    let dims = hello.dims.map(|d| d as usize);
    let geometry = GridGeometry::new(dims, hello.spacing, hello.origin).map_err(|e| bad(&e.to_string()))?;
    if raw.len() != geometry.voxel_count() * 2 {
        return Err(bad("snapshot size does not match dims"));
    }
    let labels = raw.chunks_exact(2).map(|b| u16::from_le_bytes([b[0], b[1]])).collect();
    let mut segments = SegmentTable::new();
    for s in &hello.segments {
        let mut seg = Segment::new(s.name.clone(), s.color);
        seg.sensitive = s.sensitive;
        segments.insert(s.label, seg).map_err(|e| bad(&e.to_string()))?;
    }
    let vol = LabeledVolume::new(geometry, labels, segments).map_err(|e| bad(&e.to_string()))?;
    if vol.digest() != hello.digest {
        return Err(bad("snapshot digest does not match hello"));
    }
    Ok(vol)
}

/// Local copy of the server grid kept current by state frames.
#[derive(Debug, Clone)]
pub struct Mirror {
    volume: LabeledVolume,
    last_seq: u64,
    last_tick: u64,
    verified_digests: u64,
}

impl Mirror {
    pub fn new(volume: LabeledVolume) -> Self {
        Self { volume, last_seq: 0, last_tick: 0, verified_digests: 0 }
    }

    pub fn volume(&self) -> &LabeledVolume {
        &self.volume
    }

    pub fn last_seq(&self) -> u64 {
        self.last_seq
    }

    pub fn last_tick(&self) -> u64 {
        self.last_tick
    }

    /// Number of frame digests that matched the mirror.
    pub fn verified_digests(&self) -> u64 {
        self.verified_digests
    }

    pub fn apply(&mut self, f: &StateFrame) -> Result<(), GatewayError> {
        if f.seq <= self.last_seq {
            return Err(GatewayError::Mirror(format!("frame {} after {}", f.seq, self.last_seq)));
        }
        for r in &f.removals {
            let idx = VoxelIndex::new(r.i, r.j, r.k);
            let held = self.volume.geometry().contains(idx).then(|| self.volume.get(idx));
            match held {
                Some(l) if l == r.label && l != 0 => self.volume.clear(idx),
                other => {
                    return Err(GatewayError::Mirror(format!(
                        "removal of ({}, {}, {}) label {} but mirror holds {:?}",
                        r.i, r.j, r.k, r.label, other
                    )))
                }
            };
        }
        self.last_seq = f.seq;
        self.last_tick = f.tick;
        if let Some(d) = f.digest {
            let mine = self.volume.digest();
            if mine != d {
                return Err(GatewayError::Mirror(format!("digest {mine:016x} != server {d:016x} at frame {}", f.seq)));
            }
            self.verified_digests += 1;
        }
        Ok(())
    }
}

/// Blocking client over the raw framed transport.
pub struct Client {
    stream: TcpStream,
    buf: FrameBuffer,
    hello: Hello,
    burrs: Vec<super::wire::WireBurr>,
    mirror: Mirror,
}

impl Client {
    /// Joins and completes the handshake (hello, snapshot, burr list).
    pub fn connect(addr: SocketAddr, role: Role, token: &str, timeout: Duration) -> Result<Self, GatewayError> {
        let mut stream = TcpStream::connect_timeout(&addr, timeout)?;
        stream.set_nodelay(true)?;
        stream.write_all(&encode(&WireMessage::Join { role, token: token.to_string() }))?;
        let mut buf = FrameBuffer::new();
        let deadline = Instant::now() + timeout;
        let hello = match read_frame(&mut stream, &mut buf, deadline)? {
            WireMessage::Hello(h) => h,
            other => return Err(unexpected(other)),
        };
        let mut chunks = Vec::new();
        let burrs = loop {
            match read_frame(&mut stream, &mut buf, deadline)? {
                WireMessage::VolumeSnapshot { chunk_index, chunk_total, data } => {
                    chunks.push((chunk_index, chunk_total, data))
                }
                WireMessage::BurrList { burrs, .. } => break burrs,
                other => return Err(unexpected(other)),
            }
        };
        let mirror = Mirror::new(assemble_snapshot(&hello, &chunks)?);
        Ok(Self { stream, buf, hello, burrs, mirror })
    }

    pub fn hello(&self) -> &Hello {
        &self.hello
    }

    pub fn burrs(&self) -> &[super::wire::WireBurr] {
        &self.burrs
    }

    pub fn mirror(&self) -> &Mirror {
        &self.mirror
    }

    pub fn send_input(&mut self, f: &InputFrame) -> Result<(), GatewayError> {
        self.stream.write_all(&encode(&WireMessage::InputFrame(f.clone())))?;
        Ok(())
    }

    /// Next message, applying state frames to the mirror. Server errors come
    /// back as `Rejected`; `Ok(None)` means the timeout elapsed.
    pub fn recv(&mut self, timeout: Duration) -> Result<Option<WireMessage>, GatewayError> {
        let deadline = Instant::now() + timeout;
        match read_frame(&mut self.stream, &mut self.buf, deadline) {
            Ok(WireMessage::StateFrame(f)) => {
                self.mirror.apply(&f)?;
                Ok(Some(WireMessage::StateFrame(f)))
            }
            Ok(WireMessage::Error { code, text }) => Err(rejected(code, text)),
            Ok(m) => Ok(Some(m)),
            Err(GatewayError::Io(e))
                if matches!(e.kind(), std::io::ErrorKind::WouldBlock | std::io::ErrorKind::TimedOut) =>
            {
                Ok(None)
            }
            Err(e) => Err(e),
        }
    }
}

fn rejected(code: u16, text: String) -> GatewayError {
    let name = ErrorCode::from_u16(code).map_or("UNKNOWN", |c| c.name()).to_string();
    GatewayError::Rejected { code, name, text }
}

fn unexpected(m: WireMessage) -> GatewayError {
    match m {
        WireMessage::Error { code, text } => rejected(code, text),
        other => GatewayError::Handshake(format!("unexpected message tag {}", other.tag())),
    }
}

fn read_frame(stream: &mut TcpStream, buf: &mut FrameBuffer, deadline: Instant) -> Result<WireMessage, GatewayError> {
    let mut tmp = [0u8; 16 * 1024];
    loop {
        if let Some(f) = buf.next_frame() {
            return Ok(f?);
        }
        if buf.is_poisoned() {
            return Err(WireError::Malformed("oversized frame".into()).into());
        }
        let now = Instant::now();
        if now >= deadline {
            return Err(std::io::Error::from(std::io::ErrorKind::TimedOut).into());
        }
        stream.set_read_timeout(Some((deadline - now).max(Duration::from_millis(1))))?;
        match stream.read(&mut tmp)? {
            0 => return Err(std::io::Error::from(std::io::ErrorKind::UnexpectedEof).into()),
            n => buf.extend(&tmp[..n]),
        }
    }
}
