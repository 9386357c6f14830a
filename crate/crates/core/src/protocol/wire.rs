//! Length-prefixed record framing.
//!
//! ```text
//! offset  size  field
//! 0       4     magic "EXU1" (last byte is the protocol version)
//! 4       1     stream id
//! 5       8     timestamp, f64 little-endian, seconds
//! 13      4     payload length, u32 little-endian (<= 1 MiB)
//! 17      n     payload
//! ```

use crate::calibration::EncoderReading;
use crate::geometry::{Pose6D, Timestamp, UnitQuaternion, Vec3};
use crate::tactile::SensorId;

use super::ProtocolError;

pub const MAGIC: [u8; 4] = *b"EXU1";
pub const HEADER_LEN: usize = 17;
pub const MAX_PAYLOAD: usize = 1 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum StreamKind {
    Pose = 1,
    Encoder = 2,
    Tactile = 3,
    VideoMeta = 4,
    Marker = 5,
}

impl StreamKind {
    pub const ALL: [StreamKind; 5] =
        [StreamKind::Pose, StreamKind::Encoder, StreamKind::Tactile, StreamKind::VideoMeta, StreamKind::Marker];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        StreamKind::ALL.into_iter().find(|k| k.code() == code)
    }

    /// Lower-case name, also the log file stem.
    pub fn name(self) -> &'static str {
        match self {
            StreamKind::Pose => "pose",
            StreamKind::Encoder => "encoder",
            StreamKind::Tactile => "tactile",
            StreamKind::VideoMeta => "video_meta",
            StreamKind::Marker => "marker",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        StreamKind::ALL.into_iter().find(|k| k.name() == name)
    }

    pub fn log_file(self) -> String {
        format!("{}.log", self.name())
    }
}

/// One framed record. The payload is kept as raw bytes so a decoded record
/// re-encodes bit-exactly; [`WireRecord::payload`] parses it.
#[derive(Debug, Clone, PartialEq)]
pub struct WireRecord {
    pub kind: StreamKind,
    pub timestamp: Timestamp,
    pub payload: Vec<u8>,
}

impl WireRecord {
    pub fn new(kind: StreamKind, timestamp: Timestamp, payload: &Payload) -> Self {
        Self { kind, timestamp, payload: payload.encode() }
    }

    pub fn payload(&self) -> Result<Payload, ProtocolError> {
        Payload::decode(self.kind, &self.payload)
    }

    pub fn encoded_len(&self) -> usize {
        HEADER_LEN + self.payload.len()
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.encoded_len());
        self.encode_into(&mut out);
        out
    }

    pub fn encode_into(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&MAGIC);
        out.push(self.kind.code());
        out.extend_from_slice(&self.timestamp.to_le_bytes());
        out.extend_from_slice(&(self.payload.len() as u32).to_le_bytes());
        out.extend_from_slice(&self.payload);
    }
}

/// Typed view of a payload.
#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    Pose(Pose6D),
    Encoder(EncoderReading),
    Tactile { sensor: SensorId, height: u16, width: u16, pixels: Vec<u8> },
    VideoMeta { frame_index: u32 },
    Marker { u: f64, v: f64 },
}

impl Payload {
    pub fn kind(&self) -> StreamKind {
        match self {
            Payload::Pose(_) => StreamKind::Pose,
            Payload::Encoder(_) => StreamKind::Encoder,
            Payload::Tactile { .. } => StreamKind::Tactile,
            Payload::VideoMeta { .. } => StreamKind::VideoMeta,
            Payload::Marker { .. } => StreamKind::Marker,
        }
    }

    /// Pose quaternions are written with `w >= 0`.
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        match self {
            Payload::Pose(p) => {
                let q = p.orientation.canonical();
                for v in [q.w, q.x, q.y, q.z, p.position.x, p.position.y, p.position.z] {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
            Payload::Encoder(r) => out.extend_from_slice(&r.raw().to_le_bytes()),
            Payload::Tactile { sensor, height, width, pixels } => {
                out.push(*sensor as u8);
                out.extend_from_slice(&height.to_le_bytes());
                out.extend_from_slice(&width.to_le_bytes());
                out.extend_from_slice(pixels);
            }
            Payload::VideoMeta { frame_index } => out.extend_from_slice(&frame_index.to_le_bytes()),
            Payload::Marker { u, v } => {
                out.extend_from_slice(&u.to_le_bytes());
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn decode(kind: StreamKind, b: &[u8]) -> Result<Payload, ProtocolError> {
        let bad = |reason: String| ProtocolError::MalformedPayload { kind, reason };
        let expect_len = |n: usize| {
            if b.len() == n {
                Ok(())
            } else {
                Err(bad(format!("expected {n} bytes, got {}", b.len())))
            }
        };
        let f64_at = |i: usize| f64::from_le_bytes(b[i * 8..i * 8 + 8].try_into().unwrap());
        match kind {
            StreamKind::Pose => {
                expect_len(56)?;
                let v: Vec<f64> = (0..7).map(f64_at).collect();
                if v.iter().any(|x| !x.is_finite()) {
                    return Err(bad("non-finite pose component".into()));
                }
                let n2 = v[0] * v[0] + v[1] * v[1] + v[2] * v[2] + v[3] * v[3];
                if (n2 - 1.0).abs() > 1e-6 {
                    return Err(bad(format!("quaternion norm^2 {n2}")));
                }
                Ok(Payload::Pose(Pose6D::new(
                    Vec3::new(v[4], v[5], v[6]),
                    UnitQuaternion::from_parts_unchecked(v[0], v[1], v[2], v[3]),
                )))
            }
            StreamKind::Encoder => {
                expect_len(2)?;
                let raw = u16::from_le_bytes([b[0], b[1]]);
                EncoderReading::new(raw as u32).map(Payload::Encoder).map_err(|e| bad(e.to_string()))
            }
            StreamKind::Tactile => {
                if b.len() < 5 {
                    return Err(bad("tactile payload shorter than its 5-byte header".into()));
                }
                let sensor = SensorId::from_code(b[0]).ok_or_else(|| bad(format!("unknown sensor id {}", b[0])))?;
                let height = u16::from_le_bytes([b[1], b[2]]);
                let width = u16::from_le_bytes([b[3], b[4]]);
                expect_len(5 + height as usize * width as usize)?;
                Ok(Payload::Tactile { sensor, height, width, pixels: b[5..].to_vec() })
            }
            StreamKind::VideoMeta => {
                expect_len(4)?;
                Ok(Payload::VideoMeta { frame_index: u32::from_le_bytes(b.try_into().unwrap()) })
            }
            StreamKind::Marker => {
                expect_len(16)?;
                let (u, v) = (f64_at(0), f64_at(1));
                if !u.is_finite() || !v.is_finite() {
                    return Err(bad("non-finite marker coordinate".into()));
                }
                Ok(Payload::Marker { u, v })
            }
        }
    }
}

/// Frames a record after checking the payload against `kind`'s layout.
pub fn encode_record(kind: StreamKind, t: Timestamp, payload: &[u8]) -> Result<Vec<u8>, ProtocolError> {
    if payload.len() > MAX_PAYLOAD {
        return Err(ProtocolError::OversizePayload(payload.len()));
    }
    if !t.is_finite() {
        return Err(ProtocolError::NonFiniteTimestamp);
    }
    Payload::decode(kind, payload)?;
    Ok(WireRecord { kind, timestamp: t, payload: payload.to_vec() }.encode())
}

/// Decodes one record from the front of `bytes`, returning it with the
/// number of bytes consumed.
pub fn decode_record(bytes: &[u8]) -> Result<(WireRecord, usize), ProtocolError> {
    let need = |n: usize| {
        if bytes.len() < n {
            Err(ProtocolError::TruncatedRecord { needed: n, available: bytes.len() })
        } else {
            Ok(())
        }
    };
    // Check whatever part of the magic is present before waiting for more.
    let m = bytes.len().min(4);
    if bytes[..m] != MAGIC[..m] {
        return Err(ProtocolError::BadMagic);
    }
    need(HEADER_LEN)?;
    let kind = StreamKind::from_code(bytes[4]).ok_or(ProtocolError::UnknownStream(bytes[4]))?;
    let timestamp = f64::from_le_bytes(bytes[5..13].try_into().unwrap());
    let len = u32::from_le_bytes(bytes[13..17].try_into().unwrap()) as usize;
    if len > MAX_PAYLOAD {
        return Err(ProtocolError::OversizePayload(len));
    }
    if !timestamp.is_finite() {
        return Err(ProtocolError::NonFiniteTimestamp);
    }
    need(HEADER_LEN + len)?;
    let payload = &bytes[HEADER_LEN..HEADER_LEN + len];
    Payload::decode(kind, payload)?;
    Ok((WireRecord { kind, timestamp, payload: payload.to_vec() }, HEADER_LEN + len))
}

/// Incremental decoder for a byte stream that may arrive in arbitrary pieces.
#[derive(Debug, Default)]
pub struct RecordDecoder {
    buf: Vec<u8>,
    start: usize,
    consumed: u64,
}

impl RecordDecoder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, bytes: &[u8]) {
        if self.start > 0 && self.start == self.buf.len() {
            self.buf.clear();
            self.start = 0;
        }
        self.buf.extend_from_slice(bytes);
    }

    /// Next complete record, `Ok(None)` when more bytes are needed. Errors
    /// other than truncation are fatal for the stream: framing is lost.
    pub fn next_record(&mut self) -> Result<Option<WireRecord>, ProtocolError> {
        let avail = &self.buf[self.start..];
        if avail.is_empty() {
            return Ok(None);
        }
        match decode_record(avail) {
            Ok((rec, n)) => {
                self.start += n;
                self.consumed += n as u64;
                if self.start > 1 << 16 && self.start * 2 > self.buf.len() {
                    self.buf.drain(..self.start);
                    self.start = 0;
                }
                Ok(Some(rec))
            }
            Err(ProtocolError::TruncatedRecord { .. }) => Ok(None),
            Err(e) => Err(e),
        }
    }

    /// Stream offset of the next undecoded byte.
    pub fn offset(&self) -> u64 {
        self.consumed
    }

    /// Bytes of an incomplete trailing record.
    pub fn pending(&self) -> usize {
        self.buf.len() - self.start
    }
}

/// Decodes a whole buffer. Returns the records before the first problem,
/// plus the byte offset and error of that problem (a partial tail is
/// reported as `TruncatedRecord`).
pub fn decode_stream(bytes: &[u8]) -> (Vec<WireRecord>, Option<(u64, ProtocolError)>) {
    let mut out = Vec::new();
    let mut off = 0usize;
    while off < bytes.len() {
        match decode_record(&bytes[off..]) {
            Ok((rec, n)) => {
                out.push(rec);
                off += n;
            }
            Err(e) => return (out, Some((off as u64, e))),
        }
    }
    (out, None)
}
