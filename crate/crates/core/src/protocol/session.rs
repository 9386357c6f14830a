use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use crate::calibration::EncoderReading;
use crate::geometry::{PoseSample, Timestamp};
use crate::tactile::TactileFrame;
use crate::text::{fmt_f64, parse_list, KeyValues};

use super::wire::{decode_stream, Payload, StreamKind, WireRecord};
use super::ProtocolError;

pub const SESSION_FORMAT_VERSION: u32 = 1;
pub const HEADER_FILE: &str = "header.txt";
/// Default output root for sessions written by the hub and the simulator.
pub const SESSION_DIR_ENV: &str = "DEMOSYNC_SESSION_DIR";

#[derive(Debug, Clone, PartialEq)]
pub struct SessionHeader {
    pub session_id: String,
    /// Wall-clock seconds of the session epoch (0 for simulated sessions).
    pub epoch: f64,
    /// Tactile sensor geometry `(height, width)`, once known.
    pub tactile_shape: Option<(usize, usize)>,
    /// Record count per stream present in the session.
    pub streams: BTreeMap<StreamKind, usize>,
    pub out_of_order_drops: u64,
    pub protocol_errors: u64,
}

impl SessionHeader {
    pub fn new(session_id: impl Into<String>, epoch: f64) -> Self {
        Self {
            session_id: session_id.into(),
            epoch,
            tactile_shape: None,
            streams: BTreeMap::new(),
            out_of_order_drops: 0,
            protocol_errors: 0,
        }
    }

    pub fn to_text(&self) -> String {
        let mut s = String::from("# demosync capture session\n");
        let _ = writeln!(s, "format_version = {SESSION_FORMAT_VERSION}");
        let _ = writeln!(s, "session_id = {}", self.session_id);
        let _ = writeln!(s, "epoch = {}", fmt_f64(self.epoch));
        if let Some((h, w)) = self.tactile_shape {
            let _ = writeln!(s, "tactile_height = {h}");
            let _ = writeln!(s, "tactile_width = {w}");
        }
        let names: Vec<&str> = self.streams.keys().map(|k| k.name()).collect();
        let _ = writeln!(s, "streams = [{}]", names.join(", "));
        for (k, n) in &self.streams {
            let _ = writeln!(s, "count_{} = {n}", k.name());
        }
        let _ = writeln!(s, "out_of_order_drops = {}", self.out_of_order_drops);
        let _ = writeln!(s, "protocol_errors = {}", self.protocol_errors);
        s
    }

    pub fn from_text(text: &str) -> Result<Self, ProtocolError> {
        let kv = KeyValues::parse(text).map_err(|(l, m)| ProtocolError::BadHeader(format!("line {l}: {m}")))?;
        let get = |k: &str| kv.get(k).ok_or_else(|| ProtocolError::BadHeader(format!("missing {k}")));
        let num = |k: &str| -> Result<u64, ProtocolError> {
            get(k)?.parse().map_err(|_| ProtocolError::BadHeader(format!("bad {k}")))
        };
        let version = num("format_version")?;
        if version != SESSION_FORMAT_VERSION as u64 {
            return Err(ProtocolError::BadHeader(format!("unsupported format_version {version}")));
        }
        let epoch = get("epoch")?.parse().map_err(|_| ProtocolError::BadHeader("bad epoch".into()))?;
        let tactile_shape = match (kv.get("tactile_height"), kv.get("tactile_width")) {
            (Some(_), Some(_)) => Some((num("tactile_height")? as usize, num("tactile_width")? as usize)),
            _ => None,
        };
        let list = parse_list(get("streams")?).ok_or_else(|| ProtocolError::BadHeader("bad streams list".into()))?;
        let mut streams = BTreeMap::new();
        for name in list {
            let k = StreamKind::from_name(name)
                .ok_or_else(|| ProtocolError::BadHeader(format!("unknown stream {name}")))?;
            streams.insert(k, num(&format!("count_{name}"))? as usize);
        }
        Ok(Self {
            session_id: get("session_id")?.to_string(),
            epoch,
            tactile_shape,
            streams,
            out_of_order_drops: num("out_of_order_drops").unwrap_or(0),
            protocol_errors: num("protocol_errors").unwrap_or(0),
        })
    }
}

/// All records of a capture session, grouped per stream in arrival order.
#[derive(Debug, Clone, PartialEq)]
pub struct RawSession {
    pub header: SessionHeader,
    streams: BTreeMap<StreamKind, Vec<WireRecord>>,
    /// Non-fatal problems found while loading (missing or damaged logs).
    pub warnings: Vec<String>,
}

impl RawSession {
    pub fn new(session_id: impl Into<String>, epoch: f64) -> Self {
        Self { header: SessionHeader::new(session_id, epoch), streams: BTreeMap::new(), warnings: Vec::new() }
    }

    /// Appends a record; timestamps must strictly increase within a stream.
    pub fn push(&mut self, rec: WireRecord) -> Result<(), ProtocolError> {
        let log = self.streams.entry(rec.kind).or_default();
        if let Some(last) = log.last() {
            if !(rec.timestamp > last.timestamp) {
                self.header.out_of_order_drops += 1;
                return Err(ProtocolError::OutOfOrder {
                    stream: rec.kind.name().into(),
                    t: rec.timestamp,
                    last: last.timestamp,
                });
            }
        }
        if rec.kind == StreamKind::Tactile && self.header.tactile_shape.is_none() {
            if let Ok(Payload::Tactile { height, width, .. }) = rec.payload() {
                self.header.tactile_shape = Some((height as usize, width as usize));
            }
        }
        log.push(rec);
        *self.header.streams.entry(log[0].kind).or_default() = log.len();
        Ok(())
    }

    pub fn records(&self, kind: StreamKind) -> &[WireRecord] {
        self.streams.get(&kind).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn has_stream(&self, kind: StreamKind) -> bool {
        self.streams.get(&kind).is_some_and(|v| !v.is_empty())
    }

    pub fn kinds(&self) -> impl Iterator<Item = StreamKind> + '_ {
        self.streams.keys().copied()
    }

    pub fn remove_stream(&mut self, kind: StreamKind) {
        self.streams.remove(&kind);
        self.header.streams.remove(&kind);
    }

    pub fn total_records(&self) -> usize {
        self.streams.values().map(Vec::len).sum()
    }

    pub fn save(&self, dir: &Path) -> Result<(), ProtocolError> {
        fs::create_dir_all(dir).map_err(|e| ProtocolError::io(dir, e))?;
        for (kind, recs) in &self.streams {
            let mut buf = Vec::with_capacity(recs.iter().map(WireRecord::encoded_len).sum());
            for r in recs {
                r.encode_into(&mut buf);
            }
            write_synced(&dir.join(kind.log_file()), &buf)?;
        }
        write_synced(&dir.join(HEADER_FILE), self.header.to_text().as_bytes())
    }

    /// Loads a session directory. Damaged or missing logs are recovered as
    /// far as possible and reported in [`RawSession::warnings`].
    pub fn load(dir: &Path) -> Result<Self, ProtocolError> {
        let hp = dir.join(HEADER_FILE);
        let text = fs::read_to_string(&hp).map_err(|e| ProtocolError::io(&hp, e))?;
        let header = SessionHeader::from_text(&text)?;
        let mut s = RawSession::new(header.session_id.clone(), header.epoch);
        s.header.tactile_shape = header.tactile_shape;
        s.header.out_of_order_drops = header.out_of_order_drops;
        s.header.protocol_errors = header.protocol_errors;
        for (&kind, &count) in &header.streams {
            let path = dir.join(kind.log_file());
            let bytes = match fs::read(&path) {
                Ok(b) => b,
                Err(e) => {
                    s.warnings.push(format!("MissingLog {}: {e}", kind.log_file()));
                    continue;
                }
            };
            let (recs, err) = decode_stream(&bytes);
            if let Some((offset, e)) = err {
                s.warnings.push(format!("CorruptLog {} offset={offset}: {e}", kind.log_file()));
            }
            let n = recs.len();
            let mut kept = 0usize;
            for r in recs {
                if r.kind != kind {
                    s.warnings.push(format!("ForeignRecord {} carries {:?}", kind.log_file(), r.kind));
                    continue;
                }
                if s.push(r).is_ok() {
                    kept += 1;
                }
            }
            if kept != n {
                s.warnings.push(format!("OutOfOrder {}: dropped {} records", kind.log_file(), n - kept));
            }
            if n != count {
                s.warnings.push(format!("CountMismatch {}: header says {count}, log has {n}", kind.log_file()));
            }
        }
        // Drops recorded at capture time are already part of the header.
        s.header.out_of_order_drops = header.out_of_order_drops;
        Ok(s)
    }

    pub fn poses(&self) -> Result<Vec<PoseSample>, ProtocolError> {
        self.typed(StreamKind::Pose, |t, p| match p {
            Payload::Pose(pose) => Some(PoseSample { t, pose }),
            _ => None,
        })
    }

    pub fn encoder(&self) -> Result<Vec<(Timestamp, EncoderReading)>, ProtocolError> {
        self.typed(StreamKind::Encoder, |t, p| match p {
            Payload::Encoder(r) => Some((t, r)),
            _ => None,
        })
    }

    pub fn tactile(&self) -> Result<Vec<TactileFrame>, ProtocolError> {
        self.typed(StreamKind::Tactile, |t, p| match p {
            Payload::Tactile { sensor, height, width, pixels } => {
                Some(TactileFrame { t, sensor, height: height as usize, width: width as usize, pixels })
            }
            _ => None,
        })
    }

    /// `(timestamp, frame_index)` per video frame.
    pub fn video_frames(&self) -> Result<Vec<(Timestamp, u32)>, ProtocolError> {
        self.typed(StreamKind::VideoMeta, |t, p| match p {
            Payload::VideoMeta { frame_index } => Some((t, frame_index)),
            _ => None,
        })
    }

    /// `(timestamp, u, v)` marker detections in pixels.
    pub fn markers(&self) -> Result<Vec<(Timestamp, f64, f64)>, ProtocolError> {
        self.typed(StreamKind::Marker, |t, p| match p {
            Payload::Marker { u, v } => Some((t, u, v)),
            _ => None,
        })
    }

    fn typed<T>(&self, kind: StreamKind, f: impl Fn(Timestamp, Payload) -> Option<T>) -> Result<Vec<T>, ProtocolError> {
        self.records(kind)
            .iter()
            .map(|r| {
                let p = r.payload()?;
                f(r.timestamp, p)
                    .ok_or(ProtocolError::MalformedPayload { kind, reason: "payload kind mismatch".into() })
            })
            .collect()
    }
}

fn write_synced(path: &Path, bytes: &[u8]) -> Result<(), ProtocolError> {
    let mut f = fs::File::create(path).map_err(|e| ProtocolError::io(path, e))?;
    f.write_all(bytes).map_err(|e| ProtocolError::io(path, e))?;
    f.sync_all().map_err(|e| ProtocolError::io(path, e))
}

/// Globally time-ordered iteration over a session directory.
///
/// Valid records come first, merged by timestamp with ties broken by stream
/// code and then stream-local order. Any log damage is reported afterwards as
/// one `CorruptLog` error per affected stream.
pub struct Replay {
    items: std::vec::IntoIter<(StreamKind, WireRecord)>,
    errors: std::vec::IntoIter<ProtocolError>,
}

impl Iterator for Replay {
    type Item = Result<(StreamKind, WireRecord), ProtocolError>;

    fn next(&mut self) -> Option<Self::Item> {
        self.items.next().map(Ok).or_else(|| self.errors.next().map(Err))
    }
}

pub fn replay_session(dir: &Path) -> Result<Replay, ProtocolError> {
    if !dir.is_dir() {
        return Err(ProtocolError::Io { path: dir.display().to_string(), msg: "not a session directory".into() });
    }
    let mut tagged: Vec<(f64, u8, usize, WireRecord)> = Vec::new();
    let mut errors = Vec::new();
    for kind in StreamKind::ALL {
        let path = dir.join(kind.log_file());
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => continue,
            Err(e) => return Err(ProtocolError::io(&path, e)),
        };
        let (recs, err) = decode_stream(&bytes);
        let mut offset = 0u64;
        for (i, r) in recs.into_iter().enumerate() {
            let len = r.encoded_len() as u64;
            if r.kind != kind {
                errors.push(ProtocolError::CorruptLog {
                    stream: kind.name().into(),
                    offset,
                    reason: format!("record of stream {:?}", r.kind),
                });
                break;
            }
            offset += len;
            tagged.push((r.timestamp, kind.code(), i, r));
        }
        if let Some((offset, e)) = err {
            errors.push(ProtocolError::CorruptLog { stream: kind.name().into(), offset, reason: e.to_string() });
        }
    }
    tagged.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let items: Vec<_> = tagged.into_iter().map(|(_, _, _, r)| (r.kind, r)).collect();
    Ok(Replay { items: items.into_iter(), errors: errors.into_iter() })
}
