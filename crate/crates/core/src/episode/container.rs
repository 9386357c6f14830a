//! Episode directory container: `manifest.txt` plus one little-endian binary
//! file per array. The manifest records schema version, dtypes, shapes,
//! provenance and a SHA-256 per array file, and ends with a SHA-256 over its
//! own preceding bytes.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::geometry::{Pose6D, UnitQuaternion, Vec3};
use crate::latency::LatencyEstimate;
use crate::tactile::{QuantizedTactile, SensorId};
use crate::text::{fmt_f64, KeyValues};

use super::{Episode, Provenance, TactileSample, TactileTrack};

pub const EPISODE_SCHEMA_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.txt";
const CHECKSUM_KEY: &str = "manifest_sha256 = ";
const ABSENT: u32 = u32::MAX;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ContainerError {
    #[error("episode schema version {found} (expected {expected})")]
    SchemaVersionMismatch { found: String, expected: u32 },
    #[error("checksum mismatch in {section}")]
    ChecksumMismatch { section: String },
    #[error("malformed episode container: {0}")]
    Malformed(String),
    #[error("{path}: {msg}")]
    Io { path: String, msg: String },
}

impl ContainerError {
    pub fn code(&self) -> &'static str {
        match self {
            ContainerError::SchemaVersionMismatch { .. } => "SchemaVersionMismatch",
            ContainerError::ChecksumMismatch { .. } => "ChecksumMismatch",
            ContainerError::Malformed(_) => "MalformedContainer",
            ContainerError::Io { .. } => "IoError",
        }
    }
}

fn io_err(path: &Path, e: std::io::Error) -> ContainerError {
    ContainerError::Io { path: path.display().to_string(), msg: e.to_string() }
}

fn malformed(msg: impl Into<String>) -> ContainerError {
    ContainerError::Malformed(msg.into())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Dtype {
    F64,
    U32,
    U16,
    U8,
}

impl Dtype {
    fn name(self) -> &'static str {
        match self {
            Dtype::F64 => "f64",
            Dtype::U32 => "u32",
            Dtype::U16 => "u16",
            Dtype::U8 => "u8",
        }
    }

    fn size(self) -> usize {
        match self {
            Dtype::F64 => 8,
            Dtype::U32 => 4,
            Dtype::U16 => 2,
            Dtype::U8 => 1,
        }
    }

    fn parse(s: &str) -> Option<Self> {
        [Dtype::F64, Dtype::U32, Dtype::U16, Dtype::U8].into_iter().find(|d| d.name() == s)
    }
}

struct ArrayOut {
    name: String,
    dtype: Dtype,
    shape: Vec<usize>,
    bytes: Vec<u8>,
}

fn f64_bytes(v: impl IntoIterator<Item = f64>) -> Vec<u8> {
    v.into_iter().flat_map(f64::to_le_bytes).collect()
}

fn u32_bytes(v: impl IntoIterator<Item = u32>) -> Vec<u8> {
    v.into_iter().flat_map(u32::to_le_bytes).collect()
}

fn u16_bytes<'a>(v: impl IntoIterator<Item = &'a u16>) -> Vec<u8> {
    v.into_iter().flat_map(|x| x.to_le_bytes()).collect()
}

fn escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('\n', "\\n").replace('\r', "\\r")
}

fn unescape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut it = s.chars();
    while let Some(c) = it.next() {
        if c == '\\' {
            match it.next() {
                Some('n') => out.push('\n'),
                Some('r') => out.push('\r'),
                Some(o) => out.push(o),
                None => out.push('\\'),
            }
        } else {
            out.push(c);
        }
    }
    out
}

fn track_arrays(tr: &TactileTrack, out: &mut Vec<ArrayOut>) {
    let p = format!("tactile_{}", tr.sensor.name());
    let (s, h, w) = (tr.samples.len(), tr.height, tr.width);
    out.push(ArrayOut {
        name: format!("{p}_frame_sample"),
        dtype: Dtype::U32,
        shape: vec![tr.frame_sample.len()],
        bytes: u32_bytes(tr.frame_sample.iter().map(|x| x.unwrap_or(ABSENT))),
    });
    out.push(ArrayOut {
        name: format!("{p}_times"),
        dtype: Dtype::F64,
        shape: vec![s],
        bytes: f64_bytes(tr.samples.iter().map(|x| x.t)),
    });
    out.push(ArrayOut {
        name: format!("{p}_active"),
        dtype: Dtype::F64,
        shape: vec![s],
        bytes: f64_bytes(tr.samples.iter().map(|x| x.active_ratio)),
    });
    out.push(ArrayOut {
        name: format!("{p}_raw"),
        dtype: Dtype::U8,
        shape: vec![s, h, w],
        bytes: tr.samples.iter().flat_map(|x| x.raw.iter().copied()).collect(),
    });
    out.push(ArrayOut {
        name: format!("{p}_processed"),
        dtype: Dtype::U16,
        shape: vec![s, 3, h, w],
        bytes: tr
            .samples
            .iter()
            .flat_map(|x| {
                let q = &x.processed;
                u16_bytes(q.gray.iter().chain(&q.convex).chain(&q.concave))
            })
            .collect(),
    });
}

pub fn write_episode(ep: &Episode, dir: &Path) -> Result<(), ContainerError> {
    let n = ep.len();
    if ep.poses.len() != n
        || ep.frame_indices.len() != n
        || ep.frame_flags.len() != n
        || ep.widths.as_ref().is_some_and(|w| w.len() != n)
        || ep.tactile_left.frame_sample.len() != n
        || ep.tactile_right.frame_sample.len() != n
    {
        return Err(malformed("per-frame arrays differ in length"));
    }
    let mut arrays = vec![
        ArrayOut {
            name: "frame_times".into(),
            dtype: Dtype::F64,
            shape: vec![n],
            bytes: f64_bytes(ep.frame_times.iter().copied()),
        },
        ArrayOut {
            name: "frame_indices".into(),
            dtype: Dtype::U32,
            shape: vec![n],
            bytes: u32_bytes(ep.frame_indices.iter().copied()),
        },
        ArrayOut {
            name: "poses".into(),
            dtype: Dtype::F64,
            shape: vec![n, 7],
            bytes: f64_bytes(ep.poses.iter().flat_map(|p| {
                let q = p.orientation.canonical();
                [q.w, q.x, q.y, q.z, p.position.x, p.position.y, p.position.z]
            })),
        },
        ArrayOut { name: "frame_flags".into(), dtype: Dtype::U8, shape: vec![n], bytes: ep.frame_flags.clone() },
    ];
    if let Some(w) = &ep.widths {
        arrays.push(ArrayOut {
            name: "widths".into(),
            dtype: Dtype::F64,
            shape: vec![n],
            bytes: f64_bytes(w.iter().copied()),
        });
    }
    track_arrays(&ep.tactile_left, &mut arrays);
    track_arrays(&ep.tactile_right, &mut arrays);

    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let pv = &ep.provenance;
    let mut m = String::from("# demosync episode\n");
    let _ = writeln!(m, "schema_version = {EPISODE_SCHEMA_VERSION}");
    let _ = writeln!(m, "frames = {n}");
    let _ = writeln!(m, "widths_present = {}", ep.widths.is_some());
    for tr in [&ep.tactile_left, &ep.tactile_right] {
        let p = format!("tactile_{}", tr.sensor.name());
        let _ = writeln!(m, "{p}_samples = {}", tr.samples.len());
        let _ = writeln!(m, "{p}_height = {}", tr.height);
        let _ = writeln!(m, "{p}_width = {}", tr.width);
    }
    let _ = writeln!(m, "provenance.session_id = {}", escape(&pv.session_id));
    let _ = writeln!(m, "provenance.gripper_cal_sha256 = {}", escape(&pv.gripper_cal_digest));
    let _ = writeln!(m, "provenance.controller_cal_sha256 = {}", escape(&pv.controller_cal_digest));
    let l = &pv.latency;
    let _ = writeln!(m, "provenance.latency_s = {}", fmt_f64(l.delta_star));
    let _ = writeln!(m, "provenance.latency_residual_mse = {}", fmt_f64(l.residual_mse));
    let _ = writeln!(m, "provenance.latency_overlap = {}", fmt_f64(l.overlap_fraction));
    let _ = writeln!(m, "provenance.latency_passes = {}", l.passes);
    let _ = writeln!(m, "provenance.latency_final_width = {}", fmt_f64(l.final_width));
    let _ = writeln!(m, "provenance.latency_flipped = {}", l.flipped);
    let _ = writeln!(m, "provenance.tactile_tau = {}", fmt_f64(pv.tactile_tau));
    let _ = writeln!(m, "provenance.tactile_hold_tolerance = {}", fmt_f64(pv.tactile_hold_tolerance));
    let _ = writeln!(m, "provenance.dropped_head = {}", pv.dropped_head);
    let _ = writeln!(m, "provenance.dropped_tail = {}", pv.dropped_tail);
    let _ = writeln!(m, "provenance.warnings = {}", pv.warnings.len());
    for (i, w) in pv.warnings.iter().enumerate() {
        let _ = writeln!(m, "provenance.warning.{i} = {}", escape(w));
    }
    for a in &arrays {
        let file = format!("{}.{}", a.name, a.dtype.name());
        let shape: Vec<String> = a.shape.iter().map(usize::to_string).collect();
        let sum = hex::encode(Sha256::digest(&a.bytes));
        let _ = writeln!(m, "array.{} = {} {} [{}] {}", a.name, file, a.dtype.name(), shape.join(","), sum);
        let path = dir.join(&file);
        fs::write(&path, &a.bytes).map_err(|e| io_err(&path, e))?;
    }
    let sum = hex::encode(Sha256::digest(m.as_bytes()));
    let _ = writeln!(m, "{CHECKSUM_KEY}{sum}");
    let path = dir.join(MANIFEST_FILE);
    fs::write(&path, m).map_err(|e| io_err(&path, e))
}

struct Arrays<'a> {
    dir: &'a Path,
    kv: &'a KeyValues,
}

impl Arrays<'_> {
    fn load(&self, name: &str, dtype: Dtype, shape: &[usize]) -> Result<Vec<u8>, ContainerError> {
        let spec = self.kv.get(&format!("array.{name}")).ok_or_else(|| malformed(format!("missing array {name}")))?;
        let parts: Vec<&str> = spec.split_whitespace().collect();
        let [file, dt, shp, sum] = parts.as_slice() else {
            return Err(malformed(format!("bad array entry for {name}")));
        };
        if Dtype::parse(dt) != Some(dtype) {
            return Err(malformed(format!("{name}: dtype {dt}, expected {}", dtype.name())));
        }
        let want: Vec<String> = shape.iter().map(usize::to_string).collect();
        if *shp != format!("[{}]", want.join(",")) {
            return Err(malformed(format!("{name}: shape {shp}, expected [{}]", want.join(","))));
        }
        if file.contains('/') || file.contains('\\') || file.starts_with('.') {
            return Err(malformed(format!("{name}: bad file name {file}")));
        }
        let path = self.dir.join(file);
        let bytes = fs::read(&path).map_err(|e| io_err(&path, e))?;
        if hex::encode(Sha256::digest(&bytes)) != *sum {
            return Err(ContainerError::ChecksumMismatch { section: (*file).to_string() });
        }
        let expect = shape.iter().product::<usize>() * dtype.size();
        if bytes.len() != expect {
            return Err(malformed(format!("{name}: {} bytes, expected {expect}", bytes.len())));
        }
        Ok(bytes)
    }

    fn f64s(&self, name: &str, shape: &[usize]) -> Result<Vec<f64>, ContainerError> {
        Ok(self
            .load(name, Dtype::F64, shape)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn u32s(&self, name: &str, shape: &[usize]) -> Result<Vec<u32>, ContainerError> {
        Ok(self
            .load(name, Dtype::U32, shape)?
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn u16s(&self, name: &str, shape: &[usize]) -> Result<Vec<u16>, ContainerError> {
        Ok(self.load(name, Dtype::U16, shape)?.chunks_exact(2).map(|c| u16::from_le_bytes([c[0], c[1]])).collect())
    }
}

fn get<'a>(kv: &'a KeyValues, key: &str) -> Result<&'a str, ContainerError> {
    kv.get(key).ok_or_else(|| malformed(format!("manifest lacks {key}")))
}

fn num<T: std::str::FromStr>(kv: &KeyValues, key: &str) -> Result<T, ContainerError> {
    get(kv, key)?.parse().map_err(|_| malformed(format!("bad value for {key}")))
}

fn read_track(sensor: SensorId, n: usize, arr: &Arrays, kv: &KeyValues) -> Result<TactileTrack, ContainerError> {
    let p = format!("tactile_{}", sensor.name());
    let s: usize = num(kv, &format!("{p}_samples"))?;
    let h: usize = num(kv, &format!("{p}_height"))?;
    let w: usize = num(kv, &format!("{p}_width"))?;
    let frame_sample: Vec<Option<u32>> = arr
        .u32s(&format!("{p}_frame_sample"), &[n])?
        .into_iter()
        .map(|k| {
            if k == ABSENT {
                Ok(None)
            } else if (k as usize) < s {
                Ok(Some(k))
            } else {
                Err(malformed("tactile index out of range"))
            }
        })
        .collect::<Result<_, _>>()?;
    let times = arr.f64s(&format!("{p}_times"), &[s])?;
    let active = arr.f64s(&format!("{p}_active"), &[s])?;
    let raw = arr.load(&format!("{p}_raw"), Dtype::U8, &[s, h, w])?;
    let proc = arr.u16s(&format!("{p}_processed"), &[s, 3, h, w])?;
    let px = h * w;
    let samples = (0..s)
        .map(|i| {
            let base = i * 3 * px;
            TactileSample {
                t: times[i],
                raw: raw[i * px..(i + 1) * px].to_vec(),
                processed: QuantizedTactile {
                    height: h,
                    width: w,
                    gray: proc[base..base + px].to_vec(),
                    convex: proc[base + px..base + 2 * px].to_vec(),
                    concave: proc[base + 2 * px..base + 3 * px].to_vec(),
                },
                active_ratio: active[i],
            }
        })
        .collect();
    Ok(TactileTrack { sensor, height: h, width: w, samples, frame_sample })
}

pub fn read_episode(dir: &Path) -> Result<Episode, ContainerError> {
    let mpath = dir.join(MANIFEST_FILE);
    let raw = fs::read(&mpath).map_err(|e| io_err(&mpath, e))?;
    let manifest_err = || ContainerError::ChecksumMismatch { section: MANIFEST_FILE.into() };
    // The last line must be the checksum of everything before it.
    let body_end = raw[..raw.len().saturating_sub(1)].iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
    let (body, last) = raw.split_at(body_end);
    let last = std::str::from_utf8(last).map_err(|_| manifest_err())?;
    let sum = last.strip_prefix(CHECKSUM_KEY).and_then(|s| s.strip_suffix('\n')).ok_or_else(manifest_err)?;
    if hex::encode(Sha256::digest(body)) != sum {
        return Err(manifest_err());
    }
    let text = std::str::from_utf8(body).map_err(|_| malformed("manifest is not UTF-8"))?;
    let kv = KeyValues::parse(text).map_err(|(l, m)| malformed(format!("manifest line {l}: {m}")))?;
    let version = get(&kv, "schema_version")?;
    if version.parse::<u32>().ok() != Some(EPISODE_SCHEMA_VERSION) {
        return Err(ContainerError::SchemaVersionMismatch {
            found: version.to_string(),
            expected: EPISODE_SCHEMA_VERSION,
        });
    }
    let n: usize = num(&kv, "frames")?;
    let arr = Arrays { dir, kv: &kv };
    let frame_times = arr.f64s("frame_times", &[n])?;
    let frame_indices = arr.u32s("frame_indices", &[n])?;
    let poses = arr
        .f64s("poses", &[n, 7])?
        .chunks_exact(7)
        .map(|c| Pose6D::new(Vec3::new(c[4], c[5], c[6]), UnitQuaternion::from_parts_unchecked(c[0], c[1], c[2], c[3])))
        .collect();
    let frame_flags = arr.load("frame_flags", Dtype::U8, &[n])?;
    let widths = match get(&kv, "widths_present")? {
        "true" => Some(arr.f64s("widths", &[n])?),
        "false" => None,
        other => return Err(malformed(format!("bad widths_present {other}"))),
    };
    let tactile_left = read_track(SensorId::Left, n, &arr, &kv)?;
    let tactile_right = read_track(SensorId::Right, n, &arr, &kv)?;
    let nwarn: usize = num(&kv, "provenance.warnings")?;
    let warnings =
        (0..nwarn).map(|i| get(&kv, &format!("provenance.warning.{i}")).map(unescape)).collect::<Result<_, _>>()?;
    let bool_of = |k: &str| match get(&kv, k)? {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(malformed(format!("bad value for {k}"))),
    };
    let provenance = Provenance {
        session_id: unescape(get(&kv, "provenance.session_id")?),
        gripper_cal_digest: unescape(get(&kv, "provenance.gripper_cal_sha256")?),
        controller_cal_digest: unescape(get(&kv, "provenance.controller_cal_sha256")?),
        latency: LatencyEstimate {
            delta_star: num(&kv, "provenance.latency_s")?,
            residual_mse: num(&kv, "provenance.latency_residual_mse")?,
            overlap_fraction: num(&kv, "provenance.latency_overlap")?,
            passes: num(&kv, "provenance.latency_passes")?,
            final_width: num(&kv, "provenance.latency_final_width")?,
            flipped: bool_of("provenance.latency_flipped")?,
        },
        tactile_tau: num(&kv, "provenance.tactile_tau")?,
        tactile_hold_tolerance: num(&kv, "provenance.tactile_hold_tolerance")?,
        dropped_head: num(&kv, "provenance.dropped_head")?,
        dropped_tail: num(&kv, "provenance.dropped_tail")?,
        warnings,
    };
    Ok(Episode { frame_times, frame_indices, poses, widths, frame_flags, tactile_left, tactile_right, provenance })
}
