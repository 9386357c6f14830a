//! One-time calibrations: encoder count to gripper width, and the AR
//! controller mount correction.

use std::fmt::Write as _;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::geometry::{Pose6D, RigidTransform, UnitQuaternion, Vec3};
use crate::text::{fmt_f64, KeyValues};

/// Counts per revolution of the 12-bit magnetic encoder.
pub const ENCODER_COUNTS: u32 = 4096;
const HALF_TURN: f64 = (ENCODER_COUNTS / 2) as f64;

/// Extrapolation allowance beyond the end knots, meters.
pub const WIDTH_MARGIN: f64 = 0.005;
pub const MAX_WIDTH: f64 = 0.2;

pub const CALIBRATION_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CalibrationError {
    #[error("encoder reading {0} outside [0, 4096)")]
    InvalidReading(u32),
    #[error("need at least 2 calibration samples, got {0}")]
    NotEnoughSamples(usize),
    #[error("duplicate calibration width {0} m")]
    DuplicateWidth(f64),
    #[error("calibration width {0} m outside [0, 0.2] m")]
    WidthOutOfRange(f64),
    #[error("encoder counts are not monotone in width near {width} m")]
    NonMonotonic { width: f64 },
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("expected a {expected} calibration, found '{found}'")]
    WrongKind { expected: &'static str, found: String },
    #[error("unsupported calibration format_version {0}")]
    UnsupportedVersion(u32),
}

impl CalibrationError {
    pub fn code(&self) -> &'static str {
        match self {
            CalibrationError::InvalidReading(_) => "InvalidReading",
            CalibrationError::NotEnoughSamples(_) => "NotEnoughSamples",
            CalibrationError::DuplicateWidth(_) => "DuplicateWidth",
            CalibrationError::WidthOutOfRange(_) => "WidthOutOfRange",
            CalibrationError::NonMonotonic { .. } => "NonMonotonic",
            CalibrationError::Parse { .. } => "ParseError",
            CalibrationError::WrongKind { .. } => "WrongKind",
            CalibrationError::UnsupportedVersion(_) => "SchemaVersionMismatch",
        }
    }
}

/// Raw 12-bit angle count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EncoderReading(u16);

impl EncoderReading {
    pub fn new(raw: u32) -> Result<Self, CalibrationError> {
        if raw >= ENCODER_COUNTS {
            return Err(CalibrationError::InvalidReading(raw));
        }
        Ok(Self(raw as u16))
    }

    /// Reduces any integer count modulo one revolution.
    pub fn wrapping(count: i64) -> Self {
        Self(count.rem_euclid(ENCODER_COUNTS as i64) as u16)
    }

    pub fn raw(self) -> u16 {
        self.0
    }
}

/// Signed count difference `to - from`, wrapped into `[-2048, 2048)`.
fn wrapped_step(from: f64, to: u16) -> f64 {
    let d = (to as f64 - from.rem_euclid(ENCODER_COUNTS as f64)).rem_euclid(ENCODER_COUNTS as f64);
    if d >= HALF_TURN {
        d - ENCODER_COUNTS as f64
    } else {
        d
    }
}

/// Removes the 4096-count wraps from a reading sequence. Assumes the shaft
/// moves less than half a revolution between consecutive readings; a larger
/// jump is indistinguishable from a wrap and is unwrapped the short way.
pub fn unwrap_counts(readings: &[EncoderReading]) -> Vec<f64> {
    let mut out = Vec::with_capacity(readings.len());
    let mut prev: Option<f64> = None;
    for r in readings {
        let next = match prev {
            None => r.0 as f64,
            Some(p) => p + wrapped_step(p, r.0),
        };
        out.push(next);
        prev = Some(next);
    }
    out
}

/// Monotone lookup from unwrapped encoder count to jaw width.
#[derive(Debug, Clone, PartialEq)]
pub struct GripperCalibration {
    knots: Vec<(f64, f64)>,
}

impl GripperCalibration {
    /// Builds from `(unwrapped_count, width)` knots, validating monotonicity.
    pub fn from_knots(mut knots: Vec<(f64, f64)>) -> Result<Self, CalibrationError> {
        if knots.len() < 2 {
            return Err(CalibrationError::NotEnoughSamples(knots.len()));
        }
        for &(c, w) in &knots {
            if !c.is_finite() {
                return Err(CalibrationError::Parse { line: 0, msg: "non-finite count".into() });
            }
            if !(0.0..=MAX_WIDTH).contains(&w) {
                return Err(CalibrationError::WidthOutOfRange(w));
            }
        }
        knots.sort_by(|a, b| a.1.total_cmp(&b.1));
        if let Some(w) = knots.windows(2).find(|p| p[0].1 == p[1].1) {
            return Err(CalibrationError::DuplicateWidth(w[0].1));
        }
        let rising = knots[1].0 > knots[0].0;
        for p in knots.windows(2) {
            let ok = if rising { p[1].0 > p[0].0 } else { p[1].0 < p[0].0 };
            if !ok {
                return Err(CalibrationError::NonMonotonic { width: p[1].1 });
            }
        }
        knots.sort_by(|a, b| a.0.total_cmp(&b.0));
        Ok(Self { knots })
    }

    pub fn knots(&self) -> &[(f64, f64)] {
        &self.knots
    }

    pub fn count_range(&self) -> (f64, f64) {
        (self.knots[0].0, self.knots[self.knots.len() - 1].0)
    }

    pub fn width_range(&self) -> (f64, f64) {
        let (a, b) = (self.knots[0].1, self.knots[self.knots.len() - 1].1);
        (a.min(b), a.max(b))
    }

    /// Width for an unwrapped count, plus whether the count lay inside the
    /// calibrated range. Outside it the end segment is extended and the
    /// result clamped to 5 mm beyond the calibrated widths (never below 0).
    pub fn width_at(&self, count: f64) -> (f64, bool) {
        let k = &self.knots;
        let n = k.len();
        let (c0, c1) = self.count_range();
        let inside = count >= c0 && count <= c1;
        let idx = k.partition_point(|p| p.0 < count);
        if idx < n && k[idx].0 == count {
            return (k[idx].1, true);
        }
        let i = idx.saturating_sub(1).min(n - 2);
        let (a, b) = (k[i], k[i + 1]);
        let w = a.1 + (b.1 - a.1) * (count - a.0) / (b.0 - a.0);
        if inside {
            return (w, true);
        }
        let (lo, hi) = self.width_range();
        (w.clamp((lo - WIDTH_MARGIN).max(0.0), hi + WIDTH_MARGIN), false)
    }

    /// Unwrapped value for a stream's first reading: the revolution that puts
    /// it closest to the middle of the calibrated count range.
    pub fn initial_unwrapped(&self, reading: EncoderReading) -> f64 {
        let (c0, c1) = self.count_range();
        let mid = 0.5 * (c0 + c1);
        let turns = ((mid - reading.0 as f64) / ENCODER_COUNTS as f64).round();
        reading.0 as f64 + turns * ENCODER_COUNTS as f64
    }

    pub fn to_text(&self, created_at: &str) -> String {
        let (lo, hi) = self.width_range();
        let mut s = header("gripper", created_at);
        let _ = writeln!(s, "range_min_m = {}", fmt_f64(lo));
        let _ = writeln!(s, "range_max_m = {}", fmt_f64(hi));
        let _ = writeln!(s, "knots = {}", self.knots.len());
        s.push_str("[data]\n# unwrapped_count width_m\n");
        for (c, w) in &self.knots {
            let _ = writeln!(s, "{} {}", fmt_f64(*c), fmt_f64(*w));
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self, CalibrationError> {
        let (kv, rows) = split_calibration(text, "gripper")?;
        let mut knots = Vec::with_capacity(rows.len());
        for (line, fields) in rows {
            if fields.len() != 2 {
                return Err(CalibrationError::Parse { line, msg: "expected 'unwrapped_count width_m'".into() });
            }
            knots.push((parse_num(fields[0], line)?, parse_num(fields[1], line)?));
        }
        if let Some(n) = kv.get("knots") {
            if n.parse::<usize>().ok() != Some(knots.len()) {
                return Err(CalibrationError::Parse {
                    line: 0,
                    msg: format!("header declares {n} knots, found {}", knots.len()),
                });
            }
        }
        Self::from_knots(knots)
    }
}

/// Builds the count-to-width map from a calibration sweep. Samples are
/// unwrapped in the order given, so they should follow the physical sweep.
pub fn build_gripper_map(samples: &[(EncoderReading, f64)]) -> Result<GripperCalibration, CalibrationError> {
    if samples.len() < 2 {
        return Err(CalibrationError::NotEnoughSamples(samples.len()));
    }
    let readings: Vec<EncoderReading> = samples.iter().map(|s| s.0).collect();
    let counts = unwrap_counts(&readings);
    GripperCalibration::from_knots(counts.into_iter().zip(samples.iter().map(|s| s.1)).collect())
}

/// Streaming conversion: unwraps `reading` relative to `prev_unwrapped` and
/// looks up the width. Returns `(width, unwrapped)`.
pub fn encoder_to_width(cal: &GripperCalibration, reading: EncoderReading, prev_unwrapped: f64) -> (f64, f64) {
    let unwrapped = prev_unwrapped + wrapped_step(prev_unwrapped, reading.0);
    (cal.width_at(unwrapped).0, unwrapped)
}

/// Mount correction for the AR controller.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControllerCalibration {
    pub correction: RigidTransform,
}

/// `recorded` is the controller pose while the device sits at the base pose.
pub fn make_controller_calibration(recorded: &RigidTransform) -> ControllerCalibration {
    ControllerCalibration { correction: recorded.invert() }
}

/// Right-composes the correction: a constant offset in the tool frame.
pub fn apply_correction(cal: &ControllerCalibration, raw: &Pose6D) -> Pose6D {
    raw.to_transform().compose(&cal.correction).to_pose()
}

impl ControllerCalibration {
    pub fn to_text(&self, created_at: &str) -> String {
        let mut s = header("controller", created_at);
        s.push_str("[data]\n# qw qx qy qz tx ty tz\n");
        s.push_str(&format_transform(&self.correction));
        s.push('\n');
        s
    }

    pub fn from_text(text: &str) -> Result<Self, CalibrationError> {
        let (_, rows) = split_calibration(text, "controller")?;
        match rows.as_slice() {
            [(line, fields)] => Ok(Self { correction: parse_transform(fields, *line)? }),
            _ => Err(CalibrationError::Parse { line: 0, msg: "expected exactly one 7-value row".into() }),
        }
    }
}

/// `qw qx qy qz tx ty tz` with the quaternion canonicalized to `w >= 0`.
pub fn format_transform(t: &RigidTransform) -> String {
    let q = t.rotation.canonical();
    [q.w, q.x, q.y, q.z, t.translation.x, t.translation.y, t.translation.z]
        .iter()
        .map(|v| fmt_f64(*v))
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn parse_transform(fields: &[&str], line: usize) -> Result<RigidTransform, CalibrationError> {
    if fields.len() != 7 {
        return Err(CalibrationError::Parse { line, msg: "expected 7 values 'qw qx qy qz tx ty tz'".into() });
    }
    let v: Vec<f64> = fields.iter().map(|f| parse_num(f, line)).collect::<Result<_, _>>()?;
    let q = UnitQuaternion::new_normalize(v[0], v[1], v[2], v[3])
        .map_err(|e| CalibrationError::Parse { line, msg: e.to_string() })?;
    Ok(RigidTransform::new(q, Vec3::new(v[4], v[5], v[6])))
}

/// Parses a single transform from a file of `qw qx qy qz tx ty tz` (comments allowed).
pub fn parse_recorded_transform(text: &str) -> Result<RigidTransform, CalibrationError> {
    let rows = data_rows(text.lines().enumerate());
    match rows.as_slice() {
        [(line, fields)] => parse_transform(fields, *line),
        _ => Err(CalibrationError::Parse { line: 0, msg: "expected exactly one 7-value row".into() }),
    }
}

/// Parses a gripper sweep: one `raw_count width_m` per line, in sweep order.
pub fn parse_gripper_samples(text: &str) -> Result<Vec<(EncoderReading, f64)>, CalibrationError> {
    data_rows(text.lines().enumerate())
        .into_iter()
        .map(|(line, f)| {
            if f.len() != 2 {
                return Err(CalibrationError::Parse { line, msg: "expected 'raw_count width_m'".into() });
            }
            let raw: u32 =
                f[0].parse().map_err(|_| CalibrationError::Parse { line, msg: format!("bad count '{}'", f[0]) })?;
            Ok((EncoderReading::new(raw)?, parse_num(f[1], line)?))
        })
        .collect()
}

pub fn format_gripper_samples(samples: &[(EncoderReading, f64)]) -> String {
    let mut s = String::from("# raw_count width_m\n");
    for (r, w) in samples {
        let _ = writeln!(s, "{} {}", r.raw(), fmt_f64(*w));
    }
    s
}

/// Hex SHA-256 of a calibration file's bytes.
pub fn digest(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

fn header(kind: &str, created_at: &str) -> String {
    format!(
        "# demosync calibration\nformat_version = {CALIBRATION_FORMAT_VERSION}\ncreated_at = {created_at}\nkind = {kind}\n"
    )
}

fn parse_num(s: &str, line: usize) -> Result<f64, CalibrationError> {
    s.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| CalibrationError::Parse { line, msg: format!("bad number '{s}'") })
}

type Rows<'a> = Vec<(usize, Vec<&'a str>)>;

fn data_rows<'a>(lines: impl Iterator<Item = (usize, &'a str)>) -> Rows<'a> {
    lines
        .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
        .filter(|(_, l)| !l.is_empty())
        .map(|(i, l)| (i, l.split_whitespace().collect()))
        .collect()
}

fn split_calibration<'a>(text: &'a str, kind: &'static str) -> Result<(KeyValues, Rows<'a>), CalibrationError> {
    let Some(pos) = text.find("[data]") else {
        return Err(CalibrationError::Parse { line: 0, msg: "missing [data] section".into() });
    };
    let kv = KeyValues::parse(&text[..pos]).map_err(|(line, msg)| CalibrationError::Parse { line, msg })?;
    let version: u32 = kv
        .get("format_version")
        .and_then(|v| v.parse().ok())
        .ok_or(CalibrationError::Parse { line: 0, msg: "missing format_version".into() })?;
    if version != CALIBRATION_FORMAT_VERSION {
        return Err(CalibrationError::UnsupportedVersion(version));
    }
    match kv.get("kind") {
        Some(k) if k == kind => {}
        other => return Err(CalibrationError::WrongKind { expected: kind, found: other.unwrap_or("").to_string() }),
    }
    let first_data_line = text[..pos].lines().count() + 1;
    let rows =
        data_rows(text[pos + "[data]".len()..].lines().enumerate().skip(1).map(|(i, l)| (i + first_data_line - 1, l)));
    Ok((kv, rows))
}
