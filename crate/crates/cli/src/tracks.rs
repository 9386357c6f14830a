//! Loading standalone MoCap and marker tracks for latency calibration. Each
//! file is either a binary stream log (as written to a session directory) or
//! whitespace-separated text with one sample per line.

use std::fs;
use std::path::Path;

use demosync::geometry::{Pose6D, PoseSample, Trajectory1D, UnitQuaternion, Vec3};
use demosync::protocol::{decode_stream, Payload, StreamKind, MAGIC};

use crate::error::{CliError, CliResult};

fn parse_rows(text: &str, path: &Path, min: usize, max: usize) -> CliResult<Vec<Vec<f64>>> {
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let vals: Vec<f64> = line
            .split(|c: char| c.is_whitespace() || c == ',')
            .filter(|s| !s.is_empty())
            .map(|s| s.parse::<f64>().ok().filter(|v| v.is_finite()))
            .collect::<Option<_>>()
            .ok_or_else(|| CliError::new("ParseError", format!("{}:{}: non-numeric field", path.display(), i + 1)))?;
        if vals.len() < min || vals.len() > max {
            return Err(CliError::new(
                "ParseError",
                format!("{}:{}: expected {min} to {max} columns, got {}", path.display(), i + 1, vals.len()),
            ));
        }
        rows.push(vals);
    }
    Ok(rows)
}

/// Decodes every record of `kind` from a binary log. A damaged tail is fatal
/// here: calibration input should be clean.
fn log_payloads(bytes: &[u8], path: &Path, kind: StreamKind) -> CliResult<Vec<(f64, Payload)>> {
    let (records, err) = decode_stream(bytes);
    if let Some((offset, e)) = err {
        return Err(CliError::new("CorruptLog", format!("{} at byte {offset}: {e}", path.display())));
    }
    records
        .into_iter()
        .filter(|r| r.kind == kind)
        .map(|r| Ok((r.timestamp, r.payload().map_err(|e| CliError::from(e).at(path))?)))
        .collect()
}

fn read(path: &Path) -> CliResult<Vec<u8>> {
    fs::read(path).map_err(|e| CliError::io(path, e))
}

/// Pose samples from a pose log or `t x y z [qw qx qy qz]` text.
pub fn read_pose_track(path: &Path) -> CliResult<Vec<PoseSample>> {
    let bytes = read(path)?;
    if bytes.starts_with(&MAGIC) {
        return Ok(log_payloads(&bytes, path, StreamKind::Pose)?
            .into_iter()
            .filter_map(|(t, p)| match p {
                Payload::Pose(pose) => Some(PoseSample { t, pose }),
                _ => None,
            })
            .collect());
    }
    let text = String::from_utf8_lossy(&bytes);
    parse_rows(&text, path, 4, 8)?
        .into_iter()
        .map(|r| {
            let orientation = match r.len() {
                4 => UnitQuaternion::IDENTITY,
                8 => UnitQuaternion::new_normalize(r[4], r[5], r[6], r[7]).map_err(|e| CliError::from(e).at(path))?,
                n => {
                    return Err(CliError::new(
                        "ParseError",
                        format!("{}: pose rows need 4 or 8 columns, got {n}", path.display()),
                    ))
                }
            };
            Ok(PoseSample { t: r[0], pose: Pose6D::new(Vec3::new(r[1], r[2], r[3]), orientation) })
        })
        .collect()
}

/// One marker pixel coordinate from a marker log or `t u v` text.
pub fn read_marker_track(path: &Path, vertical: bool) -> CliResult<Trajectory1D> {
    let bytes = read(path)?;
    let samples: Vec<(f64, f64)> = if bytes.starts_with(&MAGIC) {
        log_payloads(&bytes, path, StreamKind::Marker)?
            .into_iter()
            .filter_map(|(t, p)| match p {
                Payload::Marker { u, v } => Some((t, if vertical { v } else { u })),
                _ => None,
            })
            .collect()
    } else {
        parse_rows(&String::from_utf8_lossy(&bytes), path, 2, 3)?
            .into_iter()
            .map(|r| {
                let col = if vertical { 2 } else { 1 };
                r.get(col).map(|&v| (r[0], v)).ok_or_else(|| {
                    CliError::new("ParseError", format!("{}: no vertical coordinate column", path.display()))
                })
            })
            .collect::<CliResult<_>>()?
    };
    let (times, values) = samples.into_iter().unzip();
    Trajectory1D::new(times, values).map_err(|e| CliError::from(e).at(path))
}
