use std::collections::HashMap;

use crate::calibration::{apply_correction, digest, encoder_to_width, ControllerCalibration, GripperCalibration};
use crate::geometry::{bracket, interp_pose, Axis, PoseSample, Timestamp, Trajectory1D};
use crate::latency::{
    apply_latency, estimate_latency, estimate_latency_allow_flip, extract_axis, LatencyConfig, LatencyEstimate,
};
use crate::protocol::{RawSession, StreamKind};
use crate::tactile::{
    active_ratio, build_reference, process_frame, QuantizedTactile, SensorId, TactileFrame, DEFAULT_REFERENCE_FRAMES,
    DEFAULT_TAU,
};

use super::{
    Episode, PipelineError, Provenance, TactileSample, TactileTrack, FLAG_WIDTH_HELD, FLAG_WIDTH_OUT_OF_RANGE,
};

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    /// Latency of the pose stream relative to the video clock.
    pub latency: LatencyEstimate,
    pub gripper_cal: GripperCalibration,
    pub controller_cal: ControllerCalibration,
    pub gripper_cal_digest: String,
    pub controller_cal_digest: String,
    pub tactile_tau: f64,
    /// Maximum age of a held tactile image, seconds.
    pub tactile_hold_tolerance: f64,
    /// Leading no-contact frames averaged into each sensor's reference.
    pub reference_frames: usize,
    /// Expected video rate; a mismatch with the recorded frame times is warned about.
    pub video_fps_hint: f64,
}

impl PipelineConfig {
    /// Defaults for everything but the calibrations. Digests are taken over
    /// the calibrations' canonical text; callers that loaded calibration
    /// files should overwrite them with the file digests.
    pub fn new(
        latency: LatencyEstimate,
        gripper_cal: GripperCalibration,
        controller_cal: ControllerCalibration,
    ) -> Self {
        let gripper_cal_digest = digest(&gripper_cal.to_text("-"));
        let controller_cal_digest = digest(&controller_cal.to_text("-"));
        Self {
            latency,
            gripper_cal,
            controller_cal,
            gripper_cal_digest,
            controller_cal_digest,
            tactile_tau: DEFAULT_TAU,
            tactile_hold_tolerance: 0.1,
            reference_frames: DEFAULT_REFERENCE_FRAMES,
            video_fps_hint: 30.0,
        }
    }
}

/// How to derive the pose latency from a session's own calibration sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SessionLatencyOptions {
    pub config: LatencyConfig,
    pub axis: Axis,
    /// Use the marker's vertical pixel coordinate instead of the horizontal one.
    pub marker_vertical: bool,
    pub allow_flip: bool,
}

impl Default for SessionLatencyOptions {
    fn default() -> Self {
        Self { config: LatencyConfig::default(), axis: Axis::X, marker_vertical: false, allow_flip: false }
    }
}

/// Marker pixel coordinate over time.
pub fn marker_track(session: &RawSession, vertical: bool) -> Result<Trajectory1D, PipelineError> {
    let m = session.markers()?;
    if m.len() < 2 {
        return Err(PipelineError::MissingStream("marker"));
    }
    let times = m.iter().map(|x| x.0).collect();
    let values = m.iter().map(|x| if vertical { x.2 } else { x.1 }).collect();
    Ok(Trajectory1D::new(times, values)?)
}

/// Estimates the pose stream's lag behind the camera clock from the
/// session's marker sweep. The marker track is the reference (`f`) and the
/// mount-corrected pose axis the delayed track (`g`).
pub fn estimate_session_latency(
    session: &RawSession,
    controller_cal: &ControllerCalibration,
    opts: &SessionLatencyOptions,
) -> Result<LatencyEstimate, PipelineError> {
    let f = marker_track(session, opts.marker_vertical)?;
    let poses = session.poses()?;
    if poses.len() < 2 {
        return Err(PipelineError::MissingStream("pose"));
    }
    let corrected: Vec<PoseSample> =
        poses.iter().map(|s| PoseSample { t: s.t, pose: apply_correction(controller_cal, &s.pose) }).collect();
    let g = extract_axis(&corrected, opts.axis)?;
    let est = if opts.allow_flip {
        estimate_latency_allow_flip(&f, &g, &opts.config)?
    } else {
        estimate_latency(&f, &g, &opts.config)?
    };
    Ok(est)
}

pub fn build_episode(session: &RawSession, cfg: &PipelineConfig) -> Result<Episode, PipelineError> {
    let mut warnings = session.warnings.clone();

    let video = session.video_frames()?;
    if video.is_empty() {
        return Err(PipelineError::MissingStream("video_meta"));
    }
    check_video_rate(&video, cfg.video_fps_hint, &mut warnings);

    let raw_poses = session.poses()?;
    if raw_poses.len() < 2 {
        return Err(PipelineError::MissingStream("pose"));
    }
    // Move the pose stream onto the video clock, then undo the mount offset.
    let poses: Vec<PoseSample> = apply_latency(&raw_poses, -cfg.latency.delta_star)
        .into_iter()
        .map(|s| PoseSample { t: s.t, pose: apply_correction(&cfg.controller_cal, &s.pose) })
        .collect();
    let (p0, p1) = (poses[0].t, poses[poses.len() - 1].t);

    let first = video.partition_point(|v| v.0 < p0);
    let end = video.partition_point(|v| v.0 <= p1);
    if first >= end {
        return Err(PipelineError::EmptySpan);
    }
    let kept = &video[first..end];
    let frame_times: Vec<Timestamp> = kept.iter().map(|v| v.0).collect();
    let frame_indices: Vec<u32> = kept.iter().map(|v| v.1).collect();

    let mut out_poses = Vec::with_capacity(kept.len());
    for &t in &frame_times {
        let mut p = interp_pose(&poses, t)?;
        p.orientation = p.orientation.canonical();
        out_poses.push(p);
    }

    let mut frame_flags = vec![0u8; kept.len()];
    let widths = match widths_at(session, &cfg.gripper_cal, &frame_times, &mut frame_flags)? {
        Some(w) => Some(w),
        None => {
            warnings.push("MissingStream encoder: widths absent".into());
            None
        }
    };
    let out_of_range = frame_flags.iter().filter(|f| **f & FLAG_WIDTH_OUT_OF_RANGE != 0).count();
    if out_of_range > 0 {
        warnings.push(format!("CalibrationRangeExceeded on {out_of_range} frames"));
    }

    let tactile = session.tactile()?;
    let mut track_for = |sensor: SensorId| -> Result<TactileTrack, PipelineError> {
        let frames: Vec<&TactileFrame> = tactile.iter().filter(|f| f.sensor == sensor).collect();
        match tactile_track(sensor, &frames, &frame_times, cfg) {
            Ok(Some(tr)) => Ok(tr),
            Ok(None) => Ok(TactileTrack::empty(sensor, frame_times.len())),
            Err(e) => {
                warnings.push(format!("Tactile {}: {e}; channel absent", sensor.name()));
                Ok(TactileTrack::empty(sensor, frame_times.len()))
            }
        }
    };
    let tactile_left = track_for(SensorId::Left)?;
    let tactile_right = track_for(SensorId::Right)?;

    Ok(Episode {
        frame_times,
        frame_indices,
        poses: out_poses,
        widths,
        frame_flags,
        tactile_left,
        tactile_right,
        provenance: Provenance {
            session_id: session.header.session_id.clone(),
            gripper_cal_digest: cfg.gripper_cal_digest.clone(),
            controller_cal_digest: cfg.controller_cal_digest.clone(),
            latency: cfg.latency,
            tactile_tau: cfg.tactile_tau,
            tactile_hold_tolerance: cfg.tactile_hold_tolerance,
            dropped_head: first as u32,
            dropped_tail: (video.len() - end) as u32,
            warnings,
        },
    })
}

fn check_video_rate(video: &[(Timestamp, u32)], hint: f64, warnings: &mut Vec<String>) {
    if video.len() < 3 || !(hint > 0.0) {
        return;
    }
    let mut periods: Vec<f64> = video.windows(2).map(|w| w[1].0 - w[0].0).collect();
    periods.sort_by(f64::total_cmp);
    let median = periods[periods.len() / 2];
    if (median * hint - 1.0).abs() > 0.1 {
        warnings.push(format!("VideoRate median frame period {median:.6} s disagrees with {hint} fps hint"));
    }
}

/// Gripper width at each frame time, linearly interpolated between encoder
/// samples. `None` when the session has no encoder stream.
fn widths_at(
    session: &RawSession,
    cal: &GripperCalibration,
    frame_times: &[Timestamp],
    flags: &mut [u8],
) -> Result<Option<Vec<f64>>, PipelineError> {
    if !session.has_stream(StreamKind::Encoder) {
        return Ok(None);
    }
    let enc = session.encoder()?;
    let Some(&(_, first)) = enc.first() else {
        return Ok(None);
    };
    let mut prev = cal.initial_unwrapped(first);
    let mut times = Vec::with_capacity(enc.len());
    let mut samples: Vec<(f64, bool)> = Vec::with_capacity(enc.len());
    for &(t, r) in &enc {
        let (_, unwrapped) = encoder_to_width(cal, r, prev);
        prev = unwrapped;
        times.push(t);
        samples.push(cal.width_at(unwrapped));
    }
    let mut out = Vec::with_capacity(frame_times.len());
    for (i, &t) in frame_times.iter().enumerate() {
        let (w, inside) = if times.len() == 1 || t <= times[0] {
            if t != times[0] {
                flags[i] |= FLAG_WIDTH_HELD;
            }
            samples[0]
        } else if t >= times[times.len() - 1] {
            if t != times[times.len() - 1] {
                flags[i] |= FLAG_WIDTH_HELD;
            }
            samples[samples.len() - 1]
        } else {
            match bracket(&times, t) {
                Ok(k) => samples[k],
                Err((k, u)) => {
                    let (a, b) = (samples[k], samples[k + 1]);
                    (a.0 + (b.0 - a.0) * u, a.1 && b.1)
                }
            }
        };
        if !inside {
            flags[i] |= FLAG_WIDTH_OUT_OF_RANGE;
        }
        out.push(w);
    }
    Ok(Some(out))
}

/// Reference from the leading frames, then hold-last matching per frame.
/// `Ok(None)` when the sensor sent nothing.
fn tactile_track(
    sensor: SensorId,
    frames: &[&TactileFrame],
    frame_times: &[Timestamp],
    cfg: &PipelineConfig,
) -> Result<Option<TactileTrack>, PipelineError> {
    if frames.is_empty() {
        return Ok(None);
    }
    let k = cfg.reference_frames.min(frames.len());
    let ref_frames: Vec<TactileFrame> = frames[..k].iter().map(|f| (*f).clone()).collect();
    let reference = build_reference(&ref_frames, cfg.reference_frames)?;
    let mut samples = Vec::new();
    let mut index: HashMap<usize, u32> = HashMap::new();
    let mut frame_sample = Vec::with_capacity(frame_times.len());
    for &t in frame_times {
        let held = frames.partition_point(|f| f.t <= t);
        if held == 0 || t - frames[held - 1].t > cfg.tactile_hold_tolerance {
            frame_sample.push(None);
            continue;
        }
        let src = held - 1;
        let slot = match index.get(&src) {
            Some(&s) => s,
            None => {
                let f = frames[src];
                let p = process_frame(f, &reference, cfg.tactile_tau)?;
                samples.push(TactileSample {
                    t: f.t,
                    raw: f.pixels.clone(),
                    processed: QuantizedTactile::from_processed(&p),
                    active_ratio: active_ratio(&p),
                });
                let s = (samples.len() - 1) as u32;
                index.insert(src, s);
                s
            }
        };
        frame_sample.push(Some(slot));
    }
    Ok(Some(TactileTrack { sensor, height: reference.height, width: reference.width, samples, frame_sample }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calibration::{build_gripper_map, make_controller_calibration, EncoderReading};
    use crate::geometry::{Pose6D, RigidTransform, UnitQuaternion, Vec3};
    use crate::protocol::{Payload, WireRecord};

    fn gripper() -> GripperCalibration {
        build_gripper_map(
            &(0..=8).map(|i| (EncoderReading::new(100 * i).unwrap(), i as f64 * 0.01)).collect::<Vec<_>>(),
        )
        .unwrap()
    }

    fn session(with_encoder: bool) -> RawSession {
        let mut s = RawSession::new("unit", 0.0);
        for k in 0..120 {
            let t = k as f64 / 60.0;
            let p = Pose6D::new(Vec3::new(t, 0.0, 0.0), UnitQuaternion::IDENTITY);
            s.push(WireRecord::new(StreamKind::Pose, t, &Payload::Pose(p))).unwrap();
        }
        for j in 0..70 {
            let t = j as f64 / 30.0 - 0.1;
            s.push(WireRecord::new(StreamKind::VideoMeta, t, &Payload::VideoMeta { frame_index: j })).unwrap();
        }
        if with_encoder {
            for k in 0..200 {
                let t = k as f64 / 100.0;
                let r = EncoderReading::new(400).unwrap();
                s.push(WireRecord::new(StreamKind::Encoder, t, &Payload::Encoder(r))).unwrap();
            }
        }
        s
    }

    fn config() -> PipelineConfig {
        PipelineConfig::new(
            LatencyEstimate::fixed(0.0),
            gripper(),
            make_controller_calibration(&RigidTransform::IDENTITY),
        )
    }

    #[test]
    fn frames_outside_pose_span_dropped() {
        let ep = build_episode(&session(true), &config()).unwrap();
        // Video runs from -0.1 s; poses from 0 to 119/60.
        assert_eq!(ep.provenance.dropped_head, 3);
        assert!(ep.frame_times.iter().all(|&t| (0.0..=119.0 / 60.0).contains(&t)));
        assert_eq!(ep.len() as u32 + ep.provenance.dropped_head + ep.provenance.dropped_tail, 70);
        for (t, p) in ep.frame_times.iter().zip(&ep.poses) {
            assert!((p.position.x - t).abs() < 1e-12);
        }
        assert!(ep.widths.as_ref().unwrap().iter().all(|&w| (w - 0.04).abs() < 1e-15));
    }

    #[test]
    fn missing_streams() {
        let ep = build_episode(&session(false), &config()).unwrap();
        assert!(ep.widths.is_none());
        assert!(ep.provenance.warnings.iter().any(|w| w.contains("encoder")));
        let mut s = session(true);
        s.remove_stream(StreamKind::Pose);
        assert_eq!(build_episode(&s, &config()).unwrap_err(), PipelineError::MissingStream("pose"));
        let mut s = session(true);
        s.remove_stream(StreamKind::VideoMeta);
        assert_eq!(build_episode(&s, &config()).unwrap_err(), PipelineError::MissingStream("video_meta"));
    }

    #[test]
    fn latency_shift_can_empty_the_span() {
        let mut cfg = config();
        cfg.latency = LatencyEstimate::fixed(100.0);
        assert_eq!(build_episode(&session(true), &cfg).unwrap_err(), PipelineError::EmptySpan);
    }
}
