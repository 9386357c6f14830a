#![allow(dead_code)]

use demosync::calibration::{build_gripper_map, make_controller_calibration, EncoderReading};
use demosync::episode::{
    build_episode, estimate_session_latency, Episode, PipelineConfig, Provenance, SessionLatencyOptions, TactileSample,
    TactileTrack,
};
use demosync::geometry::{Pose6D, UnitQuaternion, Vec3};
use demosync::latency::LatencyEstimate;
use demosync::protocol::{Payload, RawSession, StreamKind};
use demosync::sim::{generate_session, GroundTruth, SimScenario};
use demosync::tactile::{QuantizedTactile, SensorId};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Default scenario with small tactile images.
pub fn scenario(seed: u64) -> SimScenario {
    SimScenario { tactile_height: 48, tactile_width: 64, ..SimScenario::with_seed(seed) }
}

pub fn noiseless(sc: SimScenario) -> SimScenario {
    SimScenario { noise_sigma_pose: 0.0, noise_sigma_marker: 0.0, noise_sigma_tactile: 0.0, ..sc }
}

/// Pipeline configuration from the scenario's own calibration outputs.
pub fn config_for(sc: &SimScenario, latency: LatencyEstimate) -> PipelineConfig {
    let gripper = build_gripper_map(&sc.gripper_sweep()).unwrap();
    let controller = make_controller_calibration(&sc.controller_recorded());
    PipelineConfig::new(latency, gripper, controller)
}

/// Generate, estimate latency from the sweep, and build the episode.
pub fn run(sc: &SimScenario) -> (RawSession, GroundTruth, Episode) {
    let (session, gt) = generate_session(sc).unwrap();
    let mut cfg = config_for(sc, LatencyEstimate::fixed(0.0));
    cfg.latency = estimate_session_latency(&session, &cfg.controller_cal, &SessionLatencyOptions::default()).unwrap();
    let ep = build_episode(&session, &cfg).unwrap();
    (session, gt, ep)
}

fn random_track(rng: &mut ChaCha8Rng, sensor: SensorId, frames: usize, h: usize, w: usize) -> TactileTrack {
    if rng.random_bool(0.2) {
        return TactileTrack::empty(sensor, frames);
    }
    let n = rng.random_range(1..6usize);
    let samples = (0..n)
        .map(|i| {
            let mut ch = || (0..h * w).map(|_| rng.random::<u16>()).collect::<Vec<_>>();
            let processed = QuantizedTactile { height: h, width: w, gray: ch(), convex: ch(), concave: ch() };
            TactileSample {
                t: i as f64 * 0.05 + rng.random::<f64>() * 1e-3,
                raw: (0..h * w).map(|_| rng.random()).collect(),
                processed,
                active_ratio: rng.random(),
            }
        })
        .collect();
    let frame_sample = (0..frames).map(|_| rng.random_bool(0.7).then(|| rng.random_range(0..n as u32))).collect();
    TactileTrack { sensor, height: h, width: w, samples, frame_sample }
}

/// Random episode with arbitrary (but finite) bit patterns.
pub fn random_episode(seed: u64, frames: usize) -> Episode {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (h, w) = (rng.random_range(1..8usize), rng.random_range(1..8usize));
    let mut t = rng.random_range(-1.0..1.0);
    let frame_times = (0..frames)
        .map(|_| {
            t += rng.random_range(0.01..0.05);
            t
        })
        .collect();
    let poses = (0..frames)
        .map(|_| {
            let q = UnitQuaternion::new_normalize(
                rng.random_range(0.01..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            )
            .unwrap();
            Pose6D::new(Vec3::new(rng.random(), rng.random(), rng.random::<f64>() * -1e3), q)
        })
        .collect();
    let widths = rng.random_bool(0.8).then(|| (0..frames).map(|_| rng.random_range(0.0..0.1)).collect());
    let warnings = (0..rng.random_range(0..3)).map(|i| format!("warning {i}: a=b, \\ line\nbreak")).collect();
    Episode {
        frame_times,
        frame_indices: (0..frames as u32).map(|i| i * 2 + 1).collect(),
        poses,
        widths,
        frame_flags: (0..frames).map(|_| rng.random_range(0..4)).collect(),
        tactile_left: random_track(&mut rng, SensorId::Left, frames, h, w),
        tactile_right: random_track(&mut rng, SensorId::Right, frames, h, w),
        provenance: Provenance {
            session_id: format!("fuzz-{seed}"),
            gripper_cal_digest: format!("{:064x}", rng.random::<u128>()),
            controller_cal_digest: format!("{:064x}", rng.random::<u128>()),
            latency: LatencyEstimate {
                delta_star: rng.random_range(-0.5..0.5),
                residual_mse: rng.random(),
                overlap_fraction: rng.random(),
                passes: rng.random_range(1..5),
                final_width: rng.random::<f64>() * 1e-4,
                flipped: rng.random(),
            },
            tactile_tau: 0.06,
            tactile_hold_tolerance: 0.1,
            dropped_head: rng.random_range(0..10),
            dropped_tail: rng.random_range(0..10),
            warnings,
        },
    }
}

pub fn random_payload(rng: &mut ChaCha8Rng, kind: StreamKind) -> Payload {
    match kind {
        StreamKind::Pose => {
            let q = UnitQuaternion::new_normalize(
                rng.random_range(0.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            )
            .unwrap();
            let p = Vec3::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
            Payload::Pose(Pose6D::new(p, q))
        }
        StreamKind::Encoder => Payload::Encoder(EncoderReading::new(rng.random_range(0..4096)).unwrap()),
        StreamKind::Tactile => {
            let (h, w) = (rng.random_range(1..6u16), rng.random_range(1..6u16));
            Payload::Tactile {
                sensor: if rng.random_bool(0.5) { SensorId::Left } else { SensorId::Right },
                height: h,
                width: w,
                pixels: (0..h as usize * w as usize).map(|_| rng.random()).collect(),
            }
        }
        StreamKind::VideoMeta => Payload::VideoMeta { frame_index: rng.random() },
        StreamKind::Marker => {
            Payload::Marker { u: rng.random_range(-500.0..500.0), v: rng.random_range(-500.0..500.0) }
        }
    }
}
