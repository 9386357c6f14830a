//! Turning a raw capture session into a synchronized episode: latency and
//! mount correction, resampling onto video frame times, tactile matching,
//! and the on-disk episode container.

mod container;
mod pipeline;
mod usability;

use thiserror::Error;

use crate::geometry::{GeometryError, Pose6D, Timestamp};
use crate::latency::{LatencyError, LatencyEstimate};
use crate::protocol::ProtocolError;
use crate::tactile::{QuantizedTactile, SensorId, TactileError};

pub use container::{read_episode, write_episode, ContainerError, EPISODE_SCHEMA_VERSION, MANIFEST_FILE};
pub use pipeline::{build_episode, estimate_session_latency, marker_track, PipelineConfig, SessionLatencyOptions};
pub use usability::{usability_report, LatencyChoice, SessionJob, SessionOutcome};

/// Per-frame flag: width query fell outside the calibrated count range.
pub const FLAG_WIDTH_OUT_OF_RANGE: u8 = 1;
/// Per-frame flag: frame time lies outside the encoder stream's span; the
/// nearest end sample was held.
pub const FLAG_WIDTH_HELD: u8 = 2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PipelineError {
    #[error("session has no usable {0} stream")]
    MissingStream(&'static str),
    #[error("no video frame lies inside the pose span after latency correction")]
    EmptySpan,
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error(transparent)]
    Latency(#[from] LatencyError),
    #[error(transparent)]
    Tactile(#[from] TactileError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

impl PipelineError {
    pub fn code(&self) -> &'static str {
        match self {
            PipelineError::MissingStream(_) => "MissingStream",
            PipelineError::EmptySpan => "EmptySpan",
            PipelineError::Protocol(e) => e.code(),
            PipelineError::Latency(e) => e.code(),
            PipelineError::Tactile(e) => e.code(),
            PipelineError::Geometry(_) => "GeometryError",
        }
    }
}

/// One processed tactile image kept in an episode.
#[derive(Debug, Clone, PartialEq)]
pub struct TactileSample {
    pub t: Timestamp,
    pub raw: Vec<u8>,
    pub processed: QuantizedTactile,
    /// Active-pixel ratio computed before quantization.
    pub active_ratio: f64,
}

/// Tactile images for one sensor. Samples are stored once; each episode
/// frame points at the held sample or is absent.
#[derive(Debug, Clone, PartialEq)]
pub struct TactileTrack {
    pub sensor: SensorId,
    pub height: usize,
    pub width: usize,
    pub samples: Vec<TactileSample>,
    pub frame_sample: Vec<Option<u32>>,
}

impl TactileTrack {
    pub fn empty(sensor: SensorId, frames: usize) -> Self {
        Self { sensor, height: 0, width: 0, samples: Vec::new(), frame_sample: vec![None; frames] }
    }

    pub fn frame(&self, i: usize) -> Option<&TactileSample> {
        self.frame_sample.get(i).copied().flatten().map(|k| &self.samples[k as usize])
    }
}

/// Where an episode came from.
#[derive(Debug, Clone, PartialEq)]
pub struct Provenance {
    pub session_id: String,
    pub gripper_cal_digest: String,
    pub controller_cal_digest: String,
    pub latency: LatencyEstimate,
    pub tactile_tau: f64,
    pub tactile_hold_tolerance: f64,
    pub dropped_head: u32,
    pub dropped_tail: u32,
    pub warnings: Vec<String>,
}

/// All streams resampled onto the video frame clock.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub frame_times: Vec<Timestamp>,
    pub frame_indices: Vec<u32>,
    pub poses: Vec<Pose6D>,
    /// `None` when the session had no encoder stream.
    pub widths: Option<Vec<f64>>,
    pub frame_flags: Vec<u8>,
    pub tactile_left: TactileTrack,
    pub tactile_right: TactileTrack,
    pub provenance: Provenance,
}

impl Episode {
    pub fn len(&self) -> usize {
        self.frame_times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frame_times.is_empty()
    }

    pub fn tactile(&self, sensor: SensorId) -> &TactileTrack {
        match sensor {
            SensorId::Left => &self.tactile_left,
            SensorId::Right => &self.tactile_right,
        }
    }

    /// Fraction of frames where some present tactile image is active at `threshold`.
    pub fn active_tactile_fraction(&self, threshold: f64) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        let active = (0..self.len())
            .filter(|&i| {
                [&self.tactile_left, &self.tactile_right]
                    .iter()
                    .any(|tr| tr.frame(i).is_some_and(|s| s.active_ratio >= threshold))
            })
            .count();
        active as f64 / self.len() as f64
    }
}
