//! Tactile frame preprocessing: reference subtraction into a 3-channel
//! (gray, convex, concave) image, and the active-pixel curation rule.

use thiserror::Error;

use crate::geometry::Timestamp;

pub const DEFAULT_HEIGHT: usize = 240;
pub const DEFAULT_WIDTH: usize = 320;
/// Minimum no-contact frames averaged into a reference.
pub const DEFAULT_REFERENCE_FRAMES: usize = 10;
/// Deviation threshold in normalized intensity.
pub const DEFAULT_TAU: f64 = 0.06;
pub const DEFAULT_CURATION_THRESHOLD: f64 = 0.01;
/// Frames per curation chunk (the policy's temporal window).
pub const DEFAULT_CHUNK_LEN: usize = 8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TactileError {
    #[error("need at least {needed} reference frames, got {got}")]
    TooFewFrames { needed: usize, got: usize },
    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    ShapeMismatch { expected: (usize, usize), got: (usize, usize) },
    #[error("tau must lie in (0, 1), got {0}")]
    InvalidTau(f64),
    #[error("cannot curate an empty chunk")]
    EmptyChunk,
}

impl TactileError {
    pub fn code(&self) -> &'static str {
        match self {
            TactileError::TooFewFrames { .. } => "TooFewFrames",
            TactileError::ShapeMismatch { .. } => "ShapeMismatch",
            TactileError::InvalidTau(_) => "InvalidTau",
            TactileError::EmptyChunk => "EmptyChunk",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SensorId {
    Left = 0,
    Right = 1,
}

impl SensorId {
    pub fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(SensorId::Left),
            1 => Some(SensorId::Right),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SensorId::Left => "left",
            SensorId::Right => "right",
        }
    }
}

/// One 8-bit grayscale tactile image, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct TactileFrame {
    pub t: Timestamp,
    pub sensor: SensorId,
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<u8>,
}

impl TactileFrame {
    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }
}

/// ITU-R BT.601 luma, for color sensors at ingestion.
pub fn rgb_to_gray(rgb: &[u8]) -> Vec<u8> {
    rgb.chunks_exact(3)
        .map(|p| (0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64).round().min(255.0) as u8)
        .collect()
}

/// Mean of no-contact frames, in raw intensity units.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceFrame {
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<f64>,
}

/// Gray, convex and concave channels, each in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProcessedTactile {
    pub t: Timestamp,
    pub height: usize,
    pub width: usize,
    pub gray: Vec<f64>,
    pub convex: Vec<f64>,
    pub concave: Vec<f64>,
}

pub fn build_reference(frames: &[TactileFrame], min_frames: usize) -> Result<ReferenceFrame, TactileError> {
    if frames.len() < min_frames.max(1) {
        return Err(TactileError::TooFewFrames { needed: min_frames.max(1), got: frames.len() });
    }
    let (h, w) = frames[0].shape();
    let mut sum = vec![0u64; h * w];
    for f in frames {
        if f.shape() != (h, w) || f.pixels.len() != h * w {
            return Err(TactileError::ShapeMismatch { expected: (h, w), got: f.shape() });
        }
        for (s, &p) in sum.iter_mut().zip(&f.pixels) {
            *s += p as u64;
        }
    }
    let n = frames.len() as f64;
    Ok(ReferenceFrame { height: h, width: w, pixels: sum.into_iter().map(|s| s as f64 / n).collect() })
}

/// Thresholded signed difference against the reference:
/// `d = frame/255 - ref/255`, `convex = max(d - tau, 0) / (1 - tau)`,
/// `concave = max(-d - tau, 0) / (1 - tau)`.
pub fn process_frame(
    frame: &TactileFrame,
    reference: &ReferenceFrame,
    tau: f64,
) -> Result<ProcessedTactile, TactileError> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(TactileError::InvalidTau(tau));
    }
    let shape = (reference.height, reference.width);
    if frame.shape() != shape || frame.pixels.len() != shape.0 * shape.1 || reference.pixels.len() != shape.0 * shape.1
    {
        return Err(TactileError::ShapeMismatch { expected: shape, got: frame.shape() });
    }
    let n = frame.pixels.len();
    let (mut gray, mut convex, mut concave) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    let scale = 1.0 / (1.0 - tau);
    for (&p, &r) in frame.pixels.iter().zip(&reference.pixels) {
        let g = p as f64 / 255.0;
        let d = g - r / 255.0;
        gray.push(g);
        convex.push(((d - tau).max(0.0) * scale).clamp(0.0, 1.0));
        concave.push(((-d - tau).max(0.0) * scale).clamp(0.0, 1.0));
    }
    Ok(ProcessedTactile { t: frame.t, height: shape.0, width: shape.1, gray, convex, concave })
}

/// Fraction of pixels where either deformation channel is nonzero.
pub fn active_ratio(p: &ProcessedTactile) -> f64 {
    let n = p.convex.len();
    if n == 0 {
        return 0.0;
    }
    let active = p.convex.iter().zip(&p.concave).filter(|(a, b)| **a > 0.0 || **b > 0.0).count();
    active as f64 / n as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChunkDecision {
    Accept,
    Reject,
}

/// Rejects a chunk only when every frame's active ratio is below `threshold`.
pub fn curate_chunk(frames: &[ProcessedTactile], threshold: f64) -> Result<ChunkDecision, TactileError> {
    curate_ratios(&frames.iter().map(active_ratio).collect::<Vec<_>>(), threshold)
}

/// [`curate_chunk`] on precomputed active ratios.
pub fn curate_ratios(ratios: &[f64], threshold: f64) -> Result<ChunkDecision, TactileError> {
    if ratios.is_empty() {
        return Err(TactileError::EmptyChunk);
    }
    if ratios.iter().all(|&r| r < threshold) {
        Ok(ChunkDecision::Reject)
    } else {
        Ok(ChunkDecision::Accept)
    }
}

/// 16-bit fixed-point form of [`ProcessedTactile`] (value × 65535, ties to even).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuantizedTactile {
    pub height: usize,
    pub width: usize,
    pub gray: Vec<u16>,
    pub convex: Vec<u16>,
    pub concave: Vec<u16>,
}

pub fn to_fixed(v: f64) -> u16 {
    (v.clamp(0.0, 1.0) * 65535.0).round_ties_even() as u16
}

pub fn from_fixed(v: u16) -> f64 {
    v as f64 / 65535.0
}

impl QuantizedTactile {
    pub fn from_processed(p: &ProcessedTactile) -> Self {
        let q = |c: &[f64]| c.iter().map(|&v| to_fixed(v)).collect();
        Self { height: p.height, width: p.width, gray: q(&p.gray), convex: q(&p.convex), concave: q(&p.concave) }
    }

    pub fn to_processed(&self, t: Timestamp) -> ProcessedTactile {
        let d = |c: &[u16]| c.iter().map(|&v| from_fixed(v)).collect();
        ProcessedTactile {
            t,
            height: self.height,
            width: self.width,
            gray: d(&self.gray),
            convex: d(&self.convex),
            concave: d(&self.concave),
        }
    }
}
