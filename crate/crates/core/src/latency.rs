//! Cross-stream latency estimation by iterated grid refinement of the
//! mean-squared error between two 1-D trajectories.
//!
//! Given a reference track `f` and a delayed track `g`, the estimator finds
//! `delta` such that `f(t) ≈ g(t + delta)`: a positive `delta` means `g`
//! lags `f`. Each pass evaluates the MSE on `M + 1` evenly spaced offsets,
//! keeps the best one, and narrows the search to `N` grid steps either side
//! of it, until the search interval is narrower than `epsilon`.

use thiserror::Error;

use crate::geometry::{bracket, Axis, GeometryError, PoseSample, Trajectory1D};
use crate::text::fmt_f64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LatencyError {
    #[error("pose track is empty")]
    EmptyTrack,
    #[error("signal is degenerate (variance {variance:e}); a constant track cannot be aligned")]
    DegenerateSignal { variance: f64 },
    #[error("no candidate offset in [{min}, {max}] leaves enough overlap")]
    NoValidOffset { min: f64, max: f64 },
    #[error("invalid latency config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

impl LatencyError {
    pub fn code(&self) -> &'static str {
        match self {
            LatencyError::EmptyTrack => "EmptyTrack",
            LatencyError::DegenerateSignal { .. } => "DegenerateSignal",
            LatencyError::NoValidOffset { .. } => "NoValidOffset",
            LatencyError::InvalidConfig(_) => "InvalidConfig",
            LatencyError::Geometry(_) => "InvalidTrajectory",
        }
    }
}

/// Variance below which a track is treated as constant.
pub const MIN_VARIANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatencyConfig {
    /// Stop once the search interval is narrower than this (seconds).
    pub epsilon: f64,
    /// Grid segments per pass.
    pub splits: usize,
    /// Neighbourhood half-width kept around the best grid index.
    pub window: usize,
    pub delta_min: f64,
    pub delta_max: f64,
    /// Minimum fraction of `f`'s samples that must land inside `g`'s span.
    pub min_overlap_fraction: f64,
}

impl Default for LatencyConfig {
    fn default() -> Self {
        Self { epsilon: 1e-4, splits: 100, window: 2, delta_min: -0.5, delta_max: 0.5, min_overlap_fraction: 0.5 }
    }
}

impl LatencyConfig {
    pub fn with_bounds(delta_min: f64, delta_max: f64) -> Self {
        Self { delta_min, delta_max, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), LatencyError> {
        let bad = |m: &str| Err(LatencyError::InvalidConfig(m.to_string()));
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return bad("epsilon must be positive");
        }
        if self.window == 0 || self.splits < 2 * self.window + 2 {
            return bad("splits must be at least 2 * window + 2 and window positive");
        }
        if !(self.delta_min.is_finite() && self.delta_max.is_finite() && self.delta_min < self.delta_max) {
            return bad("delta_min must be below delta_max");
        }
        if !(self.min_overlap_fraction > 0.0 && self.min_overlap_fraction <= 1.0) {
            return bad("min_overlap_fraction must lie in (0, 1]");
        }
        Ok(())
    }

    /// Upper bound on refinement passes for this config.
    pub fn max_passes(&self) -> usize {
        let shrink = self.splits as f64 / (2.0 * self.window as f64);
        let ratio = (self.delta_max - self.delta_min) / self.epsilon;
        if ratio <= 1.0 {
            return 1;
        }
        (ratio.ln() / shrink.ln()).ceil() as usize + 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatencyEstimate {
    /// How far `g` lags `f`, in seconds.
    pub delta_star: f64,
    pub residual_mse: f64,
    pub overlap_fraction: f64,
    pub passes: u32,
    /// Width of the search interval when the loop stopped.
    pub final_width: f64,
    /// True when `g` was sign-flipped to obtain this estimate.
    pub flipped: bool,
}

impl LatencyEstimate {
    /// A caller-supplied latency with no fit statistics.
    pub fn fixed(delta_star: f64) -> Self {
        Self { delta_star, residual_mse: 0.0, overlap_fraction: 1.0, passes: 0, final_width: 0.0, flipped: false }
    }

    /// One-line `latency key=value ...` record; floats keep 17 significant digits.
    pub fn to_record(&self) -> String {
        format!(
            "latency delta_star={} residual_mse={} overlap_fraction={} passes={} final_width={} flipped={}",
            fmt_f64(self.delta_star),
            fmt_f64(self.residual_mse),
            fmt_f64(self.overlap_fraction),
            self.passes,
            fmt_f64(self.final_width),
            self.flipped
        )
    }

    /// Parses [`Self::to_record`] output. A bare number is read as a fixed latency.
    pub fn from_record(text: &str) -> Option<Self> {
        let line = text.lines().map(str::trim).find(|l| !l.is_empty() && !l.starts_with('#'))?;
        if let Ok(v) = line.parse::<f64>() {
            return v.is_finite().then(|| Self::fixed(v));
        }
        let mut fields = line.split_whitespace();
        if fields.next()? != "latency" {
            return None;
        }
        let mut est = Self::fixed(f64::NAN);
        for field in fields {
            let (k, v) = field.split_once('=')?;
            let num = || v.parse::<f64>().ok().filter(|x| x.is_finite());
            match k {
                "delta_star" => est.delta_star = num()?,
                "residual_mse" => est.residual_mse = num()?,
                "overlap_fraction" => est.overlap_fraction = num()?,
                "final_width" => est.final_width = num()?,
                "passes" => est.passes = v.parse().ok()?,
                "flipped" => est.flipped = v.parse().ok()?,
                _ => return None,
            }
        }
        est.delta_star.is_finite().then_some(est)
    }
}

/// One position component of a pose track as a scalar trajectory.
pub fn extract_axis(track: &[PoseSample], axis: Axis) -> Result<Trajectory1D, LatencyError> {
    if track.is_empty() {
        return Err(LatencyError::EmptyTrack);
    }
    let times = track.iter().map(|s| s.t).collect();
    let values = track.iter().map(|s| s.pose.position.component(axis)).collect();
    Ok(Trajectory1D::new(times, values)?)
}

/// Shifts to zero mean and scales to unit sample standard deviation (n - 1 denominator).
pub fn zscore_normalize(traj: &Trajectory1D) -> Result<Trajectory1D, LatencyError> {
    let n = traj.len();
    if n < 2 {
        return Err(GeometryError::TooShort { needed: 2, got: n }.into());
    }
    let v = traj.values();
    let mean = v.iter().sum::<f64>() / n as f64;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
    if !(var >= MIN_VARIANCE) {
        return Err(LatencyError::DegenerateSignal { variance: var });
    }
    let sd = var.sqrt();
    Ok(traj.map_values(|x| (x - mean) / sd))
}

/// MSE of `f` against `g` shifted by `delta`, restricted to samples whose
/// shifted time falls inside `g`'s span. Returns `(mse, overlap_fraction)`;
/// the MSE is infinite when the overlap is below `min_overlap`.
pub fn shifted_mse(f: &Trajectory1D, g: &Trajectory1D, delta: f64, min_overlap: f64) -> (f64, f64) {
    let (gt, gv) = (g.times(), g.values());
    let (Some(&g0), Some(&g1)) = (gt.first(), gt.last()) else {
        return (f64::INFINITY, 0.0);
    };
    if gt.len() < 2 || f.is_empty() {
        return (f64::INFINITY, 0.0);
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for (&t, &fv) in f.times().iter().zip(f.values()) {
        let q = t + delta;
        if q < g0 || q > g1 {
            continue;
        }
        let gq = match bracket(gt, q) {
            Ok(i) => gv[i],
            Err((i, u)) => gv[i] + (gv[i + 1] - gv[i]) * u,
        };
        let d = fv - gq;
        sum += d * d;
        count += 1;
    }
    let overlap = count as f64 / f.len() as f64;
    if count == 0 || overlap < min_overlap {
        return (f64::INFINITY, overlap);
    }
    (sum / count as f64, overlap)
}

/// Estimates how far `g` lags `f`. Both tracks are z-score normalized first,
/// so they may be in different units. `f`'s timestamps are the evaluation grid.
pub fn estimate_latency(
    f: &Trajectory1D,
    g: &Trajectory1D,
    cfg: &LatencyConfig,
) -> Result<LatencyEstimate, LatencyError> {
    cfg.validate()?;
    let f = zscore_normalize(f)?;
    let g = zscore_normalize(g)?;
    refine(&f, &g, cfg, false)
}

/// Like [`estimate_latency`], but also tries `-g` and keeps whichever sign fits better.
pub fn estimate_latency_allow_flip(
    f: &Trajectory1D,
    g: &Trajectory1D,
    cfg: &LatencyConfig,
) -> Result<LatencyEstimate, LatencyError> {
    cfg.validate()?;
    let f = zscore_normalize(f)?;
    let g = zscore_normalize(g)?;
    let plain = refine(&f, &g, cfg, false);
    let flipped = refine(&f, &g.map_values(|v| -v), cfg, true);
    match (plain, flipped) {
        (Ok(a), Ok(b)) => Ok(if b.residual_mse < a.residual_mse { b } else { a }),
        (Ok(a), Err(_)) => Ok(a),
        (Err(_), Ok(b)) => Ok(b),
        (Err(e), Err(_)) => Err(e),
    }
}

fn refine(
    f: &Trajectory1D,
    g: &Trajectory1D,
    cfg: &LatencyConfig,
    flipped: bool,
) -> Result<LatencyEstimate, LatencyError> {
    let (lo0, hi0) = (cfg.delta_min, cfg.delta_max);
    let (mut lo, mut hi) = (lo0, hi0);
    let m = cfg.splits;
    let n = cfg.window;
    let mut best: Option<(f64, f64, f64)> = None;
    let mut passes = 0u32;
    loop {
        passes += 1;
        let step = (hi - lo) / m as f64;
        let grid: Vec<f64> = (0..=m).map(|k| if k == m { hi } else { lo + step * k as f64 }).collect();
        // Strict `<` keeps the lowest index on ties, so the result does not
        // depend on evaluation order.
        let mut arg: Option<(usize, f64, f64)> = None;
        for (k, &d) in grid.iter().enumerate() {
            let (mse, ov) = shifted_mse(f, g, d, cfg.min_overlap_fraction);
            if mse.is_finite() && arg.is_none_or(|(_, b, _)| mse < b) {
                arg = Some((k, mse, ov));
            }
        }
        let Some((k, mse, ov)) = arg else {
            if best.is_none() {
                return Err(LatencyError::NoValidOffset { min: lo0, max: hi0 });
            }
            break;
        };
        best = Some((grid[k], mse, ov));
        lo = grid[k.saturating_sub(n)].max(lo0);
        hi = grid[(k + n).min(m)].min(hi0);
        if hi - lo < cfg.epsilon {
            break;
        }
    }
    let (delta_star, residual_mse, overlap_fraction) = best.expect("at least one pass succeeded");
    Ok(LatencyEstimate { delta_star, residual_mse, overlap_fraction, passes, final_width: hi - lo, flipped })
}

/// Shifts every timestamp by `delta`.
pub fn apply_latency(track: &[PoseSample], delta: f64) -> Vec<PoseSample> {
    track.iter().map(|s| PoseSample { t: s.t + delta, pose: s.pose }).collect()
}
