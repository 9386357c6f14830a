//! Synthetic capture sessions with known ground truth.
//!
//! A hand-held tool sweeps sinusoidally above a marker while the gripper
//! opens and closes and the tactile pads touch objects on a schedule. Each
//! sensor samples the truth on its own clock, shifted by its injected
//! latency, with its own RNG sub-stream.

use std::f64::consts::PI;
use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::calibration::EncoderReading;
use crate::episode::Episode;
use crate::geometry::{Pose6D, RigidTransform, Timestamp, UnitQuaternion, Vec3};
use crate::protocol::{Payload, RawSession, StreamKind, WireRecord};
use crate::report::ErrorStats;
use crate::tactile::{SensorId, DEFAULT_CURATION_THRESHOLD, DEFAULT_TAU};
use crate::text::{fmt_f64, parse_list, parse_tuple, KeyValues};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
}

impl SimError {
    pub fn code(&self) -> &'static str {
        "InvalidScenario"
    }
}

fn invalid(msg: impl Into<String>) -> SimError {
    SimError::InvalidScenario(msg.into())
}

/// One tactile contact, applied to both pads while `start <= t < end`.
/// Center and radius are fractions of the image; depth is in normalized
/// intensity (the center darkens by `depth`, the ring brightens).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Contact {
    pub start: f64,
    pub end: f64,
    pub center_x: f64,
    pub center_y: f64,
    pub radius: f64,
    pub depth: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimScenario {
    pub session_id: String,
    pub seed: u64,
    pub duration: f64,
    pub mocap_hz: f64,
    pub video_hz: f64,
    pub encoder_hz: f64,
    /// Per pad; the right pad is sampled half a period after the left.
    pub tactile_hz: f64,
    pub sweep_amplitude: f64,
    pub sweep_freq: f64,
    /// Slow relative amplitude modulation of the sweep, so that shifts by a
    /// whole sweep period do not align.
    pub sweep_modulation: f64,
    pub sweep_modulation_freq: f64,
    /// Peak rotation about the tool z axis, radians, at the sweep frequency.
    pub rotation_amplitude: f64,
    pub base_position: Vec3,
    pub base_orientation: UnitQuaternion,
    pub latency_pose: f64,
    /// Applies to the video frames and the marker track.
    pub latency_video: f64,
    pub latency_encoder: f64,
    pub latency_tactile: f64,
    pub mount_offset: RigidTransform,
    pub noise_sigma_pose: f64,
    pub noise_sigma_marker: f64,
    pub noise_sigma_tactile: f64,
    pub marker_scale: f64,
    pub contact_schedule: Vec<Contact>,
    /// Piecewise-linear `(time, width)` knots, held constant outside.
    pub width_profile: Vec<(f64, f64)>,
    /// Raw count model: `count = count_offset + counts_per_meter * width`, wrapped mod 4096.
    pub count_offset: f64,
    pub counts_per_meter: f64,
    pub tactile_height: usize,
    pub tactile_width: usize,
    pub marker_enabled: bool,
    pub encoder_enabled: bool,
    pub tactile_enabled: bool,
}

impl Default for SimScenario {
    fn default() -> Self {
        let mut widths = vec![(0.0, 0.08)];
        for c in 0..2 {
            let t0 = 1.0 + 4.0 * c as f64;
            widths.extend([(t0, 0.08), (t0 + 1.0, 0.03), (t0 + 2.0, 0.03), (t0 + 3.0, 0.08)]);
        }
        widths.push((10.0, 0.08));
        Self {
            session_id: "sim".into(),
            seed: 0,
            duration: 10.0,
            mocap_hz: 60.0,
            video_hz: 30.0,
            encoder_hz: 100.0,
            tactile_hz: 20.0,
            sweep_amplitude: 0.2,
            sweep_freq: 1.0,
            sweep_modulation: 0.2,
            sweep_modulation_freq: 0.1,
            rotation_amplitude: 0.0,
            base_position: Vec3::new(0.4, 0.0, 0.3),
            base_orientation: UnitQuaternion::from_axis_angle(Vec3::new(0.2, 0.3, 1.0), 0.5),
            latency_pose: 0.137,
            latency_video: 0.0,
            latency_encoder: 0.0,
            latency_tactile: 0.0,
            mount_offset: RigidTransform::new(
                UnitQuaternion::from_axis_angle(Vec3::new(1.0, 1.0, 0.0), 20f64.to_radians()),
                Vec3::new(0.03, -0.02, 0.12),
            ),
            noise_sigma_pose: 0.002,
            noise_sigma_marker: 3.2,
            noise_sigma_tactile: 0.02,
            marker_scale: 1600.0,
            contact_schedule: vec![
                Contact { start: 1.0, end: 4.0, center_x: 0.5, center_y: 0.5, radius: 0.3, depth: 0.25 },
                Contact { start: 5.0, end: 8.0, center_x: 0.4, center_y: 0.6, radius: 0.25, depth: 0.2 },
            ],
            width_profile: widths,
            count_offset: 3700.0,
            counts_per_meter: 10000.0,
            tactile_height: crate::tactile::DEFAULT_HEIGHT,
            tactile_width: crate::tactile::DEFAULT_WIDTH,
            marker_enabled: true,
            encoder_enabled: true,
            tactile_enabled: true,
        }
    }
}

fn num(key: &str, v: &str) -> Result<f64, SimError> {
    v.parse::<f64>()
        .ok()
        .filter(|x| x.is_finite())
        .ok_or_else(|| invalid(format!("{key}: '{v}' is not a finite number")))
}

fn nums(key: &str, v: &str, n: usize) -> Result<Vec<f64>, SimError> {
    let items = parse_tuple(v).ok_or_else(|| invalid(format!("{key}: expected a '(...)' tuple")))?;
    if items.len() != n {
        return Err(invalid(format!("{key}: expected {n} values, got {}", items.len())));
    }
    items.iter().map(|s| num(key, s)).collect()
}

fn tuples(key: &str, v: &str, n: usize) -> Result<Vec<Vec<f64>>, SimError> {
    let items = parse_list(v).ok_or_else(|| invalid(format!("{key}: expected a '[...]' list")))?;
    items.iter().map(|s| nums(key, s, n)).collect()
}

/// Keeps already-unit quaternions bit-exact so resolved scenarios round-trip.
fn quaternion(key: &str, q: &[f64]) -> Result<UnitQuaternion, SimError> {
    let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    if (n - 1.0).abs() < 1e-12 {
        Ok(UnitQuaternion::from_parts_unchecked(q[0], q[1], q[2], q[3]))
    } else {
        UnitQuaternion::new_normalize(q[0], q[1], q[2], q[3]).map_err(|e| invalid(format!("{key}: {e}")))
    }
}

fn boolean(key: &str, v: &str) -> Result<bool, SimError> {
    match v {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(invalid(format!("{key}: expected true or false"))),
    }
}

fn fmt_tuple(v: &[f64]) -> String {
    format!("({})", v.iter().map(|x| fmt_f64(*x)).collect::<Vec<_>>().join(", "))
}

impl SimScenario {
    /// Scenario with every default but the seed; the session id follows the seed.
    pub fn with_seed(seed: u64) -> Self {
        Self { seed, session_id: format!("sim-{seed}"), ..Self::default() }
    }

    /// Parses `key = value` text; missing keys keep their defaults and
    /// unknown keys are rejected.
    pub fn from_text(text: &str) -> Result<Self, SimError> {
        let kv = KeyValues::parse(text).map_err(|(l, m)| invalid(format!("line {l}: {m}")))?;
        let mut sc = Self::default();
        let mut id_given = false;
        for (k, v) in kv.iter() {
            match k {
                "session_id" => {
                    sc.session_id = v.to_string();
                    id_given = true;
                }
                "seed" => {
                    sc.seed = v.parse().map_err(|_| invalid(format!("seed: '{v}' is not an unsigned integer")))?
                }
                "duration" => sc.duration = num(k, v)?,
                "mocap_hz" => sc.mocap_hz = num(k, v)?,
                "video_hz" => sc.video_hz = num(k, v)?,
                "encoder_hz" => sc.encoder_hz = num(k, v)?,
                "tactile_hz" => sc.tactile_hz = num(k, v)?,
                "sweep_amplitude" => sc.sweep_amplitude = num(k, v)?,
                "sweep_freq" => sc.sweep_freq = num(k, v)?,
                "sweep_modulation" => sc.sweep_modulation = num(k, v)?,
                "sweep_modulation_freq" => sc.sweep_modulation_freq = num(k, v)?,
                "rotation_amplitude" => sc.rotation_amplitude = num(k, v)?,
                "base_position" => {
                    let p = nums(k, v, 3)?;
                    sc.base_position = Vec3::new(p[0], p[1], p[2]);
                }
                "base_orientation" => {
                    let q = nums(k, v, 4)?;
                    sc.base_orientation = quaternion(k, &q)?;
                }
                "latency_pose" => sc.latency_pose = num(k, v)?,
                "latency_video" => sc.latency_video = num(k, v)?,
                "latency_encoder" => sc.latency_encoder = num(k, v)?,
                "latency_tactile" => sc.latency_tactile = num(k, v)?,
                "mount_offset" => {
                    let t = nums(k, v, 7)?;
                    let q = quaternion(k, &t[..4])?;
                    sc.mount_offset = RigidTransform::new(q, Vec3::new(t[4], t[5], t[6]));
                }
                "noise_sigma_pose" => sc.noise_sigma_pose = num(k, v)?,
                "noise_sigma_marker" => sc.noise_sigma_marker = num(k, v)?,
                "noise_sigma_tactile" => sc.noise_sigma_tactile = num(k, v)?,
                "marker_scale" => sc.marker_scale = num(k, v)?,
                "contact_schedule" => {
                    sc.contact_schedule = tuples(k, v, 6)?
                        .into_iter()
                        .map(|c| Contact {
                            start: c[0],
                            end: c[1],
                            center_x: c[2],
                            center_y: c[3],
                            radius: c[4],
                            depth: c[5],
                        })
                        .collect();
                }
                "width_profile" => sc.width_profile = tuples(k, v, 2)?.into_iter().map(|p| (p[0], p[1])).collect(),
                "count_offset" => sc.count_offset = num(k, v)?,
                "counts_per_meter" => sc.counts_per_meter = num(k, v)?,
                "tactile_height" | "tactile_width" => {
                    let n: usize = v.parse().map_err(|_| invalid(format!("{k}: '{v}' is not a size")))?;
                    if k == "tactile_height" {
                        sc.tactile_height = n;
                    } else {
                        sc.tactile_width = n;
                    }
                }
                "marker_enabled" => sc.marker_enabled = boolean(k, v)?,
                "encoder_enabled" => sc.encoder_enabled = boolean(k, v)?,
                "tactile_enabled" => sc.tactile_enabled = boolean(k, v)?,
                other => return Err(invalid(format!("unknown key '{other}'"))),
            }
        }
        if !id_given {
            sc.session_id = format!("sim-{}", sc.seed);
        }
        sc.validate()?;
        Ok(sc)
    }

    /// Fully resolved scenario text; parsing it gives back an identical scenario.
    pub fn to_text(&self) -> String {
        let mut s = String::from("# demosync simulator scenario\n");
        let q = self.base_orientation;
        let m = &self.mount_offset;
        let mq = m.rotation;
        let f = |v: f64| fmt_f64(v);
        let _ = writeln!(s, "session_id = {}", self.session_id);
        let _ = writeln!(s, "seed = {}", self.seed);
        for (k, v) in [
            ("duration", self.duration),
            ("mocap_hz", self.mocap_hz),
            ("video_hz", self.video_hz),
            ("encoder_hz", self.encoder_hz),
            ("tactile_hz", self.tactile_hz),
            ("sweep_amplitude", self.sweep_amplitude),
            ("sweep_freq", self.sweep_freq),
            ("sweep_modulation", self.sweep_modulation),
            ("sweep_modulation_freq", self.sweep_modulation_freq),
            ("rotation_amplitude", self.rotation_amplitude),
            ("latency_pose", self.latency_pose),
            ("latency_video", self.latency_video),
            ("latency_encoder", self.latency_encoder),
            ("latency_tactile", self.latency_tactile),
            ("noise_sigma_pose", self.noise_sigma_pose),
            ("noise_sigma_marker", self.noise_sigma_marker),
            ("noise_sigma_tactile", self.noise_sigma_tactile),
            ("marker_scale", self.marker_scale),
            ("count_offset", self.count_offset),
            ("counts_per_meter", self.counts_per_meter),
        ] {
            let _ = writeln!(s, "{k} = {}", f(v));
        }
        let p = self.base_position;
        let _ = writeln!(s, "base_position = {}", fmt_tuple(&[p.x, p.y, p.z]));
        let _ = writeln!(s, "base_orientation = {}", fmt_tuple(&[q.w, q.x, q.y, q.z]));
        let t = m.translation;
        let _ = writeln!(s, "mount_offset = {}", fmt_tuple(&[mq.w, mq.x, mq.y, mq.z, t.x, t.y, t.z]));
        let contacts: Vec<String> = self
            .contact_schedule
            .iter()
            .map(|c| fmt_tuple(&[c.start, c.end, c.center_x, c.center_y, c.radius, c.depth]))
            .collect();
        let _ = writeln!(s, "contact_schedule = [{}]", contacts.join(", "));
        let widths: Vec<String> = self.width_profile.iter().map(|(t, w)| fmt_tuple(&[*t, *w])).collect();
        let _ = writeln!(s, "width_profile = [{}]", widths.join(", "));
        let _ = writeln!(s, "tactile_height = {}", self.tactile_height);
        let _ = writeln!(s, "tactile_width = {}", self.tactile_width);
        let _ = writeln!(s, "marker_enabled = {}", self.marker_enabled);
        let _ = writeln!(s, "encoder_enabled = {}", self.encoder_enabled);
        let _ = writeln!(s, "tactile_enabled = {}", self.tactile_enabled);
        s
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.session_id.is_empty() || self.session_id.contains(['\n', '\r']) {
            return Err(invalid("session_id must be a non-empty single line"));
        }
        if !(self.duration > 0.0) {
            return Err(invalid("duration must be positive"));
        }
        for (k, r) in [
            ("mocap_hz", self.mocap_hz),
            ("video_hz", self.video_hz),
            ("encoder_hz", self.encoder_hz),
            ("tactile_hz", self.tactile_hz),
        ] {
            if !(r > 0.0) {
                return Err(invalid(format!("{k} must be positive")));
            }
        }
        for (k, s) in [
            ("noise_sigma_pose", self.noise_sigma_pose),
            ("noise_sigma_marker", self.noise_sigma_marker),
            ("noise_sigma_tactile", self.noise_sigma_tactile),
            ("sweep_amplitude", self.sweep_amplitude),
            ("sweep_freq", self.sweep_freq),
            ("sweep_modulation_freq", self.sweep_modulation_freq),
        ] {
            if s < 0.0 {
                return Err(invalid(format!("{k} must be non-negative")));
            }
        }
        if !(0.0..1.0).contains(&self.sweep_modulation) {
            return Err(invalid("sweep_modulation must lie in [0, 1)"));
        }
        if self.marker_enabled && self.duration * self.sweep_freq < 5.0 {
            return Err(invalid("a calibration sweep needs at least 5 sweep periods"));
        }
        if self.marker_scale == 0.0 {
            return Err(invalid("marker_scale must be nonzero"));
        }
        if self.counts_per_meter <= 0.0 {
            return Err(invalid("counts_per_meter must be positive"));
        }
        if self.width_profile.is_empty() {
            return Err(invalid("width_profile needs at least one knot"));
        }
        if self.width_profile.windows(2).any(|w| !(w[1].0 > w[0].0)) {
            return Err(invalid("width_profile times must strictly increase"));
        }
        if self.width_profile.iter().any(|(_, w)| !(0.0..=crate::calibration::MAX_WIDTH).contains(w)) {
            return Err(invalid("width_profile widths must lie in [0, 0.2] m"));
        }
        if self.tactile_enabled
            && (self.tactile_height == 0
                || self.tactile_width == 0
                || self.tactile_height > u16::MAX as usize
                || self.tactile_width > u16::MAX as usize)
        {
            return Err(invalid("tactile image size must be in 1..=65535"));
        }
        for c in &self.contact_schedule {
            if !(c.end > c.start) || !(c.radius > 0.0) || !(0.0..=1.0).contains(&c.depth) {
                return Err(invalid("contacts need end > start, radius > 0 and depth in [0, 1]"));
            }
        }
        Ok(())
    }

    /// Tool pose at true time `t`.
    pub fn tool_pose(&self, t: f64) -> Pose6D {
        let a = self.sweep_amplitude;
        let w = 2.0 * PI * self.sweep_freq;
        let envelope = 1.0 + self.sweep_modulation * (2.0 * PI * self.sweep_modulation_freq * t).sin();
        let offset = Vec3::new(
            a * envelope * (w * t).sin(),
            0.25 * a * (0.5 * w * t).sin(),
            0.1 * a * (1.0 - (0.25 * w * t).cos()),
        );
        let orientation = if self.rotation_amplitude == 0.0 {
            self.base_orientation
        } else {
            self.base_orientation * UnitQuaternion::exp(Vec3::new(0.0, 0.0, self.rotation_amplitude * (w * t).sin()))
        };
        Pose6D::new(self.base_position + offset, orientation)
    }

    /// Controller pose at true time `t`: the tool pose composed with the mount offset.
    pub fn controller_pose(&self, t: f64) -> Pose6D {
        self.tool_pose(t).to_transform().compose(&self.mount_offset).to_pose()
    }

    /// Gripper width at true time `t`.
    pub fn width(&self, t: f64) -> f64 {
        let p = &self.width_profile;
        if t <= p[0].0 {
            return p[0].1;
        }
        if t >= p[p.len() - 1].0 {
            return p[p.len() - 1].1;
        }
        let k = p.partition_point(|k| k.0 <= t) - 1;
        let (t0, w0) = p[k];
        let (t1, w1) = p[k + 1];
        w0 + (w1 - w0) * (t - t0) / (t1 - t0)
    }

    /// Raw encoder reading for a width.
    pub fn encoder_reading(&self, width: f64) -> EncoderReading {
        EncoderReading::wrapping((self.count_offset + self.counts_per_meter * width).round() as i64)
    }

    /// Calibration sweep in 1 cm steps from 0 to 10 cm, in sweep order.
    pub fn gripper_sweep(&self) -> Vec<(EncoderReading, f64)> {
        (0..=10).map(|i| i as f64 * 0.01).map(|w| (self.encoder_reading(w), w)).collect()
    }

    /// Controller pose recorded with the tool at the base pose (identity), which is the mount offset.
    pub fn controller_recorded(&self) -> RigidTransform {
        self.mount_offset
    }

    fn sample_times(&self, rate: f64, phase: f64) -> Vec<f64> {
        (0..).map(|k| (k as f64 + phase) / rate).take_while(|&t| t < self.duration).collect()
    }

    /// Truth for each tactile sample: recorded time, pad and true time.
    fn tactile_schedule(&self) -> Vec<(Timestamp, SensorId, f64)> {
        let left = self.sample_times(self.tactile_hz, 0.0);
        let right = self.sample_times(self.tactile_hz, 0.5);
        let mut all: Vec<(f64, SensorId, f64)> = left
            .into_iter()
            .map(|t| (t, SensorId::Left))
            .chain(right.into_iter().map(|t| (t, SensorId::Right)))
            .map(|(t, s)| (t + self.latency_tactile, s, t))
            .collect();
        all.sort_by(|a, b| a.0.total_cmp(&b.0).then((a.1 as u8).cmp(&(b.1 as u8))));
        all
    }

    fn active_contacts(&self, t: f64) -> Vec<usize> {
        (0..self.contact_schedule.len())
            .filter(|&i| {
                let c = &self.contact_schedule[i];
                c.start <= t && t < c.end
            })
            .collect()
    }
}

/// Noiseless tactile rendering for one pad.
struct TactileRenderer {
    height: usize,
    width: usize,
    background: [Vec<f64>; 2],
    /// Intensity change per contact, in raw units.
    contacts: Vec<Vec<f64>>,
}

impl TactileRenderer {
    fn new(sc: &SimScenario) -> Self {
        let (h, w) = (sc.tactile_height, sc.tactile_width);
        let bg = |offset: f64| -> Vec<f64> {
            (0..h * w)
                .map(|i| {
                    let (y, x) = ((i / w) as f64, (i % w) as f64);
                    110.0 + offset + 25.0 * (x / 11.0).sin() * (y / 13.0).cos()
                })
                .collect()
        };
        let contacts = sc
            .contact_schedule
            .iter()
            .map(|c| {
                let r = c.radius * h.min(w) as f64;
                let (cx, cy) = (c.center_x * w as f64, c.center_y * h as f64);
                (0..h * w)
                    .map(|i| {
                        let (y, x) = ((i / w) as f64 + 0.5, (i % w) as f64 + 0.5);
                        let s = ((x - cx).powi(2) + (y - cy).powi(2)).sqrt() / r;
                        if s < 1.0 {
                            // Dark core, bright ring, zero at the rim.
                            -c.depth * 255.0 * (1.5 * PI * s).cos() * (1.0 - s * s)
                        } else {
                            0.0
                        }
                    })
                    .collect()
            })
            .collect();
        Self { height: h, width: w, background: [bg(0.0), bg(10.0)], contacts }
    }

    fn noiseless(&self, sensor: SensorId, active: &[usize]) -> Vec<f64> {
        let mut img = self.background[sensor as usize].clone();
        for &c in active {
            for (p, d) in img.iter_mut().zip(&self.contacts[c]) {
                *p += d;
            }
        }
        img
    }

    /// Pixels whose noiseless deviation from the noiseless reference exceeds `tau`.
    fn active_count(&self, sensor: SensorId, active: &[usize], tau: f64) -> usize {
        if active.is_empty() {
            return 0;
        }
        let bg = &self.background[sensor as usize];
        self.noiseless(sensor, active)
            .iter()
            .zip(bg)
            .filter(|(p, b)| {
                let d = (quantize(**p) as f64 - quantize(**b) as f64) / 255.0;
                d.abs() > tau
            })
            .count()
    }
}

fn quantize(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

/// Everything the simulator knows about a session.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub scenario: SimScenario,
    /// Recorded time, pad and true active-pixel count of every tactile sample, in stream order.
    pub tactile_active: Vec<(Timestamp, SensorId, usize)>,
}

impl GroundTruth {
    pub fn new(scenario: SimScenario) -> Self {
        let mut tactile_active = Vec::new();
        if scenario.tactile_enabled {
            let renderer = TactileRenderer::new(&scenario);
            let mut cache: Vec<(Vec<usize>, [usize; 2])> = Vec::new();
            for (t_rec, sensor, t) in scenario.tactile_schedule() {
                let act = scenario.active_contacts(t);
                let counts = match cache.iter().find(|(a, _)| *a == act) {
                    Some((_, c)) => *c,
                    None => {
                        let c = [
                            renderer.active_count(SensorId::Left, &act, DEFAULT_TAU),
                            renderer.active_count(SensorId::Right, &act, DEFAULT_TAU),
                        ];
                        cache.push((act, c));
                        c
                    }
                };
                tactile_active.push((t_rec, sensor, counts[sensor as usize]));
            }
        }
        Self { scenario, tactile_active }
    }

    pub fn to_text(&self) -> String {
        self.scenario.to_text()
    }

    pub fn from_text(text: &str) -> Result<Self, SimError> {
        Ok(Self::new(SimScenario::from_text(text)?))
    }

    /// Lag of the pose clock behind the video clock, which is what latency calibration recovers.
    pub fn pose_latency(&self) -> f64 {
        self.scenario.latency_pose - self.scenario.latency_video
    }

    /// True tool pose at a video-clock time.
    pub fn tool_pose_at_frame(&self, frame_time: Timestamp) -> Pose6D {
        self.scenario.tool_pose(frame_time - self.scenario.latency_video)
    }

    pub fn width_at_frame(&self, frame_time: Timestamp) -> f64 {
        self.scenario.width(frame_time - self.scenario.latency_video)
    }

    /// Fraction of `frame_times` where a pad's held sample (hold-last within
    /// `tolerance`) has a true active ratio of at least `threshold`.
    pub fn active_frame_fraction(&self, frame_times: &[Timestamp], tolerance: f64, threshold: f64) -> f64 {
        if frame_times.is_empty() {
            return 0.0;
        }
        let px = (self.scenario.tactile_height * self.scenario.tactile_width) as f64;
        let per_pad: Vec<Vec<&(Timestamp, SensorId, usize)>> = [SensorId::Left, SensorId::Right]
            .iter()
            .map(|s| self.tactile_active.iter().filter(|x| x.1 == *s).collect())
            .collect();
        let active = frame_times
            .iter()
            .filter(|&&t| {
                per_pad.iter().any(|pad| {
                    let k = pad.partition_point(|x| x.0 <= t);
                    k > 0 && t - pad[k - 1].0 <= tolerance && pad[k - 1].2 as f64 / px >= threshold
                })
            })
            .count();
        active as f64 / frame_times.len() as f64
    }

    /// [`Self::active_frame_fraction`] at the default curation threshold.
    pub fn default_active_frame_fraction(&self, frame_times: &[Timestamp], tolerance: f64) -> f64 {
        self.active_frame_fraction(frame_times, tolerance, DEFAULT_CURATION_THRESHOLD)
    }
}

/// Per-sensor RNG sub-streams, so adding a sensor never perturbs the others.
mod substream {
    pub const POSE: u64 = 1;
    pub const MARKER: u64 = 2;
    pub const TACTILE_LEFT: u64 = 3;
    pub const TACTILE_RIGHT: u64 = 4;
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn normal(sigma: f64) -> Normal<f64> {
    Normal::new(0.0, sigma).expect("sigma validated as finite and non-negative")
}

pub fn generate_session(sc: &SimScenario) -> Result<(RawSession, GroundTruth), SimError> {
    sc.validate()?;
    let mut session = RawSession::new(sc.session_id.clone(), 0.0);
    let mut push = |kind: StreamKind, t: f64, p: &Payload| {
        session.push(WireRecord::new(kind, t, p)).map_err(|e| invalid(format!("generated {} stream: {e}", kind.name())))
    };

    let mut rng = rng_for(sc.seed, substream::POSE);
    let noise = normal(sc.noise_sigma_pose);
    for t in sc.sample_times(sc.mocap_hz, 0.0) {
        let mut p = sc.controller_pose(t);
        p.position = p.position + Vec3::new(noise.sample(&mut rng), noise.sample(&mut rng), noise.sample(&mut rng));
        push(StreamKind::Pose, t + sc.latency_pose, &Payload::Pose(p))?;
    }

    let video_times = sc.sample_times(sc.video_hz, 0.0);
    for (j, &t) in video_times.iter().enumerate() {
        push(StreamKind::VideoMeta, t + sc.latency_video, &Payload::VideoMeta { frame_index: j as u32 })?;
    }

    if sc.marker_enabled {
        let mut rng = rng_for(sc.seed, substream::MARKER);
        let noise = normal(sc.noise_sigma_marker);
        for &t in &video_times {
            let p = sc.tool_pose(t).position;
            let u = sc.marker_scale * p.x + noise.sample(&mut rng);
            let v = sc.marker_scale * p.y + noise.sample(&mut rng);
            push(StreamKind::Marker, t + sc.latency_video, &Payload::Marker { u, v })?;
        }
    }

    if sc.encoder_enabled {
        for t in sc.sample_times(sc.encoder_hz, 0.0) {
            push(StreamKind::Encoder, t + sc.latency_encoder, &Payload::Encoder(sc.encoder_reading(sc.width(t))))?;
        }
    }

    if sc.tactile_enabled {
        let renderer = TactileRenderer::new(sc);
        let noise = normal(sc.noise_sigma_tactile * 255.0);
        let mut rngs = [rng_for(sc.seed, substream::TACTILE_LEFT), rng_for(sc.seed, substream::TACTILE_RIGHT)];
        for (t_rec, sensor, t) in sc.tactile_schedule() {
            let rng = &mut rngs[sensor as usize];
            let pixels = renderer
                .noiseless(sensor, &sc.active_contacts(t))
                .into_iter()
                .map(|v| quantize(v + noise.sample(rng)))
                .collect();
            let payload =
                Payload::Tactile { sensor, height: renderer.height as u16, width: renderer.width as u16, pixels };
            push(StreamKind::Tactile, t_rec, &payload)?;
        }
    }

    Ok((session, GroundTruth::new(sc.clone())))
}

/// Signed per-frame position error (episode minus truth), mm.
pub fn frame_errors(ep: &Episode, gt: &GroundTruth) -> Vec<[f64; 3]> {
    ep.frame_times
        .iter()
        .zip(&ep.poses)
        .map(|(&t, p)| {
            let d = p.position - gt.tool_pose_at_frame(t).position;
            [d.x * 1e3, d.y * 1e3, d.z * 1e3]
        })
        .collect()
}

pub fn score_against_truth(ep: &Episode, gt: &GroundTruth) -> ErrorStats {
    let n = ep.len();
    let errs = frame_errors(ep, gt);
    let mut mean = [0.0; 3];
    let mut max = [0.0f64; 3];
    for e in &errs {
        for a in 0..3 {
            mean[a] += e[a].abs();
            max[a] = max[a].max(e[a].abs());
        }
    }
    let (mut rot_sum, mut rot_max) = (0.0, 0.0f64);
    for (&t, p) in ep.frame_times.iter().zip(&ep.poses) {
        let r = p.orientation.angle_to(gt.tool_pose_at_frame(t).orientation).to_degrees();
        rot_sum += r;
        rot_max = rot_max.max(r);
    }
    let div = n.max(1) as f64;
    let width_rms_mm = ep.widths.as_ref().map(|w| {
        let sq: f64 = w.iter().zip(&ep.frame_times).map(|(w, &t)| ((w - gt.width_at_frame(t)) * 1e3).powi(2)).sum();
        (sq / div).sqrt()
    });
    ErrorStats {
        frames: n,
        position_mean_mm: mean.map(|m| m / div),
        position_max_mm: max,
        rotation_mean_deg: rot_sum / div,
        rotation_max_deg: rot_max,
        width_rms_mm,
        latency_residual_ms: (ep.provenance.latency.delta_star - gt.pose_latency()).abs() * 1e3,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Axis;
    use crate::latency::extract_axis;

    fn small(seed: u64) -> SimScenario {
        SimScenario { tactile_height: 24, tactile_width: 32, ..SimScenario::with_seed(seed) }
    }

    #[test]
    fn scenario_text_round_trips() {
        let sc = small(42);
        assert_eq!(SimScenario::from_text(&sc.to_text()).unwrap(), sc);
        let d = SimScenario::from_text("seed = 9\n").unwrap();
        assert_eq!(d, SimScenario::with_seed(9));
    }

    #[test]
    fn scenario_rejects_bad_input() {
        for text in [
            "mocap_hz = 0",
            "bogus = 1",
            "duration = 2",
            "contact_schedule = [(1, 2, 3)]",
            "width_profile = [(1, 0.1), (0.5, 0.1)]",
            "noise_sigma_pose = -1",
            "seed = -3",
            "duration = nan",
        ] {
            assert!(matches!(SimScenario::from_text(text), Err(SimError::InvalidScenario(_))), "{text}");
        }
    }

    #[test]
    fn marker_matches_pose_axis_without_noise() {
        let sc = SimScenario {
            noise_sigma_pose: 0.0,
            noise_sigma_marker: 0.0,
            latency_pose: 0.0,
            mount_offset: RigidTransform::IDENTITY,
            tactile_enabled: false,
            ..small(3)
        };
        let (s, _) = generate_session(&sc).unwrap();
        let x = extract_axis(&s.poses().unwrap(), Axis::X).unwrap();
        let mut shared = 0;
        for (t, u, _) in s.markers().unwrap() {
            if let Ok(k) = x.times().binary_search_by(|a| a.total_cmp(&t)) {
                assert!((x.values()[k] - u / sc.marker_scale).abs() < 1e-9);
                shared += 1;
            }
        }
        assert_eq!(shared, 300);
    }

    #[test]
    fn deterministic_and_stream_independent() {
        let sc = small(11);
        let (a, _) = generate_session(&sc).unwrap();
        let (b, _) = generate_session(&sc).unwrap();
        assert_eq!(a, b);
        let (c, _) = generate_session(&SimScenario { latency_pose: -0.3, ..sc.clone() }).unwrap();
        for kind in StreamKind::ALL {
            if kind == StreamKind::Pose {
                let (ra, rc) = (a.records(kind), c.records(kind));
                assert_eq!(ra.len(), rc.len());
                for (x, y) in ra.iter().zip(rc) {
                    assert_eq!(x.payload, y.payload);
                    assert_ne!(x.timestamp, y.timestamp);
                }
            } else {
                assert_eq!(a.records(kind), c.records(kind));
            }
        }
        let (d, _) = generate_session(&SimScenario { tactile_enabled: false, ..sc }).unwrap();
        assert_eq!(a.records(StreamKind::Pose), d.records(StreamKind::Pose));
        assert_eq!(a.records(StreamKind::Marker), d.records(StreamKind::Marker));
    }

    #[test]
    fn record_counts_follow_rates() {
        let sc = SimScenario { duration: 10.25, ..small(1) };
        let (s, _) = generate_session(&sc).unwrap();
        for (kind, rate, pads) in [
            (StreamKind::Pose, sc.mocap_hz, 1.0),
            (StreamKind::VideoMeta, sc.video_hz, 1.0),
            (StreamKind::Marker, sc.video_hz, 1.0),
            (StreamKind::Encoder, sc.encoder_hz, 1.0),
            (StreamKind::Tactile, sc.tactile_hz, 2.0),
        ] {
            let expect = (sc.duration * rate).floor() * pads;
            let got = s.records(kind).len() as f64;
            assert!((got - expect).abs() <= pads, "{kind:?}: {got} vs {expect}");
        }
    }

    #[test]
    fn encoder_wraps_during_default_profile() {
        let sc = small(0);
        let raws: Vec<u16> =
            sc.sample_times(sc.encoder_hz, 0.0).iter().map(|&t| sc.encoder_reading(sc.width(t)).raw()).collect();
        let wraps = raws.windows(2).filter(|w| (w[1] as i32 - w[0] as i32).abs() > 2048).count();
        assert!(wraps >= 4, "{wraps}");
    }

    #[test]
    fn truth_counts_contacts() {
        let gt = GroundTruth::new(small(0));
        let active = gt.tactile_active.iter().filter(|x| x.2 > 0).count();
        // Contacts cover 6 of 10 s on both pads.
        assert_eq!(active, 240);
        let frames: Vec<f64> = (0..300).map(|j| j as f64 / 30.0).collect();
        let frac = gt.default_active_frame_fraction(&frames, 0.1);
        assert!((frac - 0.6).abs() < 0.01, "{frac}");
    }
}
