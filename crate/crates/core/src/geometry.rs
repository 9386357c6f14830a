//! Time, pose and trajectory primitives shared by every other module.
//!
//! Everything in here is a plain value type. Quaternion sign is left
//! unconstrained in memory and only canonicalized (`w >= 0`) when a value
//! crosses a serialization boundary.

use std::ops::{Add, Mul, Neg, Sub};

use thiserror::Error;

/// Seconds since the session epoch.
pub type Timestamp = f64;

/// Three-vector in meters (or unitless, for rotation axes).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const ZERO: Vec3 = Vec3 { x: 0.0, y: 0.0, z: 0.0 };

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn dot(self, o: Vec3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn cross(self, o: Vec3) -> Vec3 {
        Vec3::new(self.y * o.z - self.z * o.y, self.z * o.x - self.x * o.z, self.x * o.y - self.y * o.x)
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn scale(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }

    pub fn lerp(self, o: Vec3, u: f64) -> Vec3 {
        Vec3::new(self.x + (o.x - self.x) * u, self.y + (o.y - self.y) * u, self.z + (o.z - self.z) * u)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    /// Component by axis index (0 = x, 1 = y, 2 = z).
    pub fn component(self, axis: Axis) -> f64 {
        match axis {
            Axis::X => self.x,
            Axis::Y => self.y,
            Axis::Z => self.z,
        }
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Neg for Vec3 {
    type Output = Vec3;
    fn neg(self) -> Vec3 {
        Vec3::new(-self.x, -self.y, -self.z)
    }
}

/// Cartesian axis selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Axis {
    X,
    Y,
    Z,
}

impl std::str::FromStr for Axis {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "x" | "X" => Ok(Axis::X),
            "y" | "Y" => Ok(Axis::Y),
            "z" | "Z" => Ok(Axis::Z),
            other => Err(format!("unknown axis '{other}' (expected x, y or z)")),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("query time {t} outside trajectory span [{start}, {end}]")]
    OutOfDomain { t: f64, start: f64, end: f64 },
    #[error("trajectory needs at least {needed} samples, got {got}")]
    TooShort { needed: usize, got: usize },
    #[error("timestamps not strictly increasing at index {index}")]
    NotIncreasing { index: usize },
    #[error("times and values differ in length ({times} vs {values})")]
    LengthMismatch { times: usize, values: usize },
    #[error("non-finite value at index {index}")]
    NonFinite { index: usize },
    #[error("quaternion has zero or non-finite norm")]
    DegenerateQuaternion,
}

/// Rotation stored as a unit quaternion `w + xi + yj + zk`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnitQuaternion {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Default for UnitQuaternion {
    fn default() -> Self {
        Self::IDENTITY
    }
}

impl UnitQuaternion {
    pub const IDENTITY: UnitQuaternion = UnitQuaternion { w: 1.0, x: 0.0, y: 0.0, z: 0.0 };

    /// Normalizes the four components.
    pub fn new_normalize(w: f64, x: f64, y: f64, z: f64) -> Result<Self, GeometryError> {
        let n = (w * w + x * x + y * y + z * z).sqrt();
        if !n.is_finite() || n == 0.0 {
            return Err(GeometryError::DegenerateQuaternion);
        }
        Ok(Self { w: w / n, x: x / n, y: y / n, z: z / n })
    }

    /// Takes components as-is. Callers guarantee unit norm.
    pub const fn from_parts_unchecked(w: f64, x: f64, y: f64, z: f64) -> Self {
        Self { w, x, y, z }
    }

    /// Rotation of `angle` radians about `axis` (need not be normalized).
    pub fn from_axis_angle(axis: Vec3, angle: f64) -> Self {
        let n = axis.norm();
        if n == 0.0 || angle == 0.0 {
            return Self::IDENTITY;
        }
        let a = axis.scale(1.0 / n);
        let (s, c) = (angle * 0.5).sin_cos();
        Self { w: c, x: a.x * s, y: a.y * s, z: a.z * s }
    }

    pub fn vector(self) -> Vec3 {
        Vec3::new(self.x, self.y, self.z)
    }

    pub fn norm(self) -> f64 {
        (self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn normalized(self) -> Self {
        let n = self.norm();
        Self { w: self.w / n, x: self.x / n, y: self.y / n, z: self.z / n }
    }

    pub fn dot(self, o: UnitQuaternion) -> f64 {
        self.w * o.w + self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn conjugate(self) -> Self {
        Self { w: self.w, x: -self.x, y: -self.y, z: -self.z }
    }

    pub fn inverse(self) -> Self {
        self.conjugate()
    }

    /// Same rotation with `w >= 0`.
    pub fn canonical(self) -> Self {
        if self.w < 0.0 {
            -self
        } else {
            self
        }
    }

    pub fn rotate(self, v: Vec3) -> Vec3 {
        // v' = v + 2w(q x v) + 2 q x (q x v)
        let q = self.vector();
        let t = q.cross(v).scale(2.0);
        v + t.scale(self.w) + q.cross(t)
    }

    /// Rotation vector (axis * angle) of this rotation, taking the short way round.
    pub fn log(self) -> Vec3 {
        let q = self.canonical();
        let v = q.vector();
        let s = v.norm();
        if s < 1e-300 {
            return v.scale(2.0);
        }
        let half = s.atan2(q.w);
        v.scale(2.0 * half / s)
    }

    /// Inverse of [`UnitQuaternion::log`].
    pub fn exp(rotvec: Vec3) -> Self {
        let angle = rotvec.norm();
        let half = 0.5 * angle;
        // sin(half)/angle, with the small-angle series below 1e-8.
        let k = if angle < 1e-8 { 0.5 - angle * angle / 48.0 } else { half.sin() / angle };
        Self { w: half.cos(), x: rotvec.x * k, y: rotvec.y * k, z: rotvec.z * k }
    }

    /// Geodesic angle in radians between the rotations `self` and `o`, in `[0, pi]`.
    pub fn angle_to(self, o: UnitQuaternion) -> f64 {
        let r = self.conjugate() * o;
        2.0 * r.vector().norm().atan2(r.w.abs())
    }
}

impl Mul for UnitQuaternion {
    type Output = UnitQuaternion;
    fn mul(self, o: UnitQuaternion) -> UnitQuaternion {
        UnitQuaternion {
            w: self.w * o.w - self.x * o.x - self.y * o.y - self.z * o.z,
            x: self.w * o.x + self.x * o.w + self.y * o.z - self.z * o.y,
            y: self.w * o.y - self.x * o.z + self.y * o.w + self.z * o.x,
            z: self.w * o.z + self.x * o.y - self.y * o.x + self.z * o.w,
        }
    }
}

impl Neg for UnitQuaternion {
    type Output = UnitQuaternion;
    fn neg(self) -> UnitQuaternion {
        UnitQuaternion { w: -self.w, x: -self.x, y: -self.y, z: -self.z }
    }
}

/// Angle (radians) below which slerp degrades to normalized lerp.
const SLERP_LINEAR_ANGLE: f64 = 1e-6;

/// Shortest-arc spherical interpolation, `u` in `[0, 1]`.
pub fn slerp(q0: UnitQuaternion, q1: UnitQuaternion, u: f64) -> UnitQuaternion {
    let q1 = if q0.dot(q1) < 0.0 { -q1 } else { q1 };
    let rel = q0.conjugate() * q1;
    let angle = 2.0 * rel.vector().norm().atan2(rel.w);
    if angle < SLERP_LINEAR_ANGLE {
        let lerp = UnitQuaternion {
            w: q0.w + (q1.w - q0.w) * u,
            x: q0.x + (q1.x - q0.x) * u,
            y: q0.y + (q1.y - q0.y) * u,
            z: q0.z + (q1.z - q0.z) * u,
        };
        return lerp.normalized();
    }
    (q0 * UnitQuaternion::exp(rel.log().scale(u))).normalized()
}

/// Position plus orientation of a rigid body.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Pose6D {
    pub position: Vec3,
    pub orientation: UnitQuaternion,
}

impl Pose6D {
    pub const fn new(position: Vec3, orientation: UnitQuaternion) -> Self {
        Self { position, orientation }
    }

    pub fn to_transform(self) -> RigidTransform {
        RigidTransform { rotation: self.orientation, translation: self.position }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseSample {
    pub t: Timestamp,
    pub pose: Pose6D,
}

/// A rigid-body transform `p -> R p + t`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RigidTransform {
    pub rotation: UnitQuaternion,
    pub translation: Vec3,
}

impl RigidTransform {
    pub const IDENTITY: RigidTransform = RigidTransform { rotation: UnitQuaternion::IDENTITY, translation: Vec3::ZERO };

    pub const fn new(rotation: UnitQuaternion, translation: Vec3) -> Self {
        Self { rotation, translation }
    }

    pub fn apply(&self, p: Vec3) -> Vec3 {
        self.rotation.rotate(p) + self.translation
    }

    /// `self ∘ other`: apply `other` first, then `self`.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: (self.rotation * other.rotation).normalized(),
            translation: self.rotation.rotate(other.translation) + self.translation,
        }
    }

    pub fn invert(&self) -> RigidTransform {
        let r = self.rotation.inverse();
        RigidTransform { rotation: r, translation: -r.rotate(self.translation) }
    }

    pub fn to_pose(self) -> Pose6D {
        Pose6D { position: self.translation, orientation: self.rotation }
    }
}

/// Free-function form of [`RigidTransform::compose`].
pub fn compose(a: &RigidTransform, b: &RigidTransform) -> RigidTransform {
    a.compose(b)
}

pub fn invert(a: &RigidTransform) -> RigidTransform {
    a.invert()
}

/// Scalar samples on a strictly increasing time base.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory1D {
    times: Vec<Timestamp>,
    values: Vec<f64>,
}

impl Trajectory1D {
    pub fn new(times: Vec<Timestamp>, values: Vec<f64>) -> Result<Self, GeometryError> {
        if times.len() != values.len() {
            return Err(GeometryError::LengthMismatch { times: times.len(), values: values.len() });
        }
        for (i, (t, v)) in times.iter().zip(&values).enumerate() {
            if !t.is_finite() || !v.is_finite() {
                return Err(GeometryError::NonFinite { index: i });
            }
        }
        if let Some(i) = times.windows(2).position(|w| w[1] <= w[0]) {
            return Err(GeometryError::NotIncreasing { index: i + 1 });
        }
        Ok(Self { times, values })
    }

    pub fn times(&self) -> &[Timestamp] {
        &self.times
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// `(first, last)` timestamps, if any.
    pub fn span(&self) -> Option<(Timestamp, Timestamp)> {
        Some((*self.times.first()?, *self.times.last()?))
    }

    /// Same values on a time base shifted by `dt`.
    pub fn shifted(&self, dt: f64) -> Trajectory1D {
        Trajectory1D { times: self.times.iter().map(|t| t + dt).collect(), values: self.values.clone() }
    }

    /// Same time base with `f` applied to every value. `f` must keep values finite.
    pub fn map_values(&self, f: impl Fn(f64) -> f64) -> Trajectory1D {
        Trajectory1D { times: self.times.clone(), values: self.values.iter().map(|&v| f(v)).collect() }
    }

    pub fn into_parts(self) -> (Vec<Timestamp>, Vec<f64>) {
        (self.times, self.values)
    }
}

/// Locates `t` in a sorted time base: `Ok(i)` for an exact knot hit,
/// `Err((i, u))` for the segment `[i, i+1]` at fraction `u`.
pub(crate) fn bracket(times: &[Timestamp], t: Timestamp) -> Result<usize, (usize, f64)> {
    let n = times.len();
    let idx = times.partition_point(|&x| x < t);
    if idx < n && times[idx] == t {
        return Ok(idx);
    }
    let i = idx.saturating_sub(1).min(n - 2);
    let u = (t - times[i]) / (times[i + 1] - times[i]);
    Err((i, u))
}

fn check_domain(times: &[Timestamp], t: Timestamp) -> Result<(), GeometryError> {
    if times.len() < 2 {
        return Err(GeometryError::TooShort { needed: 2, got: times.len() });
    }
    let (start, end) = (times[0], times[times.len() - 1]);
    if !(t >= start && t <= end) {
        return Err(GeometryError::OutOfDomain { t, start, end });
    }
    Ok(())
}

/// Linear interpolation; exact at knots.
pub fn interp_linear(traj: &Trajectory1D, t: Timestamp) -> Result<f64, GeometryError> {
    check_domain(&traj.times, t)?;
    Ok(match bracket(&traj.times, t) {
        Ok(i) => traj.values[i],
        Err((i, u)) => {
            let (a, b) = (traj.values[i], traj.values[i + 1]);
            a + (b - a) * u
        }
    })
}

/// Pose at `t`: linear in position, slerp in orientation.
pub fn interp_pose(track: &[PoseSample], t: Timestamp) -> Result<Pose6D, GeometryError> {
    if track.len() < 2 {
        return Err(GeometryError::TooShort { needed: 2, got: track.len() });
    }
    let (start, end) = (track[0].t, track[track.len() - 1].t);
    if !(t >= start && t <= end) {
        return Err(GeometryError::OutOfDomain { t, start, end });
    }
    let idx = track.partition_point(|s| s.t < t);
    if idx < track.len() && track[idx].t == t {
        return Ok(track[idx].pose);
    }
    let i = idx.saturating_sub(1).min(track.len() - 2);
    let (a, b) = (&track[i], &track[i + 1]);
    let u = (t - a.t) / (b.t - a.t);
    Ok(Pose6D {
        position: a.pose.position.lerp(b.pose.position, u),
        orientation: slerp(a.pose.orientation, b.pose.orientation, u),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn traj(pts: &[(f64, f64)]) -> Trajectory1D {
        Trajectory1D::new(pts.iter().map(|p| p.0).collect(), pts.iter().map(|p| p.1).collect()).unwrap()
    }

    #[test]
    fn interp_midpoint_and_constant() {
        assert_eq!(interp_linear(&traj(&[(0.0, 0.0), (1.0, 10.0)]), 0.5).unwrap(), 5.0);
        assert_eq!(interp_linear(&traj(&[(0.0, 3.0), (2.0, 3.0)]), 1.3).unwrap(), 3.0);
    }

    #[test]
    fn interp_sampled_sine_matches_analytic() {
        let times: Vec<f64> = (0..=100).map(|i| i as f64 / 100.0).collect();
        let values = times.iter().map(|t| (2.0 * PI * t).sin()).collect();
        let tr = Trajectory1D::new(times, values).unwrap();
        let t = 0.3712;
        assert!((interp_linear(&tr, t).unwrap() - (2.0 * PI * t).sin()).abs() < 2e-3);
    }

    #[test]
    fn interp_rejects_out_of_domain() {
        let tr = traj(&[(0.0, 0.0), (1.0, 1.0)]);
        assert!(matches!(interp_linear(&tr, 1.0001), Err(GeometryError::OutOfDomain { .. })));
        assert!(matches!(interp_linear(&tr, -0.1), Err(GeometryError::OutOfDomain { .. })));
        assert!(matches!(interp_linear(&tr, f64::NAN), Err(GeometryError::OutOfDomain { .. })));
        let single = traj(&[(0.0, 1.0)]);
        assert!(matches!(interp_linear(&single, 0.0), Err(GeometryError::TooShort { .. })));
    }

    #[test]
    fn trajectory_validation() {
        assert!(matches!(
            Trajectory1D::new(vec![0.0, 0.0], vec![1.0, 2.0]),
            Err(GeometryError::NotIncreasing { index: 1 })
        ));
        assert!(matches!(Trajectory1D::new(vec![0.0, 1.0], vec![1.0]), Err(GeometryError::LengthMismatch { .. })));
        assert!(matches!(
            Trajectory1D::new(vec![0.0, 1.0], vec![1.0, f64::INFINITY]),
            Err(GeometryError::NonFinite { index: 1 })
        ));
    }

    #[test]
    fn slerp_identical_endpoints() {
        let q = UnitQuaternion::from_axis_angle(Vec3::new(1.0, 2.0, 3.0), 0.8);
        let r = slerp(q, q, 0.7);
        assert!(q.angle_to(r) < 1e-12);
    }

    #[test]
    fn slerp_half_of_quarter_turn() {
        let qz = UnitQuaternion::from_axis_angle(Vec3::new(0.0, 0.0, 1.0), PI / 2.0);
        let half = slerp(UnitQuaternion::IDENTITY, qz, 0.5);
        let expect = UnitQuaternion::from_axis_angle(Vec3::new(0.0, 0.0, 1.0), PI / 4.0);
        for (a, b) in [(half.w, expect.w), (half.x, expect.x), (half.y, expect.y), (half.z, expect.z)] {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn slerp_takes_short_arc() {
        let q0 = UnitQuaternion::from_axis_angle(Vec3::new(0.0, 0.0, 1.0), 0.1);
        let q1 = -UnitQuaternion::from_axis_angle(Vec3::new(0.0, 0.0, 1.0), 0.3);
        let mid = slerp(q0, q1, 0.5);
        let expect = UnitQuaternion::from_axis_angle(Vec3::new(0.0, 0.0, 1.0), 0.2);
        assert!(mid.angle_to(expect) < 1e-12);
    }

    #[test]
    fn slerp_tiny_angle_uses_lerp_branch() {
        let q0 = UnitQuaternion::IDENTITY;
        let q1 = UnitQuaternion::from_axis_angle(Vec3::new(1.0, 0.0, 0.0), 1e-8);
        let r = slerp(q0, q1, 0.5);
        assert!((r.norm() - 1.0).abs() < 1e-12);
        assert!((q0.angle_to(r) - 5e-9).abs() < 1e-15);
    }

    #[test]
    fn interp_pose_cases() {
        let p = Pose6D::new(Vec3::new(1.0, 2.0, 3.0), UnitQuaternion::from_axis_angle(Vec3::new(0.0, 1.0, 0.0), 0.4));
        let same = [PoseSample { t: 0.0, pose: p }, PoseSample { t: 1.0, pose: p }];
        let got = interp_pose(&same, 0.37).unwrap();
        assert_eq!(got.position, p.position);
        assert!(got.orientation.angle_to(p.orientation) < 1e-12);

        let line = [
            PoseSample { t: 0.0, pose: Pose6D::default() },
            PoseSample { t: 1.0, pose: Pose6D::new(Vec3::new(1.0, 0.0, 0.0), UnitQuaternion::IDENTITY) },
        ];
        let got = interp_pose(&line, 0.4).unwrap();
        assert!((got.position - Vec3::new(0.4, 0.0, 0.0)).norm() < 1e-15);
        assert!(interp_pose(&line, 1.5).is_err());
    }

    #[test]
    fn interp_pose_sinusoid_against_analytic_path() {
        // 1 Hz, 0.2 m amplitude, 60 Hz samples, queried at 30 Hz with offsets.
        let path = |t: f64| Vec3::new(0.2 * (2.0 * PI * t).sin(), 0.2 * (2.0 * PI * t).cos(), 0.0);
        let track: Vec<PoseSample> = (0..600)
            .map(|k| {
                let t = k as f64 / 60.0;
                PoseSample { t, pose: Pose6D::new(path(t), UnitQuaternion::IDENTITY) }
            })
            .collect();
        let mut worst: f64 = 0.0;
        for j in 0..290 {
            let t = j as f64 / 30.0 + 0.0071;
            let got = interp_pose(&track, t).unwrap();
            worst = worst.max((got.position - path(t)).norm());
        }
        assert!(worst < 1e-3, "max deviation {worst}");
    }

    #[test]
    fn compose_with_inverse_and_identity() {
        let t = RigidTransform::new(
            UnitQuaternion::from_axis_angle(Vec3::new(0.3, -1.0, 0.2), 1.1),
            Vec3::new(0.1, -0.4, 2.0),
        );
        let id = t.compose(&t.invert());
        assert!(id.rotation.angle_to(UnitQuaternion::IDENTITY) < 1e-9);
        assert!(id.translation.norm() < 1e-9);
        let same = RigidTransform::IDENTITY.compose(&t);
        assert!(same.rotation.angle_to(t.rotation) < 1e-12);
        assert!((same.translation - t.translation).norm() < 1e-15);
    }

    fn arb_quat() -> impl Strategy<Value = UnitQuaternion> {
        (-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64)
            .prop_filter("non-degenerate", |(w, x, y, z)| w * w + x * x + y * y + z * z > 1e-3)
            .prop_map(|(w, x, y, z)| UnitQuaternion::new_normalize(w, x, y, z).unwrap())
    }

    fn arb_vec() -> impl Strategy<Value = Vec3> {
        (-5.0..5.0f64, -5.0..5.0f64, -5.0..5.0f64).prop_map(|(x, y, z)| Vec3::new(x, y, z))
    }

    fn arb_transform() -> impl Strategy<Value = RigidTransform> {
        (arb_quat(), arb_vec()).prop_map(|(r, t)| RigidTransform::new(r, t))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]

        #[test]
        fn slerp_norm_and_endpoints(q0 in arb_quat(), q1 in arb_quat(), u in 0.0..=1.0f64) {
            let r = slerp(q0, q1, u);
            prop_assert!((r.norm() - 1.0).abs() < 1e-9);
            prop_assert!(slerp(q0, q1, 0.0).angle_to(q0) < 1e-9);
            prop_assert!(slerp(q0, q1, 1.0).angle_to(q1) < 1e-9);
        }

        #[test]
        fn slerp_geodesic_fraction(q0 in arb_quat(), q1 in arb_quat()) {
            // Oracle: angle from the quaternion log of the relative rotation.
            let full = (q0.conjugate() * q1).log().norm();
            let r = slerp(q0, q1, 0.25);
            let part = (q0.conjugate() * r).log().norm();
            prop_assert!((part - 0.25 * full).abs() < 1e-9, "{} vs {}", part, 0.25 * full);
        }

        #[test]
        fn transform_group_laws(a in arb_transform(), b in arb_transform(), c in arb_transform(), p in arb_vec()) {
            let lhs = a.compose(&b).apply(p);
            let rhs = a.apply(b.apply(p));
            prop_assert!((lhs - rhs).norm() < 1e-9);
            let assoc_l = a.compose(&b).compose(&c).apply(p);
            let assoc_r = a.compose(&b.compose(&c)).apply(p);
            prop_assert!((assoc_l - assoc_r).norm() < 1e-9);
            let back = a.compose(&a.invert()).apply(p);
            prop_assert!((back - p).norm() < 1e-9);
        }

        #[test]
        fn interp_exact_at_knots(vals in proptest::collection::vec(-1e3..1e3f64, 2..40), step in 0.001..2.0f64) {
            let times: Vec<f64> = (0..vals.len()).map(|i| i as f64 * step).collect();
            let tr = Trajectory1D::new(times.clone(), vals.clone()).unwrap();
            for (t, v) in times.iter().zip(&vals) {
                prop_assert_eq!(interp_linear(&tr, *t).unwrap(), *v);
            }
        }

        #[test]
        fn interp_monotone_between_monotone_knots(mut vals in proptest::collection::vec(-1e3..1e3f64, 2..30), fr in proptest::collection::vec(0.0..1.0f64, 20)) {
            vals.sort_by(f64::total_cmp);
            let times: Vec<f64> = (0..vals.len()).map(|i| i as f64).collect();
            let tr = Trajectory1D::new(times, vals.clone()).unwrap();
            let end = (vals.len() - 1) as f64;
            let mut qs: Vec<f64> = fr.iter().map(|u| u * end).collect();
            qs.sort_by(f64::total_cmp);
            let out: Vec<f64> = qs.iter().map(|&t| interp_linear(&tr, t).unwrap()).collect();
            prop_assert!(out.windows(2).all(|w| w[1] >= w[0]));
        }
    }
}
