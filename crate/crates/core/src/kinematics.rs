//! Piecewise-constant-curvature model of a ceiling-mounted, tip-everting
//! soft robot.
//!
//! The backbone is a chain of circular arcs ([`Segment`]) hanging from a base
//! frame whose local +z axis points down into the room. New material always
//! emerges at the tip carrying the live [`Steering`] command, so growing never
//! disturbs material that is already deployed. Steering only reshapes the
//! distal window of arc; everything proximal of it is frozen.

use std::f64::consts::{PI, TAU};

use nalgebra::{Unit, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Below this `kappa * length` the arc transform uses a series expansion.
pub const STRAIGHT_THRESHOLD: f64 = 1e-6;
/// Tolerance used to decide whether new material can extend the distal segment.
pub const MERGE_TOLERANCE: f64 = 1e-9;
/// Largest bend angle a single segment may carry. Longer arcs are split.
pub const MAX_SEGMENT_TURN: f64 = PI / 2.0;

/// Curvatures below this are snapped to exactly straight.
const STRAIGHT_KAPPA: f64 = 1e-12;
/// Residual arc length below which a segment is considered consumed.
const LENGTH_EPS: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KinematicsError {
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("invalid segment: {0}")]
    InvalidSegment(String),
    #[error("length change must be positive, got {0}")]
    NonPositiveDelta(f64),
    #[error("arc length {s} outside [0, {total}]")]
    ArcLengthOutOfRange { s: f64, total: f64 },
    #[error("steering axis {0} outside [-1, 1]")]
    AxisOutOfRange(f64),
    #[error("time step must be positive, got {0}")]
    InvalidTimestep(f64),
    #[error("polyline needs at least 2 samples, got {0}")]
    TooFewSamples(usize),
}

/// Rigid transform: position in meters plus a unit quaternion.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub position: Vector3<f64>,
    pub orientation: UnitQuaternion<f64>,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn new(position: Vector3<f64>, orientation: UnitQuaternion<f64>) -> Self {
        Self {
            position,
            orientation,
        }
    }

    pub fn identity() -> Self {
        Self {
            position: Vector3::zeros(),
            orientation: UnitQuaternion::identity(),
        }
    }

    pub fn from_translation(position: Vector3<f64>) -> Self {
        Self {
            position,
            orientation: UnitQuaternion::identity(),
        }
    }

    /// Base pose for a robot hanging from the ceiling at `anchor`: local +z
    /// points along world -z, local +y along world +y, local +x along world -x.
    pub fn ceiling_mount(anchor: Vector3<f64>) -> Self {
        Self {
            position: anchor,
            orientation: UnitQuaternion::from_axis_angle(&Vector3::y_axis(), PI),
        }
    }

    /// `self * other`: `other` is expressed in the frame of `self`.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            position: self.position + self.orientation * other.position,
            orientation: self.orientation * other.orientation,
        }
    }

    pub fn inverse(&self) -> Pose {
        let inv = self.orientation.inverse();
        Pose {
            position: -(inv * self.position),
            orientation: inv,
        }
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.position + self.orientation * p
    }

    /// Local +z axis expressed in the parent frame (the growth direction).
    pub fn z_axis(&self) -> Vector3<f64> {
        self.orientation * Vector3::z()
    }

    fn is_finite(&self) -> bool {
        self.position.iter().all(|v| v.is_finite())
            && self.orientation.coords.iter().all(|v| v.is_finite())
    }
}

/// Live steering command, as two signed curvature components.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Steering {
    pub kappa_lr: f64,
    pub kappa_ud: f64,
}

impl Steering {
    pub fn new(kappa_lr: f64, kappa_ud: f64) -> Self {
        Self { kappa_lr, kappa_ud }
    }

    pub fn magnitude(&self) -> f64 {
        self.kappa_lr.hypot(self.kappa_ud)
    }

    /// Curvature magnitude and bend-plane angle in `[0, 2π)`.
    pub fn bend(&self) -> (f64, f64) {
        let kappa = self.magnitude();
        if kappa < STRAIGHT_KAPPA {
            (0.0, 0.0)
        } else {
            (kappa, normalize_angle(self.kappa_ud.atan2(self.kappa_lr)))
        }
    }

    fn clamped(self, kappa_max: f64) -> Self {
        let k = self.magnitude();
        if k > kappa_max {
            let scale = kappa_max / k;
            Self::new(self.kappa_lr * scale, self.kappa_ud * scale)
        } else {
            self
        }
    }
}

/// One constant-curvature arc of the backbone.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub length: f64,
    pub kappa: f64,
    pub phi: f64,
}

impl Segment {
    /// Builds a validated segment in canonical form (`phi` wrapped to
    /// `[0, 2π)`, and zero for straight segments).
    pub fn new(length: f64, kappa: f64, phi: f64) -> Result<Self, KinematicsError> {
        if !(length.is_finite() && kappa.is_finite() && phi.is_finite()) {
            return Err(KinematicsError::NonFinite("segment"));
        }
        if length <= 0.0 {
            return Err(KinematicsError::InvalidSegment(format!(
                "length must be positive, got {length}"
            )));
        }
        if kappa < 0.0 {
            return Err(KinematicsError::InvalidSegment(format!(
                "curvature must be non-negative, got {kappa}"
            )));
        }
        if kappa * length >= PI {
            return Err(KinematicsError::InvalidSegment(format!(
                "bend angle {} overcurls past a half circle",
                kappa * length
            )));
        }
        Ok(Self::canonical(length, kappa, phi))
    }

    pub fn straight(length: f64) -> Result<Self, KinematicsError> {
        Self::new(length, 0.0, 0.0)
    }

    fn canonical(length: f64, kappa: f64, phi: f64) -> Self {
        if kappa == 0.0 {
            Self {
                length,
                kappa: 0.0,
                phi: 0.0,
            }
        } else {
            Self {
                length,
                kappa,
                phi: normalize_angle(phi),
            }
        }
    }

    fn matches(&self, kappa: f64, phi: f64) -> bool {
        (self.kappa - kappa).abs() < MERGE_TOLERANCE
            && angle_distance(self.phi, phi) < MERGE_TOLERANCE
    }

    /// Longest arc this curvature can carry without exceeding the turn cap.
    fn max_length(kappa: f64) -> f64 {
        if kappa == 0.0 {
            f64::INFINITY
        } else {
            MAX_SEGMENT_TURN / kappa
        }
    }
}

/// Transform from a segment's proximal frame to its distal frame.
pub fn segment_transform(seg: &Segment) -> Result<Pose, KinematicsError> {
    if !(seg.length.is_finite() && seg.kappa.is_finite() && seg.phi.is_finite()) {
        return Err(KinematicsError::NonFinite("segment"));
    }
    Ok(arc_transform(seg.kappa, seg.phi, seg.length))
}

/// Closed-form constant-curvature arc of the given length. Callers guarantee
/// finite inputs.
pub(crate) fn arc_transform(kappa: f64, phi: f64, length: f64) -> Pose {
    let theta = kappa * length;
    let (sin_phi, cos_phi) = phi.sin_cos();
    let (radial, axial) = if theta.abs() < STRAIGHT_THRESHOLD {
        // 2nd-order series of (1 - cos kL)/k and sin(kL)/k.
        (kappa * length * length / 2.0, length - kappa * kappa * length.powi(3) / 6.0)
    } else {
        let half = 0.5 * theta;
        (2.0 * half.sin().powi(2) / kappa, theta.sin() / kappa)
    };
    let orientation = if kappa == 0.0 {
        UnitQuaternion::identity()
    } else {
        let axis = Unit::new_unchecked(Vector3::new(-sin_phi, cos_phi, 0.0));
        UnitQuaternion::from_axis_angle(&axis, theta)
    };
    Pose {
        position: Vector3::new(radial * cos_phi, radial * sin_phi, axial),
        orientation,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RobotConfig {
    /// Longest deployable body (m).
    pub max_length: f64,
    /// Steering curvature bound (1/m).
    pub kappa_max: f64,
    /// Rate at which a full-scale steering axis changes curvature (1/m/s).
    pub kappa_rate: f64,
    /// Distal arc that live steering can still reshape (m).
    pub window_length: f64,
}

impl Default for RobotConfig {
    fn default() -> Self {
        Self {
            max_length: 2.5,
            kappa_max: 3.0,
            kappa_rate: 1.0,
            window_length: 0.2,
        }
    }
}

impl RobotConfig {
    pub fn validate(&self) -> Result<(), KinematicsError> {
        let fields = [
            ("max_length", self.max_length),
            ("kappa_max", self.kappa_max),
            ("kappa_rate", self.kappa_rate),
            ("window_length", self.window_length),
        ];
        for (name, v) in fields {
            if !v.is_finite() {
                return Err(KinematicsError::NonFinite(name));
            }
            if v <= 0.0 {
                return Err(KinematicsError::InvalidSegment(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Full kinematic state of the robot.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobotState {
    base: Pose,
    segments: Vec<Segment>,
    steering: Steering,
    total_length: f64,
    config: RobotConfig,
    /// 0 = fully closed, 1 = fully open.
    pub gripper_aperture: f64,
}

impl RobotState {
    /// Zero-length robot with the gripper open.
    pub fn new(base: Pose, config: RobotConfig) -> Self {
        Self {
            base,
            segments: Vec::new(),
            steering: Steering::default(),
            total_length: 0.0,
            config,
            gripper_aperture: 1.0,
        }
    }

    /// Robot with an explicit backbone. Lengths beyond `max_length` are rejected.
    pub fn with_segments(
        base: Pose,
        config: RobotConfig,
        segments: Vec<Segment>,
        steering: Steering,
    ) -> Result<Self, KinematicsError> {
        if !base.is_finite() {
            return Err(KinematicsError::NonFinite("base"));
        }
        config.validate()?;
        let segments = segments
            .into_iter()
            .map(|s| Segment::new(s.length, s.kappa, s.phi))
            .collect::<Result<Vec<_>, _>>()?;
        let total_length: f64 = segments.iter().map(|s| s.length).sum();
        if total_length > config.max_length {
            return Err(KinematicsError::InvalidSegment(format!(
                "backbone length {total_length} exceeds max_length {}",
                config.max_length
            )));
        }
        Ok(Self {
            base,
            segments,
            steering: steering.clamped(config.kappa_max),
            total_length,
            config,
            gripper_aperture: 1.0,
        })
    }

    pub fn base(&self) -> &Pose {
        &self.base
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn steering(&self) -> Steering {
        self.steering
    }

    pub fn total_length(&self) -> f64 {
        self.total_length
    }

    pub fn max_length(&self) -> f64 {
        self.config.max_length
    }

    pub fn config(&self) -> &RobotConfig {
        &self.config
    }

    /// Pose of the backbone point at arc length `s`.
    pub fn forward_kinematics(&self, s: f64) -> Result<Pose, KinematicsError> {
        if !s.is_finite() {
            return Err(KinematicsError::NonFinite("arc length"));
        }
        if s < 0.0 || s > self.total_length + LENGTH_EPS {
            return Err(KinematicsError::ArcLengthOutOfRange {
                s,
                total: self.total_length,
            });
        }
        let mut out = self.base;
        self.walk(std::iter::once(s), |_, pose| out = pose);
        Ok(out)
    }

    pub fn tip_pose(&self) -> Pose {
        let mut out = self.base;
        self.walk(std::iter::once(self.total_length), |_, pose| out = pose);
        out
    }

    /// `n` backbone positions at uniform arc spacing from base to tip.
    pub fn backbone_polyline(&self, n: usize) -> Result<Vec<Vector3<f64>>, KinematicsError> {
        if n < 2 {
            return Err(KinematicsError::TooFewSamples(n));
        }
        let total = self.total_length;
        let last = (n - 1) as f64;
        let mut points = vec![self.base.position; n];
        self.walk(
            (0..n).map(|i| if i == n - 1 { total } else { total * i as f64 / last }),
            |i, pose| points[i] = pose.position,
        );
        Ok(points)
    }

    /// Evaluates poses at non-decreasing arc lengths in a single pass,
    /// calling `visit(index, pose)` for each. All queries share the same
    /// arithmetic path, so a point's pose never depends on which other
    /// points were requested.
    fn walk(&self, queries: impl Iterator<Item = f64>, mut visit: impl FnMut(usize, Pose)) {
        let mut frame = self.base;
        let mut start = 0.0;
        let mut idx = 0;
        for (i, s) in queries.enumerate() {
            if s <= 0.0 || self.segments.is_empty() {
                visit(i, self.base);
                continue;
            }
            loop {
                let seg = &self.segments[idx];
                let residual = s - start;
                if residual <= seg.length || idx + 1 == self.segments.len() {
                    let residual = residual.min(seg.length);
                    visit(i, frame.compose(&arc_transform(seg.kappa, seg.phi, residual)));
                    break;
                }
                frame = frame.compose(&arc_transform(seg.kappa, seg.phi, seg.length));
                start += seg.length;
                idx += 1;
            }
        }
    }

    /// Everts up to `delta` meters of new material at the tip, carrying the
    /// current steering. Returns the length actually added.
    pub fn grow(&mut self, delta: f64) -> Result<f64, KinematicsError> {
        check_delta(delta)?;
        let applied = delta.min(self.config.max_length - self.total_length);
        if applied <= 0.0 {
            return Ok(0.0);
        }
        let (kappa, phi) = self.steering.bend();
        self.append_arc(kappa, phi, applied);
        Ok(applied)
    }

    /// Removes up to `delta` meters from the tip. Returns the length removed.
    pub fn retract(&mut self, delta: f64) -> Result<f64, KinematicsError> {
        check_delta(delta)?;
        Ok(self.remove_distal(delta))
    }

    /// Integrates the steering axes over `dt` and reshapes the distal window
    /// to the new curvature.
    pub fn steer(&mut self, lr_axis: f64, ud_axis: f64, dt: f64) -> Result<(), KinematicsError> {
        for axis in [lr_axis, ud_axis] {
            if !axis.is_finite() {
                return Err(KinematicsError::NonFinite("steering axis"));
            }
            if axis.abs() > 1.0 {
                return Err(KinematicsError::AxisOutOfRange(axis));
            }
        }
        if !(dt.is_finite() && dt > 0.0) {
            return Err(KinematicsError::InvalidTimestep(dt));
        }
        let rate = self.config.kappa_rate * dt;
        let next = Steering::new(
            self.steering.kappa_lr + lr_axis * rate,
            self.steering.kappa_ud + ud_axis * rate,
        )
        .clamped(self.config.kappa_max);
        if next == self.steering {
            return Ok(());
        }
        self.steering = next;
        let window = self.config.window_length.min(self.total_length);
        if window > 0.0 {
            let removed = self.remove_distal(window);
            let (kappa, phi) = next.bend();
            self.append_arc(kappa, phi, removed);
        }
        Ok(())
    }

    fn append_arc(&mut self, kappa: f64, phi: f64, mut length: f64) {
        let cap = Segment::max_length(kappa);
        if let Some(last) = self.segments.last_mut() {
            if last.matches(kappa, phi) && last.length < cap {
                let extend = length.min(cap - last.length);
                last.length += extend;
                length -= extend;
            }
        }
        while length > LENGTH_EPS {
            let piece = length.min(cap);
            self.segments.push(Segment::canonical(piece, kappa, phi));
            length -= piece;
        }
        self.refresh_length();
    }

    fn remove_distal(&mut self, delta: f64) -> f64 {
        let target = delta.min(self.total_length);
        let mut remaining = target;
        while remaining > 0.0 {
            let Some(last) = self.segments.last_mut() else {
                break;
            };
            if last.length <= remaining + LENGTH_EPS {
                remaining -= last.length;
                self.segments.pop();
            } else {
                last.length -= remaining;
                remaining = 0.0;
            }
        }
        self.refresh_length();
        target
    }

    fn refresh_length(&mut self) {
        self.total_length = self.segments.iter().map(|s| s.length).sum();
    }
}

fn check_delta(delta: f64) -> Result<(), KinematicsError> {
    if !delta.is_finite() {
        return Err(KinematicsError::NonFinite("length change"));
    }
    if delta <= 0.0 {
        return Err(KinematicsError::NonPositiveDelta(delta));
    }
    Ok(())
}

fn normalize_angle(a: f64) -> f64 {
    let r = a.rem_euclid(TAU);
    if r >= TAU {
        0.0
    } else {
        r
    }
}

fn angle_distance(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(TAU);
    d.min(TAU - d)
}
