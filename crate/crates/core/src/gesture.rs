//! Gesture interpreter: turns a high-rate stream of operator hand samples into
//! low-rate signed-axis robot commands.
//!
//! The hand's displacement from a calibrated neutral point is decomposed into
//! forward (grow/retract), lateral (left/right) and vertical (up/down)
//! components relative to the operator's facing direction, so the mapping does
//! not depend on where the operator stands in the capture volume or which way
//! the capture frame is oriented about the vertical. All three axes are read
//! from every sample, so they can be commanded at the same time.

use nalgebra::{Rotation3, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::batch;

/// Axis outputs are quantized to this resolution.
pub const AXIS_RESOLUTION: f64 = 1e-6;

/// Minimum sample count accepted by [`calibrate`] (0.1 s at 270 Hz).
pub const MIN_CALIBRATION_SAMPLES: usize = 27;

/// Slack applied when assigning timestamps to decimation windows.
const WINDOW_EPS: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GestureError {
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("calibration needs at least {MIN_CALIBRATION_SAMPLES} samples, got {0}")]
    TooFewSamples(usize),
    #[error("facing direction must be a horizontal unit vector, got norm {0}")]
    InvalidFacing(f64),
    #[error("timestamp {t} precedes previous sample at {prev}")]
    UnorderedTimestamps { t: f64, prev: f64 },
    #[error("invalid gesture config: {0}")]
    InvalidConfig(String),
}

/// One motion-capture sample: hand position in the capture frame (+z up) and
/// the holdable controller's hinge value (1 = closed).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HandSample {
    pub t: f64,
    pub position: Vector3<f64>,
    pub grip: f64,
}

impl HandSample {
    pub fn new(t: f64, position: Vector3<f64>, grip: f64) -> Result<Self, GestureError> {
        if !t.is_finite() {
            return Err(GestureError::NonFinite("sample time"));
        }
        if !position.iter().all(|v| v.is_finite()) {
            return Err(GestureError::NonFinite("sample position"));
        }
        if !grip.is_finite() {
            return Err(GestureError::NonFinite("sample grip"));
        }
        Ok(Self {
            t,
            position,
            grip: grip.clamp(0.0, 1.0),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GestureCalibration {
    pub neutral: Vector3<f64>,
    /// Operator facing direction, horizontal unit vector in the capture frame.
    pub forward: Vector2<f64>,
}

impl GestureCalibration {
    pub fn new(neutral: Vector3<f64>, forward: Vector2<f64>) -> Result<Self, GestureError> {
        if !neutral.iter().all(|v| v.is_finite()) {
            return Err(GestureError::NonFinite("neutral"));
        }
        if !forward.iter().all(|v| v.is_finite()) {
            return Err(GestureError::NonFinite("facing"));
        }
        let norm = forward.norm();
        if (norm - 1.0).abs() > 1e-9 {
            return Err(GestureError::InvalidFacing(norm));
        }
        Ok(Self { neutral, forward })
    }

    /// Unit vectors (forward, lateral, up) of the operator frame.
    pub fn basis(&self) -> (Vector3<f64>, Vector3<f64>, Vector3<f64>) {
        let up = Vector3::z();
        let forward = Vector3::new(self.forward.x, self.forward.y, 0.0);
        (forward, up.cross(&forward), up)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GestureConfig {
    /// Displacement below which an axis reads exactly zero (m).
    pub deadband: f64,
    /// Displacement at which an axis saturates at ±1 (m).
    pub saturation: f64,
    /// Hand sample rate (Hz).
    pub input_rate: f64,
    /// Command frame rate (Hz).
    pub command_rate: f64,
}

impl Default for GestureConfig {
    fn default() -> Self {
        Self {
            deadband: 0.05,
            saturation: 0.25,
            input_rate: 270.0,
            command_rate: 10.0,
        }
    }
}

impl GestureConfig {
    pub fn validate(&self) -> Result<(), GestureError> {
        let ok = |v: f64| v.is_finite() && v > 0.0;
        if !(self.deadband.is_finite() && self.deadband >= 0.0 && ok(self.saturation)) {
            return Err(GestureError::InvalidConfig(
                "deadband and saturation must be finite and non-negative".into(),
            ));
        }
        if self.saturation <= self.deadband {
            return Err(GestureError::InvalidConfig(
                "saturation must exceed deadband".into(),
            ));
        }
        if !(ok(self.input_rate) && ok(self.command_rate)) {
            return Err(GestureError::InvalidConfig("rates must be positive".into()));
        }
        Ok(())
    }

    pub fn command_period(&self) -> f64 {
        1.0 / self.command_rate
    }

    /// Displacement that [`axis`](Self::axis) maps to `value`. Inverse of the
    /// axis map on `[-1, 1]`, used to author scripted traces.
    pub fn displacement_for(&self, value: f64) -> f64 {
        if value == 0.0 {
            0.0
        } else {
            value.signum()
                * (self.deadband + value.abs().min(1.0) * (self.saturation - self.deadband))
        }
    }

    /// Deadband/saturation map from a displacement component to `[-1, 1]`.
    pub fn axis(&self, x: f64) -> f64 {
        let mag = x.abs();
        if mag < self.deadband {
            return 0.0;
        }
        let v = quantize(((mag - self.deadband) / (self.saturation - self.deadband)).min(1.0));
        if v == 0.0 {
            0.0
        } else {
            x.signum() * v
        }
    }
}

fn quantize(v: f64) -> f64 {
    (v / AXIS_RESOLUTION).round() * AXIS_RESOLUTION
}

/// Axis readings for one (possibly averaged) hand position.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AxisValues {
    pub grow: f64,
    pub lr: f64,
    pub ud: f64,
    pub grip: f64,
}

/// 10 Hz robot command.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CommandFrame {
    pub seq: u64,
    pub t: f64,
    pub grow_axis: f64,
    pub lr_axis: f64,
    pub ud_axis: f64,
    pub grip: f64,
}

impl CommandFrame {
    pub fn is_finite(&self) -> bool {
        [self.t, self.grow_axis, self.lr_axis, self.ud_axis, self.grip]
            .iter()
            .all(|v| v.is_finite())
    }
}

/// Neutral point from the mean of the given samples; forward from `facing`.
pub fn calibrate(
    samples: &[HandSample],
    facing: Vector2<f64>,
) -> Result<GestureCalibration, GestureError> {
    if samples.len() < MIN_CALIBRATION_SAMPLES {
        return Err(GestureError::TooFewSamples(samples.len()));
    }
    let sum = samples
        .iter()
        .fold(Vector3::zeros(), |acc, s| acc + s.position);
    GestureCalibration::new(sum / samples.len() as f64, facing)
}

pub fn axis_values(
    position: &Vector3<f64>,
    grip: f64,
    cal: &GestureCalibration,
    cfg: &GestureConfig,
) -> AxisValues {
    axes_from_local(&operator_displacement(position, cal), grip, cfg)
}

/// Displacement from neutral as (forward, lateral, up) components.
fn operator_displacement(position: &Vector3<f64>, cal: &GestureCalibration) -> Vector3<f64> {
    let d = position - cal.neutral;
    let (forward, lateral, up) = cal.basis();
    Vector3::new(d.dot(&forward), d.dot(&lateral), d.dot(&up))
}

fn axes_from_local(local: &Vector3<f64>, grip: f64, cfg: &GestureConfig) -> AxisValues {
    AxisValues {
        grow: cfg.axis(local.x),
        lr: cfg.axis(local.y),
        ud: cfg.axis(local.z),
        grip: grip.clamp(0.0, 1.0),
    }
}

/// Streaming window-mean decimator.
///
/// Windows are `[origin + k·T, origin + (k+1)·T)` where `origin` is the time
/// of the first sample and `T` the command period. Frame `k` is emitted once a
/// later window has started (or on [`close_through`](Self::close_through)).
#[derive(Clone, Debug)]
pub struct Decimator {
    cfg: GestureConfig,
    cal: GestureCalibration,
    origin: Option<f64>,
    last_t: Option<f64>,
    /// Index of the earliest window not yet emitted.
    next_window: u64,
    /// Sum of operator-frame displacements in the open window.
    sum: Vector3<f64>,
    grip_sum: f64,
    count: usize,
    last_axes: AxisValues,
}

impl Decimator {
    pub fn new(cal: GestureCalibration, cfg: GestureConfig) -> Result<Self, GestureError> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            cal,
            origin: None,
            last_t: None,
            next_window: 0,
            sum: Vector3::zeros(),
            grip_sum: 0.0,
            count: 0,
            last_axes: AxisValues::default(),
        })
    }

    pub fn calibration(&self) -> &GestureCalibration {
        &self.cal
    }

    /// Applies to every sample pushed from now on.
    pub fn set_calibration(&mut self, cal: GestureCalibration) {
        self.cal = cal;
    }

    pub fn origin(&self) -> Option<f64> {
        self.origin
    }

    pub fn last_time(&self) -> Option<f64> {
        self.last_t
    }

    pub fn frames_emitted(&self) -> u64 {
        self.next_window
    }

    /// Window index that `t` falls into, relative to the stream origin.
    pub fn window_of(&self, t: f64) -> Option<u64> {
        self.origin
            .map(|o| ((t - o) * self.cfg.command_rate + WINDOW_EPS).floor().max(0.0) as u64)
    }

    /// Time at which window `k` closes.
    pub fn window_end(&self, k: u64) -> Option<f64> {
        self.origin
            .map(|o| o + (k + 1) as f64 / self.cfg.command_rate)
    }

    /// Adds a sample; returns frames for any windows it closed.
    pub fn push(&mut self, sample: &HandSample) -> Result<Vec<CommandFrame>, GestureError> {
        if let Some(prev) = self.last_t {
            if sample.t < prev {
                return Err(GestureError::UnorderedTimestamps { t: sample.t, prev });
            }
        }
        if self.origin.is_none() {
            self.origin = Some(sample.t);
        }
        self.last_t = Some(sample.t);
        let k = self.window_of(sample.t).unwrap_or(0);
        let frames = self.close_through(k);
        self.sum += operator_displacement(&sample.position, &self.cal);
        self.grip_sum += sample.grip;
        self.count += 1;
        Ok(frames)
    }

    /// Emits frames for every window with index `< windows` that is still open.
    pub fn close_through(&mut self, windows: u64) -> Vec<CommandFrame> {
        let mut frames = Vec::new();
        let Some(origin) = self.origin else {
            return frames;
        };
        while self.next_window < windows {
            if self.count > 0 {
                let n = self.count as f64;
                self.last_axes = axes_from_local(&(self.sum / n), self.grip_sum / n, &self.cfg);
                self.sum = Vector3::zeros();
                self.grip_sum = 0.0;
                self.count = 0;
            }
            let k = self.next_window;
            frames.push(CommandFrame {
                seq: k,
                t: origin + (k + 1) as f64 / self.cfg.command_rate,
                grow_axis: self.last_axes.grow,
                lr_axis: self.last_axes.lr,
                ud_axis: self.last_axes.ud,
                grip: self.last_axes.grip,
            });
            self.next_window += 1;
        }
        frames
    }
}

/// Span covered by a sample stream: each sample stands for one input period.
pub fn trace_duration(samples: &[HandSample], cfg: &GestureConfig) -> f64 {
    match (samples.first(), samples.last()) {
        (Some(a), Some(b)) => b.t - a.t + 1.0 / cfg.input_rate,
        _ => 0.0,
    }
}

/// Number of whole command windows in `duration` seconds.
pub fn frame_count(duration: f64, rate: f64) -> u64 {
    (duration * rate + WINDOW_EPS).floor().max(0.0) as u64
}

/// Decimates a complete trace into exactly `⌊duration / T⌋` frames.
pub fn decimate(
    samples: &[HandSample],
    cal: &GestureCalibration,
    cfg: &GestureConfig,
) -> Result<Vec<CommandFrame>, GestureError> {
    let mut dec = Decimator::new(*cal, *cfg)?;
    let mut frames = Vec::new();
    for s in samples {
        frames.extend(dec.push(s)?);
    }
    let total = frame_count(trace_duration(samples, cfg), cfg.command_rate);
    frames.extend(dec.close_through(total));
    frames.truncate(total as usize);
    Ok(frames)
}

/// Rotation about the vertical axis followed by a translation, applied to the
/// capture frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VerticalTransform {
    pub yaw: f64,
    pub translation: Vector3<f64>,
}

impl VerticalTransform {
    pub fn apply_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        Rotation3::from_axis_angle(&Vector3::z_axis(), self.yaw) * p + self.translation
    }

    pub fn apply_sample(&self, s: &HandSample) -> HandSample {
        HandSample {
            position: self.apply_point(&s.position),
            ..*s
        }
    }

    pub fn apply_calibration(&self, cal: &GestureCalibration) -> GestureCalibration {
        let (sin, cos) = self.yaw.sin_cos();
        let f = cal.forward;
        GestureCalibration {
            neutral: self.apply_point(&cal.neutral),
            forward: Vector2::new(cos * f.x - sin * f.y, sin * f.x + cos * f.y),
        }
    }

    /// `n` seeded transforms: yaw uniform in [-pi, pi), translation uniform in
    /// a 4 m cube centered on the origin.
    pub fn random(n: usize, seed: u64) -> Vec<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| Self {
                yaw: rng.random_range(-std::f64::consts::PI..std::f64::consts::PI),
                translation: Vector3::from_fn(|_, _| rng.random_range(-2.0..2.0)),
            })
            .collect()
    }
}

/// Serializes frames into a canonical byte string for exact comparison.
pub fn frame_bytes(frames: &[CommandFrame]) -> Vec<u8> {
    serde_json::to_vec(frames).expect("command frames serialize")
}

/// Re-decimates the trace under each transform and reports, per transform,
/// whether the frame sequence is byte-identical to the untransformed one.
pub fn check_frame_independence(
    samples: &[HandSample],
    cal: &GestureCalibration,
    cfg: &GestureConfig,
    transforms: &[VerticalTransform],
) -> Result<Vec<bool>, GestureError> {
    let reference = frame_bytes(&decimate(samples, cal, cfg)?);
    let results = batch::par_map(transforms, |tf| {
        let moved: Vec<HandSample> = samples.iter().map(|s| tf.apply_sample(s)).collect();
        decimate(&moved, &tf.apply_calibration(cal), cfg).map(|f| frame_bytes(&f) == reference)
    });
    results.into_iter().collect()
}
