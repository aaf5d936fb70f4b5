//! Scripted operator.
//!
//! Authors hand traces by closed-loop control: each command window picks
//! axis values from the exact simulated state, turns them back into hand
//! positions through the inverse axis map, and feeds a live session so the
//! operator can wait on the planner the way a person waits on the cue.

use nalgebra::{Vector2, Vector3};
use thiserror::Error;

use crate::gesture::{
    CommandFrame, Decimator, GestureCalibration, GestureConfig, GestureError, HandSample,
    AXIS_RESOLUTION,
};
use crate::guidance::{block_grasp_point, placement_point, Phase, TaskContext};
use crate::session::{Session, SessionConfig, SessionError};
use crate::trace::Trace;
use crate::world::{Scenario, World, WorldError};

const LENGTH_TOL: f64 = 1e-7;
const KAPPA_TOL: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum ScriptError {
    #[error(transparent)]
    Session(#[from] SessionError),
    #[error(transparent)]
    Gesture(#[from] GestureError),
    #[error(transparent)]
    World(#[from] WorldError),
    #[error("unreachable: {0}")]
    Unreachable(String),
    #[error("script stalled: {0}")]
    Stalled(String),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScriptConfig {
    /// Operator's neutral hand position in the capture frame (m).
    pub neutral: Vector3<f64>,
    /// Operator facing direction (unit, horizontal).
    pub facing: Vector2<f64>,
    /// Timestamp of the first sample (s).
    pub start_time: f64,
    /// Height above the floor where reaching arcs start (m).
    pub anchor_height: f64,
    /// Extra height above the placement point before release (m).
    pub place_clearance: f64,
    /// Neutral hold appended after the last release (s).
    pub settle: f64,
    /// Give up after this much trace time (s).
    pub max_duration: f64,
}

impl Default for ScriptConfig {
    fn default() -> Self {
        let yaw: f64 = 0.4;
        Self {
            neutral: Vector3::new(0.31, -0.12, 1.05),
            facing: Vector2::new(yaw.cos(), yaw.sin()),
            start_time: 3.0,
            anchor_height: 0.45,
            place_clearance: 0.005,
            settle: 0.5,
            max_duration: 180.0,
        }
    }
}

#[derive(Clone, Copy, Debug, Default)]
struct Axes {
    grow: f64,
    lr: f64,
    ud: f64,
    grip: f64,
}

impl Axes {
    fn grip(grip: f64) -> Self {
        Self { grip, ..Default::default() }
    }
}

/// Snaps to the center of an axis quantization bin.
fn snap(v: f64) -> f64 {
    let q = (v.clamp(-1.0, 1.0) / AXIS_RESOLUTION).round() * AXIS_RESOLUTION;
    if q == 0.0 {
        0.0
    } else {
        q
    }
}

/// Constant-curvature arc, tangent to local +z at the origin, whose tip
/// placed `offset` further along its end tangent lands on `p`.
/// Returns `(kappa, phi, length)`.
pub fn solve_arc(p: &Vector3<f64>, offset: f64) -> Option<(f64, f64, f64)> {
    let r = p.x.hypot(p.y);
    let phi = p.y.atan2(p.x).rem_euclid(std::f64::consts::TAU);
    if r < 1e-9 {
        return (p.z > offset).then_some((0.0, 0.0, p.z - offset));
    }
    let mut theta = 0.0f64;
    let (mut rr, mut dd) = (r, p.z);
    for _ in 0..100 {
        rr = r - offset * theta.sin();
        dd = p.z - offset * theta.cos();
        let next = 2.0 * rr.atan2(dd);
        let done = (next - theta).abs() < 1e-15;
        theta = next;
        if done {
            break;
        }
    }
    if rr <= 0.0 {
        return None;
    }
    let kappa = 2.0 * rr / (rr * rr + dd * dd);
    Some((kappa, phi, theta / kappa))
}

struct Operator {
    cal: GestureCalibration,
    gesture: GestureConfig,
    per_window: u64,
    step: f64,
    start_time: f64,
    max_windows: u64,
    session: Session,
    mirror: World,
    decimator: Decimator,
    trace: Trace,
    samples: u64,
    windows: u64,
}

impl Operator {
    fn hand_position(&self, a: &Axes) -> Vector3<f64> {
        let (forward, lateral, up) = self.cal.basis();
        let g = &self.gesture;
        self.cal.neutral
            + forward * g.displacement_for(snap(a.grow))
            + lateral * g.displacement_for(snap(a.lr))
            + up * g.displacement_for(snap(a.ud))
    }

    /// Holds one hand pose for a whole command window.
    fn emit(&mut self, a: Axes) -> Result<(), ScriptError> {
        if self.windows >= self.max_windows {
            return Err(ScriptError::Stalled(format!(
                "no progress after {} windows (plan {})",
                self.windows,
                self.session.plan().phase
            )));
        }
        let p = self.hand_position(&a);
        let mut frames: Vec<CommandFrame> = Vec::new();
        for _ in 0..self.per_window {
            let t = self.start_time + self.samples as f64 / self.gesture.input_rate;
            let s = HandSample::new(t, p, a.grip)?;
            self.trace.push_sample(s);
            self.session.ingest(&s)?;
            frames.extend(self.decimator.push(&s)?);
            self.samples += 1;
        }
        self.windows += 1;
        frames.extend(self.decimator.close_through(self.windows));
        for f in &frames {
            self.mirror.step(f, self.step)?;
        }
        Ok(())
    }

    fn length_axis(&self, target: f64) -> Option<f64> {
        let diff = target - self.mirror.robot.total_length();
        (diff.abs() > LENGTH_TOL).then(|| diff / (self.mirror.config.grow_rate * self.step))
    }

    fn drive_length(&mut self, target: f64, grip: f64) -> Result<(), ScriptError> {
        if target > self.mirror.robot.max_length() + LENGTH_TOL {
            return Err(ScriptError::Unreachable(format!(
                "needs {target:.3} m of body, robot has {:.3} m",
                self.mirror.robot.max_length()
            )));
        }
        while let Some(grow) = self.length_axis(target) {
            self.emit(Axes { grow, ..Axes::grip(grip) })?;
        }
        Ok(())
    }

    fn drive_steering(&mut self, lr: f64, ud: f64, grip: f64) -> Result<(), ScriptError> {
        let rate = self.mirror.robot.config().kappa_rate * self.step;
        loop {
            let s = self.mirror.robot.steering();
            let (dl, du) = (lr - s.kappa_lr, ud - s.kappa_ud);
            if dl.abs() <= KAPPA_TOL && du.abs() <= KAPPA_TOL {
                return Ok(());
            }
            self.emit(Axes { lr: dl / rate, ud: du / rate, ..Axes::grip(grip) })?;
        }
    }

    fn hold_until(
        &mut self,
        grip: f64,
        limit: u64,
        what: &str,
        done: impl Fn(&Self) -> bool,
    ) -> Result<(), ScriptError> {
        for _ in 0..limit {
            if done(self) {
                return Ok(());
            }
            self.emit(Axes::grip(grip))?;
        }
        if done(self) {
            Ok(())
        } else {
            Err(ScriptError::Stalled(format!("{what} (plan {})", self.session.plan().phase)))
        }
    }

    fn context(&self) -> TaskContext {
        TaskContext {
            tower_base: self.mirror.tower_base,
            floor_z: self.mirror.floor_z,
            block_side: self.mirror.blocks.first().map_or(0.05, |b| 2.0 * b.half_extent),
            goal_height: 0,
        }
    }

    /// Reach the block's grasp point with the tip, grasp, lift back to the hub,
    /// lower over the tower, release.
    fn stack(&mut self, block: u32, cfg: &SessionConfig, script: &ScriptConfig) -> Result<(), ScriptError> {
        let center = self
            .mirror
            .block(block)
            .ok_or_else(|| ScriptError::Unreachable(format!("no block {block}")))?
            .center();
        let base = self.mirror.robot.base().position;
        let window = self.mirror.robot.config().window_length;
        let hub = base.z - (self.mirror.floor_z + script.anchor_height) + window;
        self.drive_length(hub, 0.0)?;

        let anchor = self.mirror.robot.forward_kinematics(hub - window).map_err(WorldError::from)?;
        let target = block_grasp_point(&center, &cfg.guidance);
        let local = anchor.inverse().transform_point(&target);
        let (kappa, phi, length) = solve_arc(&local, 0.0)
            .ok_or_else(|| ScriptError::Unreachable(format!("block {block} is behind the anchor")))?;
        if length < window || kappa > self.mirror.robot.config().kappa_max {
            return Err(ScriptError::Unreachable(format!(
                "block {block} needs kappa {kappa:.3} over {length:.3} m"
            )));
        }
        self.drive_steering(kappa * phi.cos(), kappa * phi.sin(), 0.0)?;
        self.drive_length(hub - window + length, 0.0)?;

        self.hold_until(1.0, 20, "grasp", |op| op.mirror.grasped_block().is_some())?;
        if self.mirror.grasped_block() != Some(block) {
            return Err(ScriptError::Stalled(format!("grasped the wrong block, wanted {block}")));
        }
        self.drive_length(hub, 1.0)?;
        self.drive_steering(0.0, 0.0, 1.0)?;

        let tip = self.mirror.tip_pose().position;
        if (tip.xy() - self.mirror.tower_base).norm() >= cfg.guidance.place_radius {
            return Err(ScriptError::Unreachable("tower base is not below the robot".into()));
        }
        let place = placement_point(&self.context(), self.mirror.tower_height(), &cfg.guidance);
        self.drive_length(base.z - (place.z + script.place_clearance), 1.0)?;
        self.hold_until(1.0, 30, "place phase", |op| {
            op.session.plan().phase == Phase::Place(block)
        })?;
        self.hold_until(0.0, 20, "release", |op| op.mirror.grasped_block().is_none())?;
        Ok(())
    }
}

/// Authors a trace that stacks blocks in the planner's order until the goal
/// tower stands.
pub fn tower_trace(
    cfg: &SessionConfig,
    scenario: &Scenario,
    script: &ScriptConfig,
) -> Result<Trace, ScriptError> {
    cfg.validate()?;
    let ratio = cfg.input_rate / cfg.command_rate;
    if (ratio - ratio.round()).abs() > 1e-9 {
        return Err(ScriptError::Unreachable(
            "input rate must be a whole multiple of the command rate".into(),
        ));
    }
    let cal = GestureCalibration::new(script.neutral, script.facing)?;
    let mut session = Session::new(cfg, scenario.build()?)?;
    session.calibrate(cal)?;
    let gesture = cfg.gesture_config();
    let mut op = Operator {
        cal,
        gesture,
        per_window: ratio.round() as u64,
        step: cfg.physics_step(),
        start_time: script.start_time,
        max_windows: (script.max_duration * cfg.command_rate).ceil() as u64,
        session,
        mirror: scenario.build()?,
        decimator: Decimator::new(cal, gesture)?,
        trace: Trace::new(cal),
        samples: 0,
        windows: 0,
    };

    loop {
        op.hold_until(0.0, 10, "next reach", |op| {
            matches!(op.session.plan().phase, Phase::Reach(_) | Phase::Done)
        })?;
        match op.session.plan().phase {
            Phase::Reach(b) => op.stack(b, cfg, script)?,
            _ => break,
        }
    }
    let settle = (script.settle * cfg.command_rate).ceil() as u64;
    for _ in 0..settle {
        op.emit(Axes::default())?;
    }
    Ok(op.trace)
}

/// The bundled demonstration: three blocks stacked on the default scenario.
pub fn default_tower_trace() -> Result<Trace, ScriptError> {
    tower_trace(
        &SessionConfig::default(),
        &Scenario::default_scenario(),
        &ScriptConfig::default(),
    )
}
