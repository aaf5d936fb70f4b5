//! Multi-rate session engine.
//!
//! Hand samples arrive at the input rate and are decimated into command
//! frames; the world advances once per command frame; the tracker, planner
//! and cue run at the perception rate. Everything runs on one simulated
//! timeline measured from the first calibrated sample, driven by sample
//! timestamps, so live sessions and replays of their recordings evolve
//! identically. When a perception tick and a command tick coincide, the
//! perception tick runs first.

use std::collections::VecDeque;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::batch;
use crate::gesture::{
    frame_count, CommandFrame, Decimator, GestureCalibration, GestureConfig, GestureError,
    HandSample,
};
use crate::guidance::{
    compute_cue, danger_margin, plan, GuidanceConfig, GuidanceCue, Phase, TaskContext, TaskPlan,
};
use crate::perception::{NoiseConfig, Perception, PerceptionError, TrackedScene};
use crate::protocol::{BlockView, CueView, StateUpdate, ZoneView, PROTOCOL_VERSION};
use crate::trace::{Trace, TraceEntry, TraceError};
use crate::world::{Scenario, World, WorldError, WorldEvent};

const TICK_EPS: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("invalid session config: {0}")]
    Config(String),
    #[error("no calibration yet; send a calibration before hand samples")]
    NotCalibrated,
    #[error("session already finished")]
    Finished,
    #[error(transparent)]
    Gesture(#[from] GestureError),
    #[error(transparent)]
    World(#[from] WorldError),
    #[error(transparent)]
    Perception(#[from] PerceptionError),
    #[error(transparent)]
    Trace(#[from] TraceError),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[default]
    Live,
    Replay,
}

/// Displacement thresholds of the hand-to-axis map.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GestureMapping {
    pub deadband: f64,
    pub saturation: f64,
}

impl Default for GestureMapping {
    fn default() -> Self {
        let d = GestureConfig::default();
        Self {
            deadband: d.deadband,
            saturation: d.saturation,
        }
    }
}

/// Session configuration. Loaded from TOML; every field has a default.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SessionConfig {
    /// Hand sample rate (Hz).
    pub input_rate: f64,
    /// Command frame rate (Hz).
    pub command_rate: f64,
    /// Tracker / guidance / broadcast rate (Hz).
    pub perception_rate: f64,
    /// World step per command frame (s). Defaults to `1 / command_rate`.
    pub physics_step: Option<f64>,
    /// Scenario JSON; the bundled default scenario when absent.
    pub scenario: Option<PathBuf>,
    /// Tower height that completes the task.
    pub goal_height: usize,
    pub mode: Mode,
    /// Address the live server binds.
    pub listen: String,
    /// Live mode: record ingested samples to this trace file.
    pub record: Option<PathBuf>,
    /// Points per backbone polyline in state updates.
    pub backbone_samples: usize,
    pub noise: NoiseConfig,
    pub guidance: GuidanceConfig,
    pub gesture: GestureMapping,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            input_rate: 270.0,
            command_rate: 10.0,
            perception_rate: 30.0,
            physics_step: None,
            scenario: None,
            goal_height: 3,
            mode: Mode::Live,
            listen: "127.0.0.1:8765".into(),
            record: None,
            backbone_samples: 32,
            noise: NoiseConfig::default(),
            guidance: GuidanceConfig::default(),
            gesture: GestureMapping::default(),
        }
    }
}

impl SessionConfig {
    pub fn from_toml(text: &str) -> Result<Self, SessionError> {
        toml::from_str(text).map_err(|e| SessionError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, SessionError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| SessionError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("session config serializes")
    }

    pub fn physics_step(&self) -> f64 {
        self.physics_step.unwrap_or(1.0 / self.command_rate)
    }

    pub fn gesture_config(&self) -> GestureConfig {
        GestureConfig {
            deadband: self.gesture.deadband,
            saturation: self.gesture.saturation,
            input_rate: self.input_rate,
            command_rate: self.command_rate,
        }
    }

    pub fn validate(&self) -> Result<(), SessionError> {
        for (name, rate) in [
            ("input_rate", self.input_rate),
            ("command_rate", self.command_rate),
            ("perception_rate", self.perception_rate),
            ("physics_step", self.physics_step()),
        ] {
            if !(rate.is_finite() && rate > 0.0) {
                return Err(SessionError::Config(format!("{name} must be positive, got {rate}")));
            }
        }
        if self.mode == Mode::Replay {
            let ratio = self.input_rate / self.command_rate;
            if (ratio - ratio.round()).abs() > 1e-9 {
                return Err(SessionError::Config(format!(
                    "command_rate {} must divide input_rate {} evenly in replay mode",
                    self.command_rate, self.input_rate
                )));
            }
        }
        if self.backbone_samples < 2 {
            return Err(SessionError::Config("backbone_samples must be at least 2".into()));
        }
        self.gesture_config().validate()?;
        self.noise.validate()?;
        Ok(())
    }

    pub fn load_scenario(&self) -> Result<Scenario, SessionError> {
        Ok(match &self.scenario {
            Some(p) => Scenario::load(p)?,
            None => Scenario::default_scenario(),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum EventKind {
    Phase { from: String, to: String },
    Grasp { block: u32 },
    Release { block: u32, state: String },
    DangerEnter { margin: f64 },
    DangerExit { margin: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionEvent {
    pub t: f64,
    #[serde(flatten)]
    pub kind: EventKind,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionReport {
    pub duration: f64,
    pub frames_sent: u64,
    pub snapshots: u64,
    pub tower_height: usize,
    pub success: bool,
    /// `None` when the scenario has no danger zones.
    pub min_danger_margin: Option<f64>,
    pub events: Vec<SessionEvent>,
}

impl SessionReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("reports serialize")
    }

    /// Phase-transition events only.
    pub fn phase_log(&self) -> Vec<(f64, String, String)> {
        self.events
            .iter()
            .filter_map(|e| match &e.kind {
                EventKind::Phase { from, to } => Some((e.t, from.clone(), to.clone())),
                _ => None,
            })
            .collect()
    }
}

/// One operator session.
#[derive(Clone, Debug)]
pub struct Session {
    cfg: SessionConfig,
    gesture: GestureConfig,
    ctx: TaskContext,
    world: World,
    perception: Perception,
    decimator: Option<Decimator>,
    pending: VecDeque<CommandFrame>,
    plan: TaskPlan,
    cue: GuidanceCue,
    last_margin: f64,
    min_margin: f64,
    frames_sent: u64,
    snapshots: u64,
    samples: u64,
    events: Vec<SessionEvent>,
    latest: StateUpdate,
    state_log: Option<Vec<StateUpdate>>,
    finished: Option<SessionReport>,
}

impl Session {
    pub fn new(cfg: &SessionConfig, world: World) -> Result<Self, SessionError> {
        cfg.validate()?;
        let mut perception = Perception::new(cfg.noise, cfg.physics_step())?;
        perception.observe(&world, 0.0);
        let block_side = world.blocks.first().map_or(0.05, |b| 2.0 * b.half_extent);
        let ctx = TaskContext {
            tower_base: world.tower_base,
            floor_z: world.floor_z,
            block_side,
            goal_height: cfg.goal_height,
        };
        let truth = TrackedScene::from_world(&world, 0.0);
        let plan = plan(&truth, &ctx, &cfg.guidance, None);
        let mut s = Self {
            cfg: cfg.clone(),
            gesture: cfg.gesture_config(),
            ctx,
            world,
            perception,
            decimator: None,
            pending: VecDeque::new(),
            plan,
            cue: GuidanceCue::default(),
            last_margin: danger_margin(&truth),
            min_margin: f64::INFINITY,
            frames_sent: 0,
            snapshots: 0,
            samples: 0,
            events: Vec::new(),
            latest: empty_state(),
            state_log: None,
            finished: None,
        };
        s.latest = s.build_state(0.0);
        Ok(s)
    }

    /// Keeps every state update for later inspection.
    pub fn with_state_log(mut self) -> Self {
        self.state_log = Some(Vec::new());
        self
    }

    pub fn from_config(cfg: &SessionConfig) -> Result<Self, SessionError> {
        let world = cfg.load_scenario()?.build()?;
        Self::new(cfg, world)
    }

    pub fn world(&self) -> &World {
        &self.world
    }

    pub fn plan(&self) -> &TaskPlan {
        &self.plan
    }

    pub fn cue(&self) -> &GuidanceCue {
        &self.cue
    }

    pub fn calibration(&self) -> Option<&GestureCalibration> {
        self.decimator.as_ref().map(|d| d.calibration())
    }

    pub fn frames_sent(&self) -> u64 {
        self.frames_sent
    }

    pub fn samples_ingested(&self) -> u64 {
        self.samples
    }

    pub fn latest_state(&self) -> &StateUpdate {
        &self.latest
    }

    pub fn state_log(&self) -> Option<&[StateUpdate]> {
        self.state_log.as_deref()
    }

    pub fn is_finished(&self) -> bool {
        self.finished.is_some()
    }

    /// The planner has observed the goal tower.
    pub fn goal_reached(&self) -> bool {
        self.plan.phase == Phase::Done && self.plan.tower_height >= self.cfg.goal_height
    }

    /// Session time of the most recent sample.
    pub fn now(&self) -> f64 {
        match &self.decimator {
            Some(d) => match (d.last_time(), d.origin()) {
                (Some(t), Some(o)) => t - o,
                _ => 0.0,
            },
            None => 0.0,
        }
    }

    /// Sets the calibration used for every sample ingested from now on.
    pub fn calibrate(&mut self, cal: GestureCalibration) -> Result<(), SessionError> {
        if self.finished.is_some() {
            return Err(SessionError::Finished);
        }
        match &mut self.decimator {
            Some(d) => d.set_calibration(cal),
            None => self.decimator = Some(Decimator::new(cal, self.gesture)?),
        }
        Ok(())
    }

    /// Feeds one hand sample and runs every tick up to its timestamp.
    pub fn ingest(&mut self, sample: &HandSample) -> Result<(), SessionError> {
        if self.finished.is_some() {
            return Err(SessionError::Finished);
        }
        let dec = self.decimator.as_mut().ok_or(SessionError::NotCalibrated)?;
        let frames = dec.push(sample)?;
        self.pending.extend(frames);
        self.samples += 1;
        let now = self.now();
        self.advance_to(now)
    }

    /// Duration covered by the ingested samples.
    pub fn duration(&self) -> f64 {
        if self.samples == 0 {
            0.0
        } else {
            self.now() + 1.0 / self.cfg.input_rate
        }
    }

    /// Runs the ticks that fall inside the last sample period and produces
    /// the final report. Later calls return the same report.
    pub fn finish(&mut self) -> Result<SessionReport, SessionError> {
        if let Some(r) = &self.finished {
            return Ok(r.clone());
        }
        let duration = self.duration();
        if self.samples > 0 {
            self.advance_to(duration)?;
        }
        let report = SessionReport {
            duration,
            frames_sent: self.frames_sent,
            snapshots: self.snapshots,
            tower_height: self.world.tower_height(),
            success: self.world.tower_height() >= self.cfg.goal_height,
            min_danger_margin: self.min_margin.is_finite().then_some(self.min_margin),
            events: self.events.clone(),
        };
        self.finished = Some(report.clone());
        Ok(report)
    }

    fn advance_to(&mut self, limit: f64) -> Result<(), SessionError> {
        let max_perception = frame_count(limit, self.cfg.perception_rate);
        let max_command = frame_count(limit, self.cfg.command_rate);
        loop {
            let p_next = self.snapshots + 1;
            let c_next = self.frames_sent + 1;
            let p_due = p_next <= max_perception;
            let c_due = c_next <= max_command;
            let tp = p_next as f64 / self.cfg.perception_rate;
            let tc = c_next as f64 / self.cfg.command_rate;
            match (p_due, c_due) {
                (false, false) => return Ok(()),
                (true, false) => self.perception_tick(tp),
                (false, true) => self.command_tick(tc)?,
                (true, true) => {
                    if tp <= tc + TICK_EPS {
                        self.perception_tick(tp)
                    } else {
                        self.command_tick(tc)?
                    }
                }
            }
        }
    }

    fn command_tick(&mut self, t: f64) -> Result<(), SessionError> {
        let k = self.frames_sent;
        if let Some(dec) = self.decimator.as_mut() {
            self.pending.extend(dec.close_through(k + 1));
        }
        let frame = self.pending.pop_front().unwrap_or_default();
        debug_assert_eq!(frame.seq, k);
        for ev in self.world.step(&frame, self.cfg.physics_step())? {
            let kind = match ev {
                WorldEvent::Grasped { block } => EventKind::Grasp { block },
                WorldEvent::Released { block, state } => EventKind::Release {
                    block,
                    state: state.label(),
                },
            };
            self.events.push(SessionEvent { t, kind });
        }
        self.perception.observe(&self.world, t);
        self.frames_sent += 1;
        Ok(())
    }

    fn perception_tick(&mut self, t: f64) {
        let scene = self
            .perception
            .snapshot(t)
            .expect("perception history is seeded at construction");
        let next = plan(&scene, &self.ctx, &self.cfg.guidance, Some(&self.plan));
        if next.phase != self.plan.phase {
            self.events.push(SessionEvent {
                t,
                kind: EventKind::Phase {
                    from: self.plan.phase.to_string(),
                    to: next.phase.to_string(),
                },
            });
        }
        self.plan = next;
        self.cue = compute_cue(&scene, &self.plan, &self.cfg.guidance);
        let margin = danger_margin(&scene);
        if margin < 0.0 && self.last_margin >= 0.0 {
            self.events.push(SessionEvent { t, kind: EventKind::DangerEnter { margin } });
        } else if margin >= 0.0 && self.last_margin < 0.0 {
            self.events.push(SessionEvent { t, kind: EventKind::DangerExit { margin } });
        }
        self.last_margin = margin;
        self.min_margin = self.min_margin.min(margin);
        self.snapshots += 1;
        self.latest = self.build_state(t);
        if let Some(log) = &mut self.state_log {
            log.push(self.latest.clone());
        }
    }

    fn build_state(&self, t: f64) -> StateUpdate {
        let backbone = self
            .world
            .robot
            .backbone_polyline(self.cfg.backbone_samples)
            .expect("backbone_samples validated")
            .into_iter()
            .map(Into::into)
            .collect();
        let margin = self.last_margin;
        StateUpdate {
            v: PROTOCOL_VERSION,
            t,
            backbone,
            blocks: self
                .world
                .blocks
                .iter()
                .map(|b| BlockView {
                    id: b.id,
                    p: b.center().into(),
                    state: b.state.label(),
                })
                .collect(),
            zones: self
                .world
                .danger_zones
                .iter()
                .map(|z| ZoneView { c: z.center.into(), r: z.radius })
                .collect(),
            cue: CueView {
                dir: self.cue.direction.into(),
                grip: self.cue.grip_cue,
            },
            phase: self.plan.phase.to_string(),
            tower: self.world.tower_height(),
            danger_margin: margin.is_finite().then_some(margin),
        }
    }
}

fn empty_state() -> StateUpdate {
    StateUpdate {
        v: PROTOCOL_VERSION,
        t: 0.0,
        backbone: Vec::new(),
        blocks: Vec::new(),
        zones: Vec::new(),
        cue: CueView { dir: [0.0; 3], grip: 0.0 },
        phase: String::new(),
        tower: 0,
        danger_margin: None,
    }
}

/// Feeds a whole trace through `session` and finishes it.
pub fn replay_into(session: &mut Session, trace: &Trace) -> Result<SessionReport, SessionError> {
    for entry in &trace.entries {
        match entry {
            TraceEntry::Calibration(cal) => session.calibrate(*cal)?,
            TraceEntry::Sample(s) => session.ingest(s)?,
        }
    }
    session.finish()
}

/// Deterministic replay of a recorded or scripted trace over a scenario.
pub fn run_replay(
    cfg: &SessionConfig,
    trace: &Trace,
    scenario: &Scenario,
) -> Result<SessionReport, SessionError> {
    let mut cfg = cfg.clone();
    cfg.mode = Mode::Replay;
    let mut session = Session::new(&cfg, scenario.build()?)?;
    replay_into(&mut session, trace)
}

/// Like [`run_replay`], but loads the trace from disk.
pub fn run_replay_file(
    cfg: &SessionConfig,
    trace_path: &Path,
) -> Result<SessionReport, SessionError> {
    let trace = Trace::load(trace_path)?;
    run_replay(cfg, &trace, &cfg.load_scenario()?)
}

/// Replays one trace under many configurations (e.g. noise seeds) on the
/// batch pool.
pub fn replay_batch(
    cfgs: &[SessionConfig],
    trace: &Trace,
    scenario: &Scenario,
) -> Vec<Result<SessionReport, SessionError>> {
    batch::par_map(cfgs, |cfg| run_replay(cfg, trace, scenario))
}
