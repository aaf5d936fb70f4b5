//! Command-line front end.

use std::io::Write;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;
use vine_teleop::gesture::VerticalTransform;
use vine_teleop::protocol::ServerMessage;
use vine_teleop::session::{run_replay, Mode, Session, SessionConfig};
use vine_teleop::trace::{check_trace_frame_independence, Trace};

#[derive(Debug, Parser)]
#[command(name = "vine-teleop", version, about = "Vine robot teleoperation simulator")]
pub struct Cli {
    #[command(flatten)]
    pub config: ConfigArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a live session for one WebSocket operator.
    Serve {
        /// Record ingested samples to this trace file.
        #[arg(long, env = "VINE_RECORD")]
        record: Option<PathBuf>,
    },
    /// Replay a trace headlessly and print the session report as JSON.
    Replay {
        trace: PathBuf,
        /// Write every state update as JSON lines to this file.
        #[arg(long)]
        state_log: Option<PathBuf>,
    },
    /// Check that a trace decimates to identical frames under random
    /// rotations and translations of the capture frame.
    Verify {
        trace: PathBuf,
        #[arg(long, default_value_t = 100)]
        transforms: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

/// Session settings. Precedence: flag, then environment, then config file,
/// then built-in default.
#[derive(Debug, Default, Args)]
pub struct ConfigArgs {
    /// TOML session config file.
    #[arg(long, global = true, env = "VINE_CONFIG")]
    pub config: Option<PathBuf>,
    #[arg(long, global = true, env = "VINE_INPUT_RATE")]
    pub input_rate: Option<f64>,
    #[arg(long, global = true, env = "VINE_COMMAND_RATE")]
    pub command_rate: Option<f64>,
    #[arg(long, global = true, env = "VINE_PERCEPTION_RATE")]
    pub perception_rate: Option<f64>,
    #[arg(long, global = true, env = "VINE_PHYSICS_STEP")]
    pub physics_step: Option<f64>,
    /// Scenario JSON file.
    #[arg(long, global = true, env = "VINE_SCENARIO")]
    pub scenario: Option<PathBuf>,
    #[arg(long, global = true, env = "VINE_GOAL_HEIGHT")]
    pub goal_height: Option<usize>,
    #[arg(long, global = true, env = "VINE_LISTEN")]
    pub listen: Option<String>,
    #[arg(long, global = true, env = "VINE_BACKBONE_SAMPLES")]
    pub backbone_samples: Option<usize>,
    #[arg(long, global = true, env = "VINE_NOISE_SIGMA_POS")]
    pub noise_sigma_pos: Option<f64>,
    #[arg(long, global = true, env = "VINE_NOISE_LATENCY")]
    pub noise_latency: Option<f64>,
    #[arg(long, global = true, env = "VINE_NOISE_SEED")]
    pub noise_seed: Option<u64>,
    #[arg(long, global = true, env = "VINE_GUIDANCE_GRASP_RADIUS")]
    pub guidance_grasp_radius: Option<f64>,
    #[arg(long, global = true, env = "VINE_GUIDANCE_PLACE_RADIUS")]
    pub guidance_place_radius: Option<f64>,
    #[arg(long, global = true, env = "VINE_GUIDANCE_APPROACH_CLEARANCE")]
    pub guidance_approach_clearance: Option<f64>,
    #[arg(long, global = true, env = "VINE_GUIDANCE_GRASP_HEIGHT")]
    pub guidance_grasp_height: Option<f64>,
    #[arg(long, global = true, env = "VINE_GUIDANCE_CUE_DEADZONE")]
    pub guidance_cue_deadzone: Option<f64>,
    #[arg(long, global = true, env = "VINE_GUIDANCE_INFLUENCE_MARGIN")]
    pub guidance_influence_margin: Option<f64>,
    #[arg(long, global = true, env = "VINE_GUIDANCE_K_REP")]
    pub guidance_k_rep: Option<f64>,
    #[arg(long, global = true, env = "VINE_GESTURE_DEADBAND")]
    pub gesture_deadband: Option<f64>,
    #[arg(long, global = true, env = "VINE_GESTURE_SATURATION")]
    pub gesture_saturation: Option<f64>,
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

impl ConfigArgs {
    /// Config file (if any) with overrides applied. Not yet validated.
    pub fn resolve(&self) -> Result<SessionConfig> {
        let mut c = match &self.config {
            Some(path) => SessionConfig::load(path)
                .with_context(|| format!("loading config {}", path.display()))?,
            None => SessionConfig::default(),
        };
        set(&mut c.input_rate, self.input_rate);
        set(&mut c.command_rate, self.command_rate);
        set(&mut c.perception_rate, self.perception_rate);
        if self.physics_step.is_some() {
            c.physics_step = self.physics_step;
        }
        if self.scenario.is_some() {
            c.scenario = self.scenario.clone();
        }
        set(&mut c.goal_height, self.goal_height);
        set(&mut c.listen, self.listen.clone());
        set(&mut c.backbone_samples, self.backbone_samples);
        set(&mut c.noise.sigma_pos, self.noise_sigma_pos);
        set(&mut c.noise.latency, self.noise_latency);
        set(&mut c.noise.seed, self.noise_seed);
        let g = &mut c.guidance;
        set(&mut g.grasp_radius, self.guidance_grasp_radius);
        set(&mut g.place_radius, self.guidance_place_radius);
        set(&mut g.approach_clearance, self.guidance_approach_clearance);
        set(&mut g.grasp_height, self.guidance_grasp_height);
        set(&mut g.cue_deadzone, self.guidance_cue_deadzone);
        set(&mut g.influence_margin, self.guidance_influence_margin);
        set(&mut g.k_rep, self.guidance_k_rep);
        set(&mut c.gesture.deadband, self.gesture_deadband);
        set(&mut c.gesture.saturation, self.gesture_saturation);
        Ok(c)
    }
}

fn emit(line: &str) -> Result<()> {
    let mut out = std::io::stdout().lock();
    writeln!(out, "{line}")?;
    out.flush()?;
    Ok(())
}

/// Runs the parsed command. Returns the process exit code.
pub fn run(cli: Cli) -> Result<i32> {
    let mut cfg = cli.config.resolve()?;
    match cli.command {
        Command::Serve { record } => {
            cfg.mode = Mode::Live;
            if record.is_some() {
                cfg.record = record;
            }
            cfg.validate()?;
            let listener = crate::bind(&cfg)?;
            let report = crate::serve(&cfg, listener)?;
            emit(&report.to_json())?;
            Ok(0)
        }
        Command::Replay { trace, state_log } => {
            cfg.mode = Mode::Replay;
            cfg.validate()?;
            let tr = Trace::load(&trace).with_context(|| format!("loading {}", trace.display()))?;
            let scenario = cfg.load_scenario()?;
            let report = match state_log {
                None => run_replay(&cfg, &tr, &scenario)?,
                Some(path) => {
                    let mut session = Session::new(&cfg, scenario.build()?)?.with_state_log();
                    let report = vine_teleop::session::replay_into(&mut session, &tr)?;
                    let mut out = String::new();
                    for s in session.state_log().unwrap_or_default() {
                        out.push_str(&ServerMessage::State(s.clone()).to_json());
                        out.push('\n');
                    }
                    std::fs::write(&path, out)
                        .with_context(|| format!("writing {}", path.display()))?;
                    report
                }
            };
            emit(&report.to_json())?;
            Ok(0)
        }
        Command::Verify { trace, transforms, seed } => {
            if transforms == 0 {
                bail!("--transforms must be at least 1");
            }
            cfg.validate()?;
            let tr = Trace::load(&trace).with_context(|| format!("loading {}", trace.display()))?;
            let tfs = VerticalTransform::random(transforms, seed);
            let ok = check_trace_frame_independence(&tr, &cfg.gesture_config(), &tfs)?;
            let failed = ok.iter().filter(|b| !**b).count();
            info!("checked {} transforms", ok.len());
            if failed == 0 {
                emit(&format!("ok: {} transforms, frames identical", ok.len()))?;
                Ok(0)
            } else {
                emit(&format!("FAILED: {failed} of {} transforms changed the frames", ok.len()))?;
                Ok(1)
            }
        }
    }
}
