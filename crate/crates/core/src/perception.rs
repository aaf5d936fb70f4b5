//! Simulated scene tracker.
//!
//! Stands in for the RGB-D reconstruction pipeline: each snapshot reports the
//! tip and block positions from a retained history of ground-truth frames,
//! delayed by a fixed latency and perturbed with seeded Gaussian noise.

use std::collections::VecDeque;

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::world::{BlockState, DangerZone, World};

const TIME_EPS: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PerceptionError {
    #[error("perception rate must be positive and finite, got {0}")]
    InvalidRate(f64),
    #[error("invalid noise config: {0}")]
    InvalidNoise(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    /// Per-axis position noise standard deviation (m).
    pub sigma_pos: f64,
    /// Observation delay (s).
    pub latency: f64,
    pub seed: u64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            sigma_pos: 0.0,
            latency: 0.0,
            seed: 0,
        }
    }
}

impl NoiseConfig {
    pub fn validate(&self) -> Result<(), PerceptionError> {
        if !(self.sigma_pos.is_finite() && self.sigma_pos >= 0.0) {
            return Err(PerceptionError::InvalidNoise(format!(
                "sigma_pos must be >= 0, got {}",
                self.sigma_pos
            )));
        }
        if !(self.latency.is_finite() && self.latency >= 0.0) {
            return Err(PerceptionError::InvalidNoise(format!(
                "latency must be >= 0, got {}",
                self.latency
            )));
        }
        Ok(())
    }
}

/// Snapshot period for a perception rate in Hz.
pub fn schedule_rate(rate_hz: f64) -> Result<f64, PerceptionError> {
    if !(rate_hz.is_finite() && rate_hz > 0.0) {
        return Err(PerceptionError::InvalidRate(rate_hz));
    }
    Ok(1.0 / rate_hz)
}

/// Default tracker rate (Hz).
pub const DEFAULT_PERCEPTION_RATE: f64 = 30.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrackedBlock {
    pub id: u32,
    pub position: Vector3<f64>,
    pub state: BlockState,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrackedScene {
    pub t: f64,
    pub tip: Vector3<f64>,
    pub blocks: Vec<TrackedBlock>,
    pub danger_zones: Vec<DangerZone>,
}

impl TrackedScene {
    /// Exact ground truth of `world`, stamped `t`.
    pub fn from_world(world: &World, t: f64) -> Self {
        Self {
            t,
            tip: world.tip_pose().position,
            blocks: world
                .blocks
                .iter()
                .map(|b| TrackedBlock {
                    id: b.id,
                    position: b.center(),
                    state: b.state,
                })
                .collect(),
            danger_zones: world.danger_zones.clone(),
        }
    }

    pub fn block(&self, id: u32) -> Option<&TrackedBlock> {
        self.blocks.iter().find(|b| b.id == id)
    }
}

/// Tracker state for one session: ground-truth history plus the noise
/// generator.
#[derive(Clone, Debug)]
pub struct Perception {
    cfg: NoiseConfig,
    history: VecDeque<TrackedScene>,
    capacity: usize,
    noise: Option<Normal<f64>>,
    rng: ChaCha8Rng,
    last_t: f64,
}

impl Perception {
    /// `world_step` is the interval between ground-truth updates and sizes
    /// the history buffer.
    pub fn new(cfg: NoiseConfig, world_step: f64) -> Result<Self, PerceptionError> {
        cfg.validate()?;
        if !(world_step.is_finite() && world_step > 0.0) {
            return Err(PerceptionError::InvalidRate(world_step));
        }
        let capacity = ((cfg.latency / world_step) - TIME_EPS).ceil().max(0.0) as usize + 1;
        let noise = if cfg.sigma_pos > 0.0 {
            Some(Normal::new(0.0, cfg.sigma_pos).map_err(|e| {
                PerceptionError::InvalidNoise(e.to_string())
            })?)
        } else {
            None
        };
        Ok(Self {
            cfg,
            history: VecDeque::with_capacity(capacity),
            capacity,
            noise,
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            last_t: f64::NEG_INFINITY,
        })
    }

    pub fn config(&self) -> &NoiseConfig {
        &self.cfg
    }

    pub fn history_capacity(&self) -> usize {
        self.capacity
    }

    /// Records the ground truth of `world` as valid from time `t` on.
    pub fn observe(&mut self, world: &World, t: f64) {
        if self.history.len() == self.capacity {
            self.history.pop_front();
        }
        self.history.push_back(TrackedScene::from_world(world, t));
    }

    /// Noisy, delayed estimate at time `t`. Timestamps never run backwards:
    /// a request earlier than the previous snapshot is stamped with the
    /// previous time.
    pub fn snapshot(&mut self, t: f64) -> Option<TrackedScene> {
        let target = t - self.cfg.latency;
        let truth = self
            .history
            .iter()
            .rev()
            .find(|h| h.t <= target + TIME_EPS)
            .or_else(|| self.history.front())?;
        let mut scene = truth.clone();
        self.last_t = self.last_t.max(t);
        scene.t = self.last_t;
        if let Some(noise) = self.noise {
            let rng = &mut self.rng;
            let mut jitter = |p: &mut Vector3<f64>| {
                for v in p.iter_mut() {
                    *v += noise.sample(rng);
                }
            };
            jitter(&mut scene.tip);
            for b in &mut scene.blocks {
                jitter(&mut b.position);
            }
        }
        Some(scene)
    }
}
