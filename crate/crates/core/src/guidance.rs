//! Shared-autonomy guidance: a stacking planner over tracked scenes and a
//! 4-DOF haptic cue (unit translation direction plus a grip open/close
//! suggestion).
//!
//! The robot never moves on its own. The planner only decides what the
//! operator should do next and the cue nudges them toward it, attracting the
//! tip to the current target and repelling it from danger zones with an
//! inverse-distance potential.

use std::fmt;

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::perception::TrackedScene;
use crate::world::{tower_levels, BlockState};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GuidanceConfig {
    /// Tip distance to a block's grasp point that counts as arrived (m).
    pub grasp_radius: f64,
    /// Horizontal tip distance to the placement point that counts as arrived (m).
    pub place_radius: f64,
    /// Height of the placement point above the resting position (m).
    pub approach_clearance: f64,
    /// Height of a block's grasp point above its center (m).
    pub grasp_height: f64,
    /// Attraction vanishes closer than this to the target (m).
    pub cue_deadzone: f64,
    /// Repulsion acts within `radius + influence_margin` of a zone center (m).
    pub influence_margin: f64,
    /// Repulsion gain (m).
    pub k_rep: f64,
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        Self {
            grasp_radius: 0.04,
            place_radius: 0.03,
            approach_clearance: 0.02,
            grasp_height: 0.02,
            cue_deadzone: 0.01,
            influence_margin: 0.15,
            k_rep: 0.02,
        }
    }
}

/// Task facts that do not come from perception.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskContext {
    pub tower_base: Vector2<f64>,
    pub floor_z: f64,
    /// Block edge length (m).
    pub block_side: f64,
    pub goal_height: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    Reach(u32),
    Grasp(u32),
    Transport(u32),
    Place(u32),
    Done,
}

impl Phase {
    pub fn block(&self) -> Option<u32> {
        match *self {
            Phase::Reach(b) | Phase::Grasp(b) | Phase::Transport(b) | Phase::Place(b) => Some(b),
            Phase::Done => None,
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Phase::Reach(b) => write!(f, "reach:{b}"),
            Phase::Grasp(b) => write!(f, "grasp:{b}"),
            Phase::Transport(b) => write!(f, "transport:{b}"),
            Phase::Place(b) => write!(f, "place:{b}"),
            Phase::Done => f.write_str("done"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskPlan {
    /// Blocks not yet in the tower, nearest to the tower base first.
    pub sequence: Vec<u32>,
    pub phase: Phase,
    /// Where the tip should go; `None` once done.
    pub target_point: Option<Vector3<f64>>,
    /// Tower height as observed when the plan was made.
    pub tower_height: usize,
}

/// Point above a block's center that the tip aims for when grasping.
pub fn block_grasp_point(center: &Vector3<f64>, cfg: &GuidanceConfig) -> Vector3<f64> {
    center + Vector3::new(0.0, 0.0, cfg.grasp_height)
}

/// Tip target above the tower for placing the next block.
pub fn placement_point(ctx: &TaskContext, height: usize, cfg: &GuidanceConfig) -> Vector3<f64> {
    Vector3::new(
        ctx.tower_base.x,
        ctx.tower_base.y,
        ctx.floor_z + (height as f64 + 0.5) * ctx.block_side + cfg.approach_clearance,
    )
}

fn horizontal_distance(a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    (a.xy() - b.xy()).norm()
}

/// Advances the stacking plan by at most one phase.
pub fn plan(
    scene: &TrackedScene,
    ctx: &TaskContext,
    cfg: &GuidanceConfig,
    prev: Option<&TaskPlan>,
) -> TaskPlan {
    // Labels come from the tracker, which already applied the tower-base
    // tolerance when it classified floor blocks.
    let levels = tower_levels(
        scene.blocks.iter().map(|b| (b.id, b.state, b.position.xy())),
        ctx.tower_base,
        f64::INFINITY,
    );
    let height = levels.values().copied().max().unwrap_or(0);

    let mut order: Vec<(f64, u32)> = scene
        .blocks
        .iter()
        .filter(|b| !levels.contains_key(&b.id))
        .map(|b| ((b.position.xy() - ctx.tower_base).norm(), b.id))
        .collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let sequence: Vec<u32> = order.into_iter().map(|(_, id)| id).collect();

    let grasped = scene
        .blocks
        .iter()
        .find(|b| b.state == BlockState::Grasped)
        .map(|b| b.id);
    let in_sequence = |id: u32| sequence.contains(&id);
    let next_reach = || sequence.first().map_or(Phase::Done, |&b| Phase::Reach(b));
    let near_block = |id: u32, radius: f64| {
        scene
            .block(id)
            .is_some_and(|b| (scene.tip - block_grasp_point(&b.position, cfg)).norm() < radius)
    };
    let place_point = placement_point(ctx, height, cfg);
    let place_dist = horizontal_distance(&scene.tip, &place_point);

    let phase = if height >= ctx.goal_height || scene.blocks.is_empty() {
        Phase::Done
    } else {
        match prev.map(|p| p.phase) {
            None | Some(Phase::Done) => next_reach(),
            Some(Phase::Reach(b)) => {
                if let Some(g) = grasped {
                    Phase::Grasp(g)
                } else if !in_sequence(b) {
                    next_reach()
                } else if near_block(b, cfg.grasp_radius) {
                    Phase::Grasp(b)
                } else {
                    Phase::Reach(b)
                }
            }
            Some(Phase::Grasp(b)) => {
                if grasped == Some(b) {
                    Phase::Transport(b)
                } else if let Some(g) = grasped {
                    Phase::Grasp(g)
                } else if !in_sequence(b) {
                    next_reach()
                } else if near_block(b, 1.5 * cfg.grasp_radius) {
                    Phase::Grasp(b)
                } else {
                    Phase::Reach(b)
                }
            }
            Some(Phase::Transport(b)) => {
                if grasped != Some(b) {
                    next_reach()
                } else if place_dist < cfg.place_radius {
                    Phase::Place(b)
                } else {
                    Phase::Transport(b)
                }
            }
            Some(Phase::Place(b)) => {
                if grasped != Some(b) {
                    next_reach()
                } else if place_dist >= 1.5 * cfg.place_radius {
                    Phase::Transport(b)
                } else {
                    Phase::Place(b)
                }
            }
        }
    };

    let target_point = match phase {
        Phase::Reach(b) | Phase::Grasp(b) => scene
            .block(b)
            .map(|blk| block_grasp_point(&blk.position, cfg)),
        Phase::Transport(_) | Phase::Place(_) => Some(place_point),
        Phase::Done => None,
    };
    TaskPlan {
        sequence,
        phase,
        target_point,
        tower_height: height,
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GuidanceCue {
    /// Zero or unit length.
    pub direction: Vector3<f64>,
    /// +1 close, -1 open, 0 neutral.
    pub grip_cue: f64,
    /// Set when the tip sat exactly on a danger-zone center and repulsion
    /// was dropped.
    pub fallback: bool,
}

/// Attraction toward the plan target plus inverse-distance repulsion from
/// nearby danger zones. Returns a zero cue once the plan is done.
pub fn compute_cue(scene: &TrackedScene, plan: &TaskPlan, cfg: &GuidanceConfig) -> GuidanceCue {
    let Some(target) = plan.target_point else {
        return GuidanceCue::default();
    };
    let to_target = target - scene.tip;
    let dist = to_target.norm();
    let attraction = if dist < cfg.cue_deadzone {
        Vector3::zeros()
    } else {
        to_target / dist
    };

    let mut repulsion = Vector3::zeros();
    let mut fallback = false;
    for zone in &scene.danger_zones {
        let away = scene.tip - zone.center;
        let d = away.norm();
        let influence = zone.radius + cfg.influence_margin;
        if d >= influence {
            continue;
        }
        if d == 0.0 {
            fallback = true;
            break;
        }
        repulsion += away / d * cfg.k_rep * (1.0 / d - 1.0 / influence);
    }
    let total = if fallback {
        attraction
    } else {
        attraction + repulsion
    };
    let norm = total.norm();
    let direction = if norm < 1e-9 {
        Vector3::zeros()
    } else {
        total / norm
    };

    let grip_cue = match plan.phase {
        Phase::Grasp(_) if dist < cfg.grasp_radius => 1.0,
        Phase::Place(_) if horizontal_distance(&scene.tip, &target) < cfg.place_radius => -1.0,
        _ => 0.0,
    };
    GuidanceCue {
        direction,
        grip_cue,
        fallback,
    }
}

/// Smallest clearance between the tip and any danger-zone surface; negative
/// inside a zone, `+inf` without zones.
pub fn danger_margin(scene: &TrackedScene) -> f64 {
    scene
        .danger_zones
        .iter()
        .map(|z| (scene.tip - z.center).norm() - z.radius)
        .fold(f64::INFINITY, f64::min)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::perception::TrackedBlock;
    use crate::world::{DangerZone, Support};
    use approx::assert_relative_eq;

    fn ctx() -> TaskContext {
        TaskContext {
            tower_base: Vector2::zeros(),
            floor_z: 0.0,
            block_side: 0.05,
            goal_height: 3,
        }
    }

    fn block(id: u32, x: f64, y: f64, state: BlockState) -> TrackedBlock {
        TrackedBlock {
            id,
            position: Vector3::new(x, y, 0.025),
            state,
        }
    }

    fn scene(tip: Vector3<f64>, blocks: Vec<TrackedBlock>, zones: Vec<DangerZone>) -> TrackedScene {
        TrackedScene {
            t: 0.0,
            tip,
            blocks,
            danger_zones: zones,
        }
    }

    fn reach_plan(target: Vector3<f64>) -> TaskPlan {
        TaskPlan {
            sequence: vec![1],
            phase: Phase::Reach(1),
            target_point: Some(target),
            tower_height: 0,
        }
    }

    #[test]
    fn no_blocks_means_done() {
        let s = scene(Vector3::new(0.0, 0.0, 1.0), vec![], vec![]);
        let p = plan(&s, &ctx(), &GuidanceConfig::default(), None);
        assert_eq!(p.phase, Phase::Done);
        assert!(p.sequence.is_empty());
        assert_eq!(p.target_point, None);
    }

    #[test]
    fn nearest_block_first() {
        let s = scene(
            Vector3::new(0.0, 0.0, 1.0),
            vec![
                block(4, 0.5, 0.0, BlockState::Free),
                block(9, 0.0, 0.2, BlockState::Free),
            ],
            vec![],
        );
        let p = plan(&s, &ctx(), &GuidanceConfig::default(), None);
        assert_eq!(p.sequence, vec![9, 4]);
        assert_eq!(p.phase, Phase::Reach(9));
        assert_relative_eq!(p.target_point.unwrap(), Vector3::new(0.0, 0.2, 0.045));
    }

    #[test]
    fn reach_becomes_grasp_near_target() {
        let cfg = GuidanceConfig::default();
        let blocks = vec![block(1, 0.2, 0.0, BlockState::Free)];
        let far = scene(Vector3::new(0.2, 0.0, 0.5), blocks.clone(), vec![]);
        let p0 = plan(&far, &ctx(), &cfg, None);
        let p1 = plan(&far, &ctx(), &cfg, Some(&p0));
        assert_eq!(p1.phase, Phase::Reach(1));
        let near = scene(Vector3::new(0.21, 0.0, 0.05), blocks, vec![]);
        let p2 = plan(&near, &ctx(), &cfg, Some(&p1));
        assert_eq!(p2.phase, Phase::Grasp(1));
    }

    #[test]
    fn full_cycle_without_skips() {
        let cfg = GuidanceConfig::default();
        let c = ctx();
        let tip_at_block = Vector3::new(0.2, 0.0, 0.045);
        let mut p = plan(
            &scene(tip_at_block, vec![block(1, 0.2, 0.0, BlockState::Free)], vec![]),
            &c,
            &cfg,
            None,
        );
        let mut phases = vec![p.phase];
        let step = |s: TrackedScene, p: &mut TaskPlan, phases: &mut Vec<Phase>| {
            *p = plan(&s, &c, &cfg, Some(p));
            phases.push(p.phase);
        };
        let free = vec![block(1, 0.2, 0.0, BlockState::Free)];
        step(scene(tip_at_block, free, vec![]), &mut p, &mut phases);
        let held = |x: f64| vec![TrackedBlock {
            id: 1,
            position: Vector3::new(x, 0.0, 0.3),
            state: BlockState::Grasped,
        }];
        step(scene(tip_at_block, held(0.2), vec![]), &mut p, &mut phases);
        step(scene(Vector3::new(0.01, 0.0, 0.05), held(0.01), vec![]), &mut p, &mut phases);
        let stacked = vec![block(1, 0.0, 0.0, BlockState::Stacked(Support::Floor))];
        step(scene(Vector3::new(0.0, 0.0, 0.05), stacked, vec![]), &mut p, &mut phases);
        assert_eq!(
            phases,
            vec![Phase::Reach(1), Phase::Grasp(1), Phase::Transport(1), Phase::Place(1), Phase::Done]
        );
    }

    #[test]
    fn goal_height_reached_is_done() {
        let mut c = ctx();
        c.goal_height = 2;
        let s = scene(
            Vector3::new(0.0, 0.0, 1.0),
            vec![
                block(1, 0.0, 0.0, BlockState::Stacked(Support::Floor)),
                block(2, 0.0, 0.0, BlockState::Stacked(Support::Block(1))),
                block(3, 0.4, 0.0, BlockState::Free),
            ],
            vec![],
        );
        let p = plan(&s, &c, &GuidanceConfig::default(), None);
        assert_eq!(p.phase, Phase::Done);
        assert_eq!(p.tower_height, 2);
        assert_eq!(p.sequence, vec![3]);
    }

    #[test]
    fn placement_point_over_tower() {
        let p = placement_point(&ctx(), 2, &GuidanceConfig::default());
        assert_relative_eq!(p, Vector3::new(0.0, 0.0, 2.5 * 0.05 + 0.02), epsilon = 1e-15);
    }

    #[test]
    fn attraction_points_at_target() {
        let tip = Vector3::new(0.1, -0.3, 0.9);
        let target = Vector3::new(0.4, 0.2, 0.1);
        let s = scene(tip, vec![], vec![]);
        let cue = compute_cue(&s, &reach_plan(target), &GuidanceConfig::default());
        let expected = (target - tip).normalize();
        assert_relative_eq!(cue.direction, expected, epsilon = 1e-15);
        assert_eq!(cue.grip_cue, 0.0);
    }

    #[test]
    fn at_target_in_grasp_phase() {
        let target = Vector3::new(0.2, 0.0, 0.045);
        let s = scene(target + Vector3::new(0.005, 0.0, 0.0), vec![], vec![]);
        let mut p = reach_plan(target);
        p.phase = Phase::Grasp(1);
        let cue = compute_cue(&s, &p, &GuidanceConfig::default());
        assert_eq!(cue.direction, Vector3::zeros());
        assert_eq!(cue.grip_cue, 1.0);
    }

    #[test]
    fn open_cue_over_tower() {
        let target = Vector3::new(0.0, 0.0, 0.045);
        let s = scene(Vector3::new(0.01, 0.0, 0.1), vec![], vec![]);
        let mut p = reach_plan(target);
        p.phase = Phase::Place(1);
        assert_eq!(compute_cue(&s, &p, &GuidanceConfig::default()).grip_cue, -1.0);
    }

    #[test]
    fn repulsion_pushes_away() {
        let tip = Vector3::new(0.0, 0.0, 0.5);
        let target = Vector3::new(1.0, 0.0, 0.5);
        let zone = DangerZone { center: Vector3::new(0.0, -0.12, 0.5), radius: 0.05 };
        let s = scene(tip, vec![], vec![zone]);
        let cue = compute_cue(&s, &reach_plan(target), &GuidanceConfig::default());
        assert!(cue.direction.y > 0.0);
        assert!(cue.direction.x > 0.0);
        assert_relative_eq!(cue.direction.norm(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn tip_on_zone_center_falls_back() {
        let tip = Vector3::new(0.0, 0.0, 0.5);
        let target = Vector3::new(0.0, 0.0, 0.0);
        let zone = DangerZone { center: tip, radius: 0.05 };
        let s = scene(tip, vec![], vec![zone]);
        let cue = compute_cue(&s, &reach_plan(target), &GuidanceConfig::default());
        assert!(cue.fallback);
        assert_relative_eq!(cue.direction, Vector3::new(0.0, 0.0, -1.0));
    }

    #[test]
    fn done_plan_gives_zero_cue() {
        let s = scene(Vector3::zeros(), vec![], vec![]);
        let p = TaskPlan { sequence: vec![], phase: Phase::Done, target_point: None, tower_height: 3 };
        assert_eq!(compute_cue(&s, &p, &GuidanceConfig::default()), GuidanceCue::default());
    }

    #[test]
    fn margin_examples() {
        let tip = Vector3::new(0.0, 0.0, 0.5);
        assert_eq!(danger_margin(&scene(tip, vec![], vec![])), f64::INFINITY);
        let far = DangerZone { center: tip + Vector3::new(0.3, 0.0, 0.0), radius: 0.1 };
        assert_relative_eq!(danger_margin(&scene(tip, vec![], vec![far])), 0.2, epsilon = 1e-12);
        let inside = DangerZone { center: tip + Vector3::new(0.0, 0.05, 0.0), radius: 0.1 };
        assert_relative_eq!(danger_margin(&scene(tip, vec![], vec![inside, far])), -0.05, epsilon = 1e-12);
    }
}
