//! Ground-truth world: the robot, the blocks it manipulates and the regions
//! the operator should keep the tip away from.
//!
//! Stacking is quasi-static. A released block drops straight down onto the
//! highest support whose center lies within `support_overlap` of its own,
//! or onto the floor. There is no friction, toppling or robot-body contact.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{UnitQuaternion, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gesture::CommandFrame;
use crate::kinematics::{KinematicsError, Pose, RobotConfig, RobotState, Segment, Steering};

const CONTACT_EPS: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum WorldError {
    #[error("non-finite command frame")]
    NonFiniteCommand,
    #[error("time step must be positive, got {0}")]
    InvalidTimestep(f64),
    #[error("duplicate block id {0}")]
    DuplicateBlockId(u32),
    #[error("invalid scenario: {0}")]
    Scenario(String),
    #[error(transparent)]
    Kinematics(#[from] KinematicsError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Support {
    Floor,
    Block(u32),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum BlockState {
    Free,
    Grasped,
    Stacked(Support),
}

impl BlockState {
    /// Wire label: `free`, `grasped`, `stacked:floor` or `stacked:<id>`.
    pub fn label(&self) -> String {
        match self {
            BlockState::Free => "free".into(),
            BlockState::Grasped => "grasped".into(),
            BlockState::Stacked(Support::Floor) => "stacked:floor".into(),
            BlockState::Stacked(Support::Block(id)) => format!("stacked:{id}"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub id: u32,
    pub pose: Pose,
    pub half_extent: f64,
    pub state: BlockState,
}

impl Block {
    pub fn center(&self) -> Vector3<f64> {
        self.pose.position
    }

    pub fn bottom(&self) -> f64 {
        self.pose.position.z - self.half_extent
    }

    pub fn top(&self) -> f64 {
        self.pose.position.z + self.half_extent
    }

    fn xy(&self) -> Vector2<f64> {
        self.pose.position.xy()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DangerZone {
    pub center: Vector3<f64>,
    pub radius: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldConfig {
    /// Growth speed at full grow axis (m/s).
    pub grow_rate: f64,
    /// Gripper aperture slew rate (1/s).
    pub aperture_rate: f64,
    pub grasp_close_threshold: f64,
    pub release_threshold: f64,
    /// Max distance from the grasp point to a block center for a grasp (m).
    pub grasp_radius: f64,
    /// Grasp point offset along the tip axis (m).
    pub grasp_offset: f64,
    /// Max horizontal center distance for one block to rest on another (m).
    pub support_overlap: f64,
    /// Max horizontal distance from the tower base for a floor block to
    /// count as the tower's foundation (m).
    pub tower_tolerance: f64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            grow_rate: 0.10,
            aperture_rate: 2.0,
            grasp_close_threshold: 0.2,
            release_threshold: 0.8,
            grasp_radius: 0.04,
            grasp_offset: 0.02,
            support_overlap: 0.03,
            tower_tolerance: 0.03,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
struct Grasp {
    block: u32,
    /// Block center minus tip position, fixed in the world frame.
    offset: Vector3<f64>,
    /// Block orientation relative to the tip orientation.
    rotation: UnitQuaternion<f64>,
}

impl Grasp {
    fn new(block: u32, tip: &Pose, held: &Pose) -> Self {
        Self {
            block,
            offset: held.position - tip.position,
            rotation: tip.orientation.inverse() * held.orientation,
        }
    }

    /// The held block translates with the tip and turns with it.
    fn pose(&self, tip: &Pose) -> Pose {
        Pose::new(tip.position + self.offset, tip.orientation * self.rotation)
    }
}

/// Something that happened during a world step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum WorldEvent {
    Grasped { block: u32 },
    Released { block: u32, state: BlockState },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct World {
    pub robot: RobotState,
    pub blocks: Vec<Block>,
    pub danger_zones: Vec<DangerZone>,
    pub tower_base: Vector2<f64>,
    pub floor_z: f64,
    pub time: f64,
    pub config: WorldConfig,
    grasp: Option<Grasp>,
    /// Set while the aperture is at or above the close threshold; a grasp
    /// attempt consumes it, so a closed gripper cannot pick up blocks it
    /// bumps into.
    grasp_armed: bool,
}

impl World {
    pub fn new(
        robot: RobotState,
        blocks: Vec<Block>,
        danger_zones: Vec<DangerZone>,
        tower_base: Vector2<f64>,
        floor_z: f64,
        config: WorldConfig,
    ) -> Result<Self, WorldError> {
        let mut seen = std::collections::BTreeSet::new();
        for b in &blocks {
            if !seen.insert(b.id) {
                return Err(WorldError::DuplicateBlockId(b.id));
            }
            if b.state == BlockState::Grasped {
                return Err(WorldError::Scenario(format!(
                    "block {} cannot start grasped",
                    b.id
                )));
            }
        }
        for z in &danger_zones {
            if !(z.radius.is_finite() && z.radius > 0.0) {
                return Err(WorldError::Scenario(format!(
                    "danger zone radius must be positive, got {}",
                    z.radius
                )));
            }
        }
        let grasp_armed = robot.gripper_aperture >= config.grasp_close_threshold;
        Ok(Self {
            robot,
            blocks,
            danger_zones,
            tower_base,
            floor_z,
            time: 0.0,
            config,
            grasp: None,
            grasp_armed,
        })
    }

    pub fn block(&self, id: u32) -> Option<&Block> {
        self.blocks.iter().find(|b| b.id == id)
    }

    pub fn grasped_block(&self) -> Option<u32> {
        self.grasp.map(|g| g.block)
    }

    pub fn tip_pose(&self) -> Pose {
        self.robot.tip_pose()
    }

    /// Point between the gripper fingers, `grasp_offset` past the tip.
    pub fn grasp_point(&self) -> Vector3<f64> {
        let tip = self.tip_pose();
        tip.position + tip.z_axis() * self.config.grasp_offset
    }

    /// Forces the aperture and re-arms the grasp latch if it is open enough.
    pub fn set_gripper_aperture(&mut self, aperture: f64) {
        self.robot.gripper_aperture = aperture.clamp(0.0, 1.0);
        if self.robot.gripper_aperture >= self.config.grasp_close_threshold {
            self.grasp_armed = true;
        }
    }

    /// One 10 Hz control step: command, then grasp or release.
    pub fn step(&mut self, cmd: &CommandFrame, dt: f64) -> Result<Vec<WorldEvent>, WorldError> {
        self.apply_command(cmd, dt)?;
        let mut events = Vec::new();
        if self.grasp.is_some() {
            events.extend(self.release());
        } else {
            events.extend(self.try_grasp());
        }
        Ok(events)
    }

    /// Sub-steps in fixed order: retract/grow, steer, gripper, attachment.
    pub fn apply_command(&mut self, cmd: &CommandFrame, dt: f64) -> Result<(), WorldError> {
        if !cmd.is_finite() {
            return Err(WorldError::NonFiniteCommand);
        }
        if !(dt.is_finite() && dt > 0.0) {
            return Err(WorldError::InvalidTimestep(dt));
        }
        let grow = cmd.grow_axis.clamp(-1.0, 1.0) * self.config.grow_rate * dt;
        if grow > 0.0 {
            self.robot.grow(grow)?;
        } else if grow < 0.0 {
            self.robot.retract(-grow)?;
        }
        self.robot.steer(
            cmd.lr_axis.clamp(-1.0, 1.0),
            cmd.ud_axis.clamp(-1.0, 1.0),
            dt,
        )?;

        let target = 1.0 - cmd.grip.clamp(0.0, 1.0);
        let max_step = self.config.aperture_rate * dt;
        let current = self.robot.gripper_aperture;
        let next = current + (target - current).clamp(-max_step, max_step);
        self.robot.gripper_aperture = next;
        if next >= self.config.grasp_close_threshold {
            self.grasp_armed = true;
        }

        self.update_attachment();
        self.time += dt;
        Ok(())
    }

    fn update_attachment(&mut self) {
        if let Some(g) = self.grasp {
            let pose = g.pose(&self.tip_pose());
            if let Some(b) = self.blocks.iter_mut().find(|b| b.id == g.block) {
                b.pose = pose;
            }
        }
    }

    /// Grasps the nearest eligible block if the gripper just closed past the
    /// threshold with a block center within `grasp_radius` of the grasp point.
    pub fn try_grasp(&mut self) -> Option<WorldEvent> {
        if self.grasp.is_some()
            || !self.grasp_armed
            || self.robot.gripper_aperture >= self.config.grasp_close_threshold
        {
            return None;
        }
        self.grasp_armed = false;
        let point = self.grasp_point();
        let supporting: Vec<u32> = self
            .blocks
            .iter()
            .filter_map(|b| match b.state {
                BlockState::Stacked(Support::Block(id)) => Some(id),
                _ => None,
            })
            .collect();
        let best = self
            .blocks
            .iter()
            .filter(|b| b.state != BlockState::Grasped && !supporting.contains(&b.id))
            .map(|b| ((b.center() - point).norm(), b.id))
            .filter(|(d, _)| *d <= self.config.grasp_radius)
            .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))?;
        let id = best.1;
        let tip = self.tip_pose();
        let block = self.blocks.iter_mut().find(|b| b.id == id)?;
        block.state = BlockState::Grasped;
        self.grasp = Some(Grasp::new(id, &tip, &block.pose));
        Some(WorldEvent::Grasped { block: id })
    }

    /// Drops the grasped block once the gripper opens past the release
    /// threshold.
    pub fn release(&mut self) -> Option<WorldEvent> {
        let g = self.grasp?;
        if self.robot.gripper_aperture <= self.config.release_threshold {
            return None;
        }
        self.grasp = None;
        let (xy, bottom, half) = {
            let b = self.block(g.block)?;
            (b.xy(), b.bottom(), b.half_extent)
        };
        let support = self
            .blocks
            .iter()
            .filter(|o| o.id != g.block && o.state != BlockState::Grasped)
            .filter(|o| (o.xy() - xy).norm() < self.config.support_overlap)
            .filter(|o| o.top() <= bottom + CONTACT_EPS)
            .max_by(|a, b| a.top().total_cmp(&b.top()).then(b.id.cmp(&a.id)))
            .map(|o| (o.id, o.top()));
        let (z, state) = match support {
            Some((id, top)) => (top + half, BlockState::Stacked(Support::Block(id))),
            None => {
                let state = if (xy - self.tower_base).norm() < self.config.tower_tolerance {
                    BlockState::Stacked(Support::Floor)
                } else {
                    BlockState::Free
                };
                (self.floor_z + half, state)
            }
        };
        let block = self.blocks.iter_mut().find(|b| b.id == g.block)?;
        block.pose = Pose::new(Vector3::new(xy.x, xy.y, z), UnitQuaternion::identity());
        block.state = state;
        self.grasp_armed = true;
        Some(WorldEvent::Released {
            block: g.block,
            state,
        })
    }

    pub fn tower_height(&self) -> usize {
        tower_height(
            self.blocks.iter().map(|b| (b.id, b.state, b.xy())),
            self.tower_base,
            self.config.tower_tolerance,
        )
    }

    /// Recomputes the world invariants from scratch.
    pub fn check_invariants(&self) -> Result<(), String> {
        let mut ids = std::collections::BTreeSet::new();
        for b in &self.blocks {
            if !ids.insert(b.id) {
                return Err(format!("duplicate id {}", b.id));
            }
        }
        let grasped: Vec<u32> = self
            .blocks
            .iter()
            .filter(|b| b.state == BlockState::Grasped)
            .map(|b| b.id)
            .collect();
        if grasped.len() > 1 || grasped.first().copied() != self.grasped_block() {
            return Err(format!(
                "grasp record {:?} disagrees with block states {grasped:?}",
                self.grasped_block()
            ));
        }
        for b in &self.blocks {
            match b.state {
                BlockState::Grasped => {}
                BlockState::Free | BlockState::Stacked(Support::Floor) => {
                    if (b.bottom() - self.floor_z).abs() > CONTACT_EPS {
                        return Err(format!("block {} is not resting on the floor", b.id));
                    }
                }
                BlockState::Stacked(Support::Block(s)) => {
                    let Some(sup) = self.block(s) else {
                        return Err(format!("block {} rests on missing block {s}", b.id));
                    };
                    if sup.state == BlockState::Grasped {
                        return Err(format!("block {} rests on a grasped block", b.id));
                    }
                    if (sup.xy() - b.xy()).norm() >= self.config.support_overlap {
                        return Err(format!("block {} overhangs its support", b.id));
                    }
                    if (b.bottom() - sup.top()).abs() > CONTACT_EPS {
                        return Err(format!("block {} is not touching its support", b.id));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Length of the longest support chain rooted at a floor block within
/// `tolerance` of `tower_base`.
pub fn tower_height(
    blocks: impl IntoIterator<Item = (u32, BlockState, Vector2<f64>)>,
    tower_base: Vector2<f64>,
    tolerance: f64,
) -> usize {
    tower_levels(blocks, tower_base, tolerance)
        .values()
        .copied()
        .max()
        .unwrap_or(0)
}

/// Tower level (1 = foundation) of every block that belongs to the tower.
pub fn tower_levels(
    blocks: impl IntoIterator<Item = (u32, BlockState, Vector2<f64>)>,
    tower_base: Vector2<f64>,
    tolerance: f64,
) -> BTreeMap<u32, usize> {
    let blocks: BTreeMap<u32, (BlockState, Vector2<f64>)> =
        blocks.into_iter().map(|(id, s, xy)| (id, (s, xy))).collect();
    let mut levels = BTreeMap::new();
    for &id in blocks.keys() {
        let mut chain = Vec::new();
        let mut cur = id;
        let level = loop {
            if let Some(&l) = levels.get(&cur) {
                break Some(l);
            }
            if chain.contains(&cur) || chain.len() > blocks.len() {
                break None;
            }
            chain.push(cur);
            match blocks.get(&cur) {
                Some((BlockState::Stacked(Support::Floor), xy))
                    if (xy - tower_base).norm() < tolerance =>
                {
                    break Some(0);
                }
                Some((BlockState::Stacked(Support::Block(s)), _)) => cur = *s,
                _ => break None,
            }
        };
        if let Some(base_level) = level {
            for (i, b) in chain.iter().rev().enumerate() {
                levels.insert(*b, base_level + i + 1);
            }
        }
    }
    levels
}

/// Initial-world description loaded from JSON.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub robot: RobotSpec,
    #[serde(default)]
    pub floor_z: f64,
    pub tower_base: [f64; 2],
    #[serde(default = "default_half_extent")]
    pub block_half_extent: f64,
    pub blocks: Vec<BlockSpec>,
    #[serde(default)]
    pub danger_zones: Vec<DangerZone>,
    #[serde(default)]
    pub world: WorldConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RobotSpec {
    /// Ceiling anchor in world coordinates (m).
    pub base: [f64; 3],
    /// Straight body deployed at the start (m).
    #[serde(default)]
    pub initial_length: f64,
    #[serde(default)]
    pub config: RobotConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockSpec {
    pub id: u32,
    /// Floor position of the block center (m).
    pub p: [f64; 2],
}

fn default_half_extent() -> f64 {
    0.025
}

const DEFAULT_SCENARIO: &str = include_str!("../data/default_scenario.json");

impl Scenario {
    pub fn default_scenario() -> Self {
        Self::parse(DEFAULT_SCENARIO).expect("bundled scenario is valid")
    }

    pub fn parse(text: &str) -> Result<Self, WorldError> {
        serde_json::from_str(text).map_err(|e| {
            WorldError::Scenario(format!("line {}, column {}: {e}", e.line(), e.column()))
        })
    }

    pub fn load(path: &Path) -> Result<Self, WorldError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| WorldError::Scenario(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn build(&self) -> Result<World, WorldError> {
        let base = Pose::ceiling_mount(Vector3::from(self.robot.base));
        let mut robot = RobotState::new(base, self.robot.config);
        if self.robot.initial_length > 0.0 {
            robot = RobotState::with_segments(
                base,
                self.robot.config,
                vec![Segment::straight(self.robot.initial_length)?],
                Steering::default(),
            )?;
        } else {
            self.robot.config.validate()?;
        }
        let half = self.block_half_extent;
        if !(half.is_finite() && half > 0.0) {
            return Err(WorldError::Scenario(format!(
                "block_half_extent must be positive, got {half}"
            )));
        }
        let tower_base = Vector2::from(self.tower_base);
        let blocks = self
            .blocks
            .iter()
            .map(|spec| {
                let xy = Vector2::from(spec.p);
                let state = if (xy - tower_base).norm() < self.world.tower_tolerance {
                    BlockState::Stacked(Support::Floor)
                } else {
                    BlockState::Free
                };
                Block {
                    id: spec.id,
                    pose: Pose::from_translation(Vector3::new(xy.x, xy.y, self.floor_z + half)),
                    half_extent: half,
                    state,
                }
            })
            .collect();
        World::new(
            robot,
            blocks,
            self.danger_zones.clone(),
            tower_base,
            self.floor_z,
            self.world,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    /// Straight robot hanging from (0,0,1) with its tip at (0,0,0.2), so the
    /// grasp point sits at (0,0,0.18).
    fn world_with(blocks: Vec<Block>) -> World {
        let base = Pose::ceiling_mount(Vector3::new(0.0, 0.0, 1.0));
        let robot = RobotState::with_segments(
            base,
            RobotConfig::default(),
            vec![Segment::straight(0.8).unwrap()],
            Steering::default(),
        )
        .unwrap();
        World::new(robot, blocks, vec![], Vector2::zeros(), 0.0, WorldConfig::default()).unwrap()
    }

    fn block_at(id: u32, p: Vector3<f64>, state: BlockState) -> Block {
        Block {
            id,
            pose: Pose::from_translation(p),
            half_extent: 0.025,
            state,
        }
    }

    fn frame(grow: f64, lr: f64, ud: f64, grip: f64) -> CommandFrame {
        CommandFrame {
            seq: 0,
            t: 0.0,
            grow_axis: grow,
            lr_axis: lr,
            ud_axis: ud,
            grip,
        }
    }

    #[test]
    fn zero_command_only_advances_time() {
        let mut w = world_with(vec![]);
        let before = w.clone();
        w.step(&frame(0.0, 0.0, 0.0, 0.0), 0.1).unwrap();
        assert_relative_eq!(w.time, 0.1);
        w.time = before.time;
        assert_eq!(w, before);
    }

    #[test]
    fn full_grow_adds_one_centimeter() {
        let mut w = world_with(vec![]);
        let len = w.robot.total_length();
        w.apply_command(&frame(1.0, 0.0, 0.0, 0.0), 0.1).unwrap();
        assert_relative_eq!(w.robot.total_length() - len, 0.01, epsilon = 1e-12);
        w.apply_command(&frame(-0.5, 0.0, 0.0, 0.0), 0.1).unwrap();
        assert_relative_eq!(w.robot.total_length() - len, 0.005, epsilon = 1e-12);
    }

    #[test]
    fn rejects_bad_commands() {
        let mut w = world_with(vec![]);
        assert!(matches!(
            w.apply_command(&frame(f64::NAN, 0.0, 0.0, 0.0), 0.1),
            Err(WorldError::NonFiniteCommand)
        ));
        assert!(matches!(
            w.apply_command(&frame(0.0, 0.0, 0.0, 0.0), 0.0),
            Err(WorldError::InvalidTimestep(_))
        ));
    }

    #[test]
    fn gripper_slews_at_rate() {
        let mut w = world_with(vec![]);
        w.apply_command(&frame(0.0, 0.0, 0.0, 1.0), 0.1).unwrap();
        assert_relative_eq!(w.robot.gripper_aperture, 0.8);
        for _ in 0..10 {
            w.apply_command(&frame(0.0, 0.0, 0.0, 1.0), 0.1).unwrap();
        }
        assert_eq!(w.robot.gripper_aperture, 0.0);
    }

    #[test]
    fn grasp_nearest_within_radius() {
        let gp = Vector3::new(0.0, 0.0, 0.18);
        let mut w = world_with(vec![
            block_at(1, gp + Vector3::new(0.03, 0.0, 0.0), BlockState::Free),
            block_at(2, gp + Vector3::new(0.0, 0.035, 0.0), BlockState::Free),
        ]);
        assert_relative_eq!(w.grasp_point(), gp, epsilon = 1e-12);
        w.set_gripper_aperture(0.1);
        assert_eq!(w.try_grasp(), Some(WorldEvent::Grasped { block: 1 }));
        assert_eq!(w.block(1).unwrap().state, BlockState::Grasped);
    }

    #[test]
    fn no_grasp_outside_radius() {
        let gp = Vector3::new(0.0, 0.0, 0.18);
        let mut w = world_with(vec![block_at(1, gp + Vector3::new(0.05, 0.0, 0.0), BlockState::Free)]);
        w.set_gripper_aperture(0.1);
        assert_eq!(w.try_grasp(), None);
        assert_eq!(w.block(1).unwrap().state, BlockState::Free);
    }

    #[test]
    fn grasp_tie_goes_to_lower_id() {
        let gp = Vector3::new(0.0, 0.0, 0.18);
        let mut w = world_with(vec![
            block_at(7, gp + Vector3::new(-0.03, 0.0, 0.0), BlockState::Free),
            block_at(4, gp + Vector3::new(0.03, 0.0, 0.0), BlockState::Free),
        ]);
        w.set_gripper_aperture(0.1);
        assert_eq!(w.try_grasp(), Some(WorldEvent::Grasped { block: 4 }));
    }

    #[test]
    fn closed_gripper_does_not_pick_up_later() {
        let gp = Vector3::new(0.0, 0.0, 0.18);
        let mut w = world_with(vec![block_at(1, gp + Vector3::new(0.0, 0.0, 0.1), BlockState::Free)]);
        w.set_gripper_aperture(0.1);
        assert_eq!(w.try_grasp(), None);
        // grow down onto the block with the gripper still closed
        for _ in 0..10 {
            w.step(&frame(-1.0, 0.0, 0.0, 1.0), 0.1).unwrap();
        }
        assert_eq!(w.grasped_block(), None);
    }

    #[test]
    fn grasped_block_follows_tip() {
        let gp = Vector3::new(0.0, 0.0, 0.18);
        let mut w = world_with(vec![block_at(1, gp + Vector3::new(0.01, 0.0, 0.0), BlockState::Free)]);
        w.set_gripper_aperture(0.1);
        w.try_grasp().unwrap();
        let tip0 = w.tip_pose().position;
        let b0 = w.block(1).unwrap().center();
        w.step(&frame(1.0, 0.0, 0.0, 1.0), 0.1).unwrap();
        let dtip = w.tip_pose().position - tip0;
        let dblock = w.block(1).unwrap().center() - b0;
        assert_relative_eq!(dtip, dblock, epsilon = 1e-12);
        assert_relative_eq!(dtip.norm(), 0.01, epsilon = 1e-12);
    }

    fn holding(block_pos: Vector3<f64>, others: Vec<Block>) -> World {
        let mut blocks = vec![block_at(1, block_pos, BlockState::Free)];
        blocks.extend(others);
        let mut w = world_with(blocks);
        // move the block under the grasp point, then grasp it
        let gp = w.grasp_point();
        w.blocks[0].pose.position = gp;
        w.set_gripper_aperture(0.1);
        w.try_grasp().unwrap();
        w.blocks[0].pose.position = block_pos;
        w.grasp = Some(Grasp::new(1, &w.tip_pose(), &w.blocks[0].pose));
        w
    }

    #[test]
    fn release_over_empty_floor_is_free() {
        let mut w = holding(Vector3::new(1.0, 1.0, 0.5), vec![]);
        w.set_gripper_aperture(0.9);
        let ev = w.release().unwrap();
        assert_eq!(ev, WorldEvent::Released { block: 1, state: BlockState::Free });
        assert_relative_eq!(w.block(1).unwrap().bottom(), 0.0, epsilon = 1e-12);
        w.check_invariants().unwrap();
    }

    #[test]
    fn release_at_tower_base_founds_tower() {
        let mut w = holding(Vector3::new(0.01, 0.0, 0.3), vec![]);
        w.set_gripper_aperture(0.9);
        w.release().unwrap();
        assert_eq!(w.block(1).unwrap().state, BlockState::Stacked(Support::Floor));
        assert_eq!(w.tower_height(), 1);
    }

    #[test]
    fn release_onto_block_stacks() {
        let below = block_at(2, Vector3::new(0.5, 0.5, 0.025), BlockState::Free);
        let mut w = holding(Vector3::new(0.51, 0.5, 0.05 + 0.025 + 0.1), vec![below]);
        w.set_gripper_aperture(0.9);
        w.release().unwrap();
        let b = w.block(1).unwrap();
        assert_eq!(b.state, BlockState::Stacked(Support::Block(2)));
        assert!((b.bottom() - 0.05).abs() < 1e-6);
        w.check_invariants().unwrap();
    }

    #[test]
    fn release_misses_offset_block() {
        let below = block_at(2, Vector3::new(0.5, 0.5, 0.025), BlockState::Free);
        let mut w = holding(Vector3::new(0.55, 0.5, 0.2), vec![below]);
        w.set_gripper_aperture(0.9);
        w.release().unwrap();
        let b = w.block(1).unwrap();
        assert_eq!(b.state, BlockState::Free);
        assert_relative_eq!(b.bottom(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn release_waits_for_threshold() {
        let mut w = holding(Vector3::new(1.0, 1.0, 0.5), vec![]);
        w.set_gripper_aperture(0.7);
        assert_eq!(w.release(), None);
        assert_eq!(w.grasped_block(), Some(1));
    }

    #[test]
    fn tower_height_examples() {
        let z = Vector2::zeros();
        assert_eq!(tower_height(vec![], z, 0.03), 0);
        let tower = vec![
            (1, BlockState::Stacked(Support::Floor), z),
            (2, BlockState::Stacked(Support::Block(1)), z),
            (3, BlockState::Stacked(Support::Block(2)), z),
        ];
        assert_eq!(tower_height(tower, z, 0.03), 3);
        let one = vec![
            (1, BlockState::Stacked(Support::Floor), z),
            (2, BlockState::Free, Vector2::new(1.0, 0.0)),
            (3, BlockState::Free, Vector2::new(0.0, 1.0)),
        ];
        assert_eq!(tower_height(one, z, 0.03), 1);
        // a stack that is not on the tower base does not count
        let elsewhere = vec![
            (1, BlockState::Free, Vector2::new(1.0, 0.0)),
            (2, BlockState::Stacked(Support::Block(1)), Vector2::new(1.0, 0.0)),
        ];
        assert_eq!(tower_height(elsewhere, z, 0.03), 0);
    }

    #[test]
    fn cannot_grasp_a_supporting_block() {
        let gp = Vector3::new(0.0, 0.0, 0.18);
        let mut w = world_with(vec![
            block_at(1, gp - Vector3::new(0.0, 0.0, 0.02), BlockState::Free),
            block_at(2, gp + Vector3::new(0.0, 0.0, 0.03), BlockState::Stacked(Support::Block(1))),
        ]);
        w.set_gripper_aperture(0.1);
        assert_eq!(w.try_grasp(), Some(WorldEvent::Grasped { block: 2 }));
    }

    #[test]
    fn default_scenario_builds() {
        let w = Scenario::default_scenario().build().unwrap();
        assert_eq!(w.blocks.len(), 3);
        assert_eq!(w.tower_height(), 0);
        w.check_invariants().unwrap();
        assert!(w.robot.total_length() > 0.0);
    }

    #[test]
    fn scenario_errors() {
        assert!(matches!(Scenario::parse("{"), Err(WorldError::Scenario(_))));
        let dup = r#"{"robot":{"base":[0,0,1]},"tower_base":[0,0],
            "blocks":[{"id":1,"p":[0.2,0]},{"id":1,"p":[0.3,0]}]}"#;
        let s = Scenario::parse(dup).unwrap();
        assert!(matches!(s.build(), Err(WorldError::DuplicateBlockId(1))));
    }
}
