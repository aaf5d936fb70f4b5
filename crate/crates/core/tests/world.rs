use proptest::prelude::*;
use vine_teleop::gesture::CommandFrame;
use vine_teleop::world::{BlockState, BlockSpec, Scenario, World};

/// Robot hanging straight over block 1 with its grasp point on the block
/// center; the tower base is elsewhere.
fn over_block() -> Scenario {
    let mut s = Scenario::default_scenario();
    s.robot.initial_length = s.robot.base[2] - s.block_half_extent - s.world.grasp_offset;
    s.tower_base = [0.3, -0.1];
    s.blocks = vec![
        BlockSpec { id: 1, p: [0.0, 0.0] },
        BlockSpec { id: 2, p: [0.3, -0.1] },
        BlockSpec { id: 3, p: [-0.2, 0.2] },
    ];
    s.danger_zones.clear();
    s
}

fn command() -> impl Strategy<Value = CommandFrame> {
    (-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64, prop::bool::weighted(0.8)).prop_map(
        |(grow, lr, ud, closed)| CommandFrame {
            grow_axis: grow,
            lr_axis: lr,
            ud_axis: ud,
            grip: if closed { 1.0 } else { 0.0 },
            ..Default::default()
        },
    )
}

fn grasp_block_one(w: &mut World) {
    let close = CommandFrame { grip: 1.0, ..Default::default() };
    for _ in 0..6 {
        w.step(&close, 0.1).unwrap();
    }
    assert_eq!(w.grasped_block(), Some(1));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn random_sessions_keep_world_invariants(cmds in prop::collection::vec(command(), 1..120)) {
        let mut w = over_block().build().unwrap();
        let ids: Vec<u32> = w.blocks.iter().map(|b| b.id).collect();
        for c in &cmds {
            w.step(c, 0.1).unwrap();
            prop_assert_eq!(w.blocks.iter().map(|b| b.id).collect::<Vec<_>>(), ids.clone());
            prop_assert!(w.check_invariants().is_ok(), "{:?}", w.check_invariants());
            let grasped = w.blocks.iter().filter(|b| b.state == BlockState::Grasped).count();
            prop_assert!(grasped <= 1);
            prop_assert!((0.0..=1.0).contains(&w.robot.gripper_aperture));
            prop_assert!(w.robot.total_length() <= w.robot.max_length() + 1e-12);
        }
    }

    #[test]
    fn grasped_block_moves_with_the_tip(cmds in prop::collection::vec(command(), 1..60)) {
        let mut w = over_block().build().unwrap();
        grasp_block_one(&mut w);
        let offset = |w: &World| {
            let (tip, b) = (w.tip_pose(), w.block(1).unwrap().pose);
            (b.position - tip.position, tip.orientation.inverse() * b.orientation)
        };
        let (p0, r0) = offset(&w);
        for c in cmds.iter().map(|c| CommandFrame { grip: 1.0, ..*c }) {
            w.step(&c, 0.1).unwrap();
            let (p, r) = offset(&w);
            prop_assert!((p - p0).norm() < 1e-12);
            prop_assert!(r.angle_to(&r0) < 1e-9);
        }
    }

    #[test]
    fn released_blocks_rest_on_sound_support(cmds in prop::collection::vec(command(), 1..40)) {
        let mut w = over_block().build().unwrap();
        grasp_block_one(&mut w);
        for c in cmds.iter().map(|c| CommandFrame { grip: 1.0, ..*c }) {
            w.step(&c, 0.1).unwrap();
        }
        let open = CommandFrame::default();
        for _ in 0..6 {
            w.step(&open, 0.1).unwrap();
        }
        prop_assert_eq!(w.grasped_block(), None);
        prop_assert!(w.check_invariants().is_ok(), "{:?}", w.check_invariants());
    }
}

#[test]
fn closed_gripper_does_not_pick_up_bumped_blocks() {
    let mut s = over_block();
    s.robot.initial_length -= 0.3;
    let mut w = s.build().unwrap();
    let close = CommandFrame { grip: 1.0, ..Default::default() };
    for _ in 0..6 {
        w.step(&close, 0.1).unwrap();
    }
    assert_eq!(w.grasped_block(), None);
    // grow down onto the block with the gripper already shut
    let down = CommandFrame { grow_axis: 1.0, grip: 1.0, ..Default::default() };
    for _ in 0..30 {
        w.step(&down, 0.1).unwrap();
    }
    assert_eq!(w.grasped_block(), None);
}

#[test]
fn scenario_json_round_trips() {
    let s = Scenario::default_scenario();
    let text = serde_json::to_string_pretty(&s).unwrap();
    assert_eq!(Scenario::parse(&text).unwrap(), s);
    assert!(Scenario::parse(r#"{"robot":{"base":[0,0,1]},"tower_base":[0,0],"blocks":[],"x":1}"#)
        .is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn blocks_never_teleport(cmds in prop::collection::vec(command(), 1..80)) {
        let mut w = over_block().build().unwrap();
        grasp_block_one(&mut w);
        for c in &cmds {
            let tip = w.tip_pose().position;
            let before: Vec<_> = w.blocks.iter().map(|b| (b.id, b.state, b.center())).collect();
            w.step(c, 0.1).unwrap();
            let tip_move = (w.tip_pose().position - tip).norm();
            for (id, state, was) in before {
                let b = w.block(id).unwrap();
                let moved = (b.center() - was).norm();
                match (state, b.state) {
                    (BlockState::Grasped, BlockState::Grasped) => {
                        prop_assert!(moved <= tip_move + 1e-9, "block {id} moved {moved}, tip {tip_move}")
                    }
                    (BlockState::Grasped, _) => {
                        prop_assert!((b.center().xy() - was.xy()).norm() <= tip_move + 1e-9);
                        prop_assert!(b.center().z <= was.z + tip_move + 1e-9);
                    }
                    _ => prop_assert_eq!(moved, 0.0),
                }
            }
        }
    }
}

#[test]
fn documented_scenario_example_loads() {
    let doc = include_str!("../../../SCENARIO.md");
    let start = doc.find("```json").unwrap() + "```json".len();
    let end = start + doc[start..].find("```").unwrap();
    let scenario = vine_teleop::Scenario::parse(&doc[start..end]).unwrap();
    let world = scenario.build().unwrap();
    assert_eq!(world.blocks.len(), 1);
    assert_eq!(world.danger_zones.len(), 1);
}
