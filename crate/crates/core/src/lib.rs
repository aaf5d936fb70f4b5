//! Teleoperation simulator for a tip-everting vine robot.
//!
//! Hand-tracking samples are mapped to robot commands, the robot and a
//! block-stacking world are simulated quasi-statically, a simulated tracker
//! observes the scene, and a guidance engine turns the task plan into
//! directional cues for the operator.

pub mod batch;
pub mod gesture;
pub mod guidance;
pub mod kinematics;
pub mod perception;
pub mod protocol;
pub mod script;
pub mod session;
pub mod trace;
pub mod world;

pub use nalgebra;
pub use gesture::{CommandFrame, GestureCalibration, GestureConfig, HandSample};
pub use kinematics::{Pose, RobotConfig, RobotState, Segment, Steering};
pub use session::{run_replay, Session, SessionConfig, SessionReport};
pub use trace::Trace;
pub use world::{Scenario, World};
