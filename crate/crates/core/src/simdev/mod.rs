//! Simulated hardware: follower arms, leader devices and cameras.

mod camera;
mod follower;
mod leader;
mod scenario;

pub use camera::{decode_test_pattern, test_pattern, CameraConfig, CameraSim};
pub use follower::{follower_step, FollowerSim, FollowerSimConfig, FollowerSimError, FollowerStep};
pub use leader::{
    LeaderDevice, LeaderScript, LeaderSource, ScriptBuilder, ScriptError, UiSetpoints, Waypoint,
};
pub use scenario::{episode_script, still_episode, EpisodePlan, GRIPPER_RAMP};
