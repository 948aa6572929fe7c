//! Leader scripts that perform complete gesture-delimited episodes.

use crate::kinematics::JointVector;
use crate::session::GestureConfig;

use super::{LeaderScript, ScriptBuilder};

/// Gripper open/close ramp duration, seconds.
pub const GRIPPER_RAMP: f64 = 0.1;
/// Extra time a grasp is held beyond the gesture hold duration.
const HOLD_SLACK: f64 = 0.2;
const OPEN: f64 = 1.0;
const CLOSED: f64 = 0.0;

/// One episode: leader motions while following, then a grasp in the end zone.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodePlan {
    /// Leader poses visited in order with the time spent moving to each.
    pub moves: Vec<([JointVector; 2], f64)>,
    /// Pose inside the end zone where the stop gesture is made.
    pub end_pose: [JointVector; 2],
    /// Seconds spent moving from the last work pose to `end_pose`.
    pub end_move: f64,
    /// Nominal time from the end of transit to the episode stop.
    pub follow_secs: f64,
}

fn open(mut pose: [JointVector; 2]) -> [JointVector; 2] {
    pose[0].gripper = OPEN;
    pose[1].gripper = OPEN;
    pose
}

fn hold(b: ScriptBuilder, secs: f64) -> ScriptBuilder {
    if secs > 1e-12 {
        b.hold(secs)
    } else {
        b
    }
}

fn close_grippers(b: ScriptBuilder, gesture: &GestureConfig) -> ScriptBuilder {
    b.grippers(CLOSED, GRIPPER_RAMP)
        .hold(gesture.hold_duration + HOLD_SLACK)
        .grippers(OPEN, GRIPPER_RAMP)
}

/// Offset into a close ramp at which the grasp threshold is crossed.
fn grasp_crossing(gesture: &GestureConfig) -> f64 {
    GRIPPER_RAMP * (OPEN - gesture.grasp_threshold) / (OPEN - CLOSED)
}

/// Build a script that idles at `rest` for `settle` seconds and then runs each
/// plan as its own episode, returning to `rest` in between.
pub fn episode_script(
    rest: [JointVector; 2],
    gesture: &GestureConfig,
    settle: f64,
    plans: &[EpisodePlan],
) -> Result<LeaderScript, String> {
    let rest = open(rest);
    let mut b = hold(ScriptBuilder::new(rest), settle);
    for (n, plan) in plans.iter().enumerate() {
        let grasp_at = b.now() + grasp_crossing(gesture);
        let following_at = grasp_at + gesture.hold_duration + gesture.transit_duration;
        b = close_grippers(b, gesture);
        let pad = following_at - b.now();
        if pad < 0.0 {
            return Err(format!("episode {n}: transit shorter than the grasp gesture"));
        }
        b = hold(b, pad);
        for (pose, secs) in &plan.moves {
            b = b.move_to(open(*pose), *secs);
        }
        b = b.move_to(open(plan.end_pose), plan.end_move);
        let stop_grasp_at = following_at + plan.follow_secs - gesture.hold_duration;
        let pad = stop_grasp_at - grasp_crossing(gesture) - b.now();
        if pad < 0.0 {
            return Err(format!(
                "episode {n}: motions take {:.3} s longer than follow_secs allows",
                -pad
            ));
        }
        b = close_grippers(hold(b, pad), gesture);
        b = b
            .move_to(rest, gesture.transit_duration)
            .hold(1.0);
    }
    Ok(b.build())
}

/// A plain `secs`-long following episode at the rest pose.
pub fn still_episode(end_pose: [JointVector; 2], follow_secs: f64) -> EpisodePlan {
    EpisodePlan {
        moves: Vec::new(),
        end_pose,
        end_move: 1.5,
        follow_secs,
    }
}
