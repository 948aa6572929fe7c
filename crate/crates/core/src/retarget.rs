//! Joint-space leader → follower mapping.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kinematics::{ArmModel, JointVector, JOINT_COUNT};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RetargetConfigError {
    #[error("joint {joint}: sign must be +1 or -1, got {sign}")]
    Sign { joint: usize, sign: f64 },
    #[error("smoothing_alpha must lie in (0, 1], got {0}")]
    Alpha(f64),
    #[error("retarget parameter {0} is not finite")]
    NonFinite(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RetargetConfig {
    pub signs: [f64; JOINT_COUNT],
    pub offsets: [f64; JOINT_COUNT],
    pub gripper_gain: f64,
    pub gripper_bias: f64,
    /// 1.0 disables smoothing.
    pub smoothing_alpha: f64,
}

impl Default for RetargetConfig {
    fn default() -> Self {
        Self::identity()
    }
}

impl RetargetConfig {
    pub const fn identity() -> Self {
        Self {
            signs: [1.0; JOINT_COUNT],
            offsets: [0.0; JOINT_COUNT],
            gripper_gain: 1.0,
            gripper_bias: 0.0,
            smoothing_alpha: 1.0,
        }
    }

    pub fn validate(&self) -> Result<(), RetargetConfigError> {
        for (joint, &sign) in self.signs.iter().enumerate() {
            if sign != 1.0 && sign != -1.0 {
                return Err(RetargetConfigError::Sign { joint, sign });
            }
        }
        if !self.offsets.iter().all(|o| o.is_finite()) {
            return Err(RetargetConfigError::NonFinite("offsets"));
        }
        if !self.gripper_gain.is_finite() || !self.gripper_bias.is_finite() {
            return Err(RetargetConfigError::NonFinite("gripper_map"));
        }
        if !(self.smoothing_alpha > 0.0 && self.smoothing_alpha <= 1.0) {
            return Err(RetargetConfigError::Alpha(self.smoothing_alpha));
        }
        Ok(())
    }

    /// Affine map before smoothing and clamping.
    pub fn raw(&self, leader: &JointVector) -> JointVector {
        JointVector {
            angles: std::array::from_fn(|i| self.signs[i] * leader.angles[i] + self.offsets[i]),
            gripper: self.gripper_gain * leader.gripper + self.gripper_bias,
        }
    }
}

/// Retargeted command together with the joints whose raw value hit a follower limit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Retargeted {
    pub command: JointVector,
    pub limits_hit: [bool; JOINT_COUNT],
}

/// Map a leader state onto a follower command.
///
/// Smoothing against `prev_cmd` is applied per component before clamping, so
/// the result always lies inside the follower limits.
pub fn retarget(
    cfg: &RetargetConfig,
    follower: &ArmModel,
    leader: &JointVector,
    prev_cmd: Option<&JointVector>,
) -> Retargeted {
    let raw = cfg.raw(leader);
    let smoothed = match prev_cmd {
        Some(prev) if cfg.smoothing_alpha < 1.0 => {
            let a = cfg.smoothing_alpha;
            JointVector {
                angles: std::array::from_fn(|i| a * raw.angles[i] + (1.0 - a) * prev.angles[i]),
                gripper: a * raw.gripper + (1.0 - a) * prev.gripper,
            }
        }
        _ => raw,
    };
    Retargeted {
        command: follower.clamp_to_limits(&smoothed),
        limits_hit: follower.limit_violations(&smoothed),
    }
}

/// Per-joint `cmd − state` and the largest absolute entry.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackingError {
    pub per_joint: [f64; JOINT_COUNT],
    pub max_abs: f64,
}

pub fn tracking_error(cmd: &JointVector, state: &JointVector) -> TrackingError {
    let per_joint: [f64; JOINT_COUNT] = std::array::from_fn(|i| cmd.angles[i] - state.angles[i]);
    let max_abs = per_joint.iter().fold(0.0_f64, |m, e| m.max(e.abs()));
    TrackingError { per_joint, max_abs }
}
