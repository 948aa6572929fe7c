//! Data-quality checks on recorded episodes.

use std::fmt;

use crate::kinematics::{ArmModel, JOINT_COUNT};
use crate::safety::FeedbackCause;

use super::{Episode, EpisodeStatus, RECORD_PERIOD_NS, RECORD_RATE_HZ};

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    /// `t` is not on the 50 Hz grid or skips a grid point.
    GridViolation { index: usize, t: f64 },
    /// `t` does not increase.
    NonMonotonic { index: usize },
    /// Observed joint (index 7 is the gripper) outside the follower model limits.
    LimitViolation { index: usize, arm: usize, joint: usize },
    /// Record references a frame the episode does not hold.
    DanglingFrame { index: usize, camera_id: u8, frame_index: u64 },
    /// Frame stamped after the record that uses it.
    FutureFrame { index: usize, camera_id: u8 },
    /// Frame references do not match the manifest camera count.
    CameraCount { index: usize, found: usize },
    NonFiniteAction { index: usize, arm: usize },
    NonFiniteObservation { index: usize, arm: usize },
    UnknownFeedbackCause { index: usize, code: u8 },
    /// `gated` disagrees with the recorded feedback cause.
    GatedFlagMismatch { index: usize },
    /// Record count does not match the recorded span at 50 Hz (±1).
    RecordCount { expected: u64, actual: u64 },
}

impl Violation {
    /// Stable class name used in reports.
    pub fn class(&self) -> &'static str {
        match self {
            Violation::GridViolation { .. } => "GridViolation",
            Violation::NonMonotonic { .. } => "NonMonotonic",
            Violation::LimitViolation { .. } => "LimitViolation",
            Violation::DanglingFrame { .. } => "DanglingFrame",
            Violation::FutureFrame { .. } => "FutureFrame",
            Violation::CameraCount { .. } => "CameraCount",
            Violation::NonFiniteAction { .. } => "NonFiniteAction",
            Violation::NonFiniteObservation { .. } => "NonFiniteObservation",
            Violation::UnknownFeedbackCause { .. } => "UnknownFeedbackCause",
            Violation::GatedFlagMismatch { .. } => "GatedFlagMismatch",
            Violation::RecordCount { .. } => "RecordCount",
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: ", self.class())?;
        match self {
            Violation::GridViolation { index, t } => write!(f, "record {index} has t = {t}"),
            Violation::NonMonotonic { index } => write!(f, "record {index} does not advance t"),
            Violation::LimitViolation { index, arm, joint } => {
                write!(f, "record {index} arm {arm} joint {joint} outside limits")
            }
            Violation::DanglingFrame {
                index,
                camera_id,
                frame_index,
            } => write!(f, "record {index} references missing frame {camera_id}/{frame_index}"),
            Violation::FutureFrame { index, camera_id } => {
                write!(f, "record {index} uses a later frame from camera {camera_id}")
            }
            Violation::CameraCount { index, found } => {
                write!(f, "record {index} has {found} frame references")
            }
            Violation::NonFiniteAction { index, arm } => {
                write!(f, "record {index} arm {arm} action is not finite")
            }
            Violation::NonFiniteObservation { index, arm } => {
                write!(f, "record {index} arm {arm} observation is not finite")
            }
            Violation::UnknownFeedbackCause { index, code } => {
                write!(f, "record {index} has feedback cause {code}")
            }
            Violation::GatedFlagMismatch { index } => {
                write!(f, "record {index} gated flag disagrees with its cause")
            }
            Violation::RecordCount { expected, actual } => {
                write!(f, "{actual} records, expected {expected} ± 1")
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn classes(&self) -> Vec<&'static str> {
        let mut c: Vec<_> = self.violations.iter().map(Violation::class).collect();
        c.dedup();
        c
    }
}

/// Check grid, ordering, limits, frame references and finiteness. Observations
/// are checked against `models` (left, right).
pub fn validate_episode(episode: &Episode, models: &[ArmModel; 2]) -> ValidationReport {
    let mut v = Vec::new();
    let cams = episode.manifest.camera_count as usize;
    let mut prev_k: Option<u64> = None;
    let mut prev_t: Option<f64> = None;

    for (index, r) in episode.records.iter().enumerate() {
        if prev_t.is_some_and(|p| !(r.t > p)) {
            v.push(Violation::NonMonotonic { index });
        }
        let k = (r.t * RECORD_RATE_HZ as f64).round();
        let on_grid = r.t.is_finite() && r.t >= 0.0 && k / RECORD_RATE_HZ as f64 == r.t;
        let contiguous = prev_k.is_none_or(|p| k as u64 == p + 1);
        if !on_grid || !contiguous {
            v.push(Violation::GridViolation { index, t: r.t });
        }
        prev_k = on_grid.then_some(k as u64);
        prev_t = Some(r.t);

        for (arm, (obs, model)) in r.obs.iter().zip(models).enumerate() {
            let finite = obs
                .position
                .iter()
                .chain(&obs.velocity)
                .chain(&obs.effort)
                .chain(std::iter::once(&obs.gripper))
                .all(|x| x.is_finite());
            if !finite {
                v.push(Violation::NonFiniteObservation { index, arm });
                continue;
            }
            for j in 0..JOINT_COUNT {
                let (lo, hi) = model.joint_limits[j];
                if !(lo..=hi).contains(&obs.position[j]) {
                    v.push(Violation::LimitViolation { index, arm, joint: j });
                }
            }
            let (lo, hi) = model.gripper_limits;
            if !(lo..=hi).contains(&obs.gripper) {
                v.push(Violation::LimitViolation {
                    index,
                    arm,
                    joint: JOINT_COUNT,
                });
            }
        }
        for (arm, a) in r.action.iter().enumerate() {
            if !a.is_finite() {
                v.push(Violation::NonFiniteAction { index, arm });
            }
        }

        if r.frames.len() != cams {
            v.push(Violation::CameraCount {
                index,
                found: r.frames.len(),
            });
        }
        let stamp = on_grid.then(|| episode.record_stamp(r));
        for f in &r.frames {
            if !episode.frames.contains_key(&(f.camera_id, f.frame_index)) {
                v.push(Violation::DanglingFrame {
                    index,
                    camera_id: f.camera_id,
                    frame_index: f.frame_index,
                });
            }
            if stamp.is_some_and(|s| f.frame_stamp > s) {
                v.push(Violation::FutureFrame {
                    index,
                    camera_id: f.camera_id,
                });
            }
        }

        match FeedbackCause::from_code(r.feedback_cause) {
            None => v.push(Violation::UnknownFeedbackCause {
                index,
                code: r.feedback_cause,
            }),
            Some(c) if r.gated != (c == FeedbackCause::Collision) => {
                v.push(Violation::GatedFlagMismatch { index })
            }
            Some(_) => {}
        }
    }

    let m = &episode.manifest;
    if let (EpisodeStatus::Complete, Some(start)) = (m.status, m.record_start_ns) {
        let expected = m.end_stamp_ns.saturating_sub(start) / RECORD_PERIOD_NS;
        let actual = episode.records.len() as u64;
        if actual.abs_diff(expected) > 1 {
            v.push(Violation::RecordCount { expected, actual });
        }
    }

    ValidationReport { violations: v }
}
