//! Zero-order-hold alignment of multi-rate streams onto the record grid.

use std::collections::VecDeque;
use std::sync::Arc;

use crate::bus::{ArmState, CameraFrame};
use crate::kinematics::JointVector;
use crate::safety::{FeedbackCause, FeedbackSignal};

use super::{EpisodeRecord, FrameRef};

/// A joint-state sample older than this at a grid time marks the record stale.
pub const STALE_AFTER_NS: u64 = 100_000_000;

/// Stamp-ordered sample buffer answering "latest sample at or before `t`".
///
/// Samples with equal stamps resolve to the one pushed last.
#[derive(Debug, Clone)]
pub struct ZohStream<T> {
    buf: VecDeque<(u64, T)>,
    rejected: u64,
}

impl<T> Default for ZohStream<T> {
    fn default() -> Self {
        Self {
            buf: VecDeque::new(),
            rejected: 0,
        }
    }
}

impl<T> ZohStream<T> {
    pub fn new() -> Self {
        Self::default()
    }

    /// Append a sample. Samples stamped before the newest held sample are rejected.
    pub fn push(&mut self, stamp: u64, value: T) -> bool {
        if self.buf.back().is_some_and(|(s, _)| *s > stamp) {
            self.rejected += 1;
            return false;
        }
        self.buf.push_back((stamp, value));
        true
    }

    pub fn rejected(&self) -> u64 {
        self.rejected
    }

    pub fn len(&self) -> usize {
        self.buf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buf.is_empty()
    }

    pub fn latest(&self) -> Option<&(u64, T)> {
        self.buf.back()
    }

    /// Latest sample with stamp ≤ `t`.
    pub fn at(&self, t: u64) -> Option<&(u64, T)> {
        let idx = self.buf.partition_point(|(s, _)| *s <= t);
        idx.checked_sub(1).map(|i| &self.buf[i])
    }

    /// Forget samples that can no longer be selected for any time ≥ `t`.
    pub fn prune_before(&mut self, t: u64) {
        let idx = self.buf.partition_point(|(s, _)| *s <= t);
        if idx > 1 {
            self.buf.drain(..idx - 1);
        }
    }

    pub fn clear(&mut self) {
        self.buf.clear();
    }
}

/// Why a grid point produced no record.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SkipReason {
    NoJointState,
    NoCommand,
    NoFrame(u8),
}

/// Latest-value buffers for every stream that feeds a record.
#[derive(Debug, Clone)]
pub struct Synchronizer {
    pub state: ZohStream<[ArmState; 2]>,
    pub command: ZohStream<[JointVector; 2]>,
    pub feedback: ZohStream<FeedbackCause>,
    pub frames: Vec<ZohStream<Arc<CameraFrame>>>,
}

impl Synchronizer {
    pub fn new(camera_count: u8) -> Self {
        Self {
            state: ZohStream::new(),
            command: ZohStream::new(),
            feedback: ZohStream::new(),
            frames: (0..camera_count).map(|_| ZohStream::new()).collect(),
        }
    }

    pub fn push_state(&mut self, stamp: u64, arms: &[ArmState]) -> bool {
        match <[ArmState; 2]>::try_from(arms) {
            Ok(a) => self.state.push(stamp, a),
            Err(_) => false,
        }
    }

    pub fn push_command(&mut self, stamp: u64, arms: &[JointVector]) -> bool {
        match <[JointVector; 2]>::try_from(arms) {
            Ok(a) => self.command.push(stamp, a),
            Err(_) => false,
        }
    }

    pub fn push_feedback(&mut self, stamp: u64, fb: &FeedbackSignal) -> bool {
        self.feedback.push(stamp, fb.cause)
    }

    pub fn push_frame(&mut self, stamp: u64, frame: Arc<CameraFrame>) -> bool {
        match self.frames.get_mut(frame.camera_id as usize) {
            Some(s) => s.push(stamp, frame),
            None => false,
        }
    }

    /// Build the record for grid stamp `grid` at episode time `t`. Missing
    /// feedback defaults to no cause. Returned frames are those referenced.
    pub fn synchronize(
        &self,
        grid: u64,
        t: f64,
    ) -> Result<(EpisodeRecord, Vec<Arc<CameraFrame>>), SkipReason> {
        let &(state_stamp, obs) = self.state.at(grid).ok_or(SkipReason::NoJointState)?;
        let &(_, action) = self.command.at(grid).ok_or(SkipReason::NoCommand)?;
        let cause = self.feedback.at(grid).map(|(_, c)| *c).unwrap_or_default();
        let mut refs = Vec::with_capacity(self.frames.len());
        let mut used = Vec::with_capacity(self.frames.len());
        for (cam, stream) in self.frames.iter().enumerate() {
            let (stamp, frame) = stream.at(grid).ok_or(SkipReason::NoFrame(cam as u8))?;
            refs.push(FrameRef {
                camera_id: frame.camera_id,
                frame_index: frame.frame_index,
                frame_stamp: *stamp,
            });
            used.push(frame.clone());
        }
        let record = EpisodeRecord {
            t,
            obs,
            action,
            frames: refs,
            feedback_cause: cause.code(),
            gated: cause == FeedbackCause::Collision,
            stale: grid - state_stamp > STALE_AFTER_NS,
        };
        Ok((record, used))
    }

    /// Drop samples no longer reachable from grid times ≥ `t`.
    pub fn prune_before(&mut self, t: u64) {
        self.state.prune_before(t);
        self.command.prune_before(t);
        self.feedback.prune_before(t);
        for f in &mut self.frames {
            f.prune_before(t);
        }
    }
}
