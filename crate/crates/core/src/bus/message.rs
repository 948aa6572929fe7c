use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kinematics::{JointVector, JOINT_COUNT};
use crate::safety::FeedbackSignal;
use crate::session::SessionEvent;

pub const MAX_TOPIC_LEN: usize = 255;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TopicError {
    #[error("topic is empty")]
    Empty,
    #[error("topic {0:?} contains whitespace")]
    Whitespace(String),
    #[error("topic is {0} bytes, limit is 255")]
    TooLong(usize),
}

/// Validated topic name such as `/leader/joint_states`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Topic(String);

impl Topic {
    pub fn new(name: impl Into<String>) -> Result<Self, TopicError> {
        let name = name.into();
        if name.is_empty() {
            return Err(TopicError::Empty);
        }
        if name.chars().any(char::is_whitespace) {
            return Err(TopicError::Whitespace(name));
        }
        if name.len() > MAX_TOPIC_LEN {
            return Err(TopicError::TooLong(name.len()));
        }
        Ok(Topic(name))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn camera(camera_id: u8) -> Topic {
        Topic(format!("/camera/{camera_id}/frame"))
    }

    /// Same topic under the `/replay` namespace.
    pub fn replay(&self) -> Topic {
        Topic(format!("/replay{}", self.0))
    }
}

impl TryFrom<String> for Topic {
    type Error = TopicError;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        Topic::new(s)
    }
}

impl From<Topic> for String {
    fn from(t: Topic) -> Self {
        t.0
    }
}

impl fmt::Display for Topic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Well-known topic names.
pub mod topics {
    pub const LEADER_JOINT_STATES: &str = "/leader/joint_states";
    pub const FOLLOWER_JOINT_STATES: &str = "/follower/joint_states";
    pub const FOLLOWER_JOINT_COMMANDS: &str = "/follower/joint_commands";
    pub const TELEOP_FEEDBACK: &str = "/teleop/feedback";
    pub const SESSION_EVENTS: &str = "/session/events";
}

/// Measured state of one arm.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ArmState {
    pub position: [f64; JOINT_COUNT],
    pub velocity: [f64; JOINT_COUNT],
    pub effort: [f64; JOINT_COUNT],
    pub gripper: f64,
}

impl ArmState {
    pub fn at_rest(q: &JointVector) -> Self {
        Self {
            position: q.angles,
            velocity: [0.0; JOINT_COUNT],
            effort: [0.0; JOINT_COUNT],
            gripper: q.gripper,
        }
    }

    pub fn joints(&self) -> JointVector {
        JointVector::new(self.position, self.gripper)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CameraFrame {
    pub camera_id: u8,
    pub frame_index: u64,
    pub width: u16,
    pub height: u16,
    /// Row-major RGB8, `width * height * 3` bytes.
    pub pixels: Arc<[u8]>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    JointState(Vec<ArmState>),
    JointCommand(Vec<JointVector>),
    Feedback(FeedbackSignal),
    CameraFrame(CameraFrame),
    SessionEvent(SessionEvent),
}

impl Payload {
    /// Wire tag of the payload kind.
    pub fn tag(&self) -> u8 {
        match self {
            Payload::JointState(_) => 1,
            Payload::JointCommand(_) => 2,
            Payload::Feedback(_) => 3,
            Payload::CameraFrame(_) => 4,
            Payload::SessionEvent(_) => 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BusMessage {
    pub topic: Topic,
    /// Monotonic nanoseconds.
    pub stamp: u64,
    /// Per-publisher, per-topic counter.
    pub seq: u64,
    pub payload: Payload,
}
