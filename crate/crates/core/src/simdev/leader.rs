//! Leader devices: scripted waypoints, externally driven setpoints, or a
//! replayed message log.

use std::path::Path;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bus::{topics, ArmState, BusMessage, Payload, Publisher, Topic};
use crate::clock::nanos_to_secs;
use crate::kinematics::{JointVector, JOINT_COUNT};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Waypoint {
    /// Seconds from script start.
    pub t: f64,
    pub angles: [f64; JOINT_COUNT],
    pub gripper: f64,
}

impl Waypoint {
    pub fn new(t: f64, q: &JointVector) -> Self {
        Self {
            t,
            angles: q.angles,
            gripper: q.gripper,
        }
    }

    pub fn joints(&self) -> JointVector {
        JointVector::new(self.angles, self.gripper)
    }
}

#[derive(Debug, Error)]
pub enum ScriptError {
    #[error("{arm} arm has no waypoints")]
    Empty { arm: &'static str },
    #[error("{arm} arm waypoint {index}: time {t} is not after the previous waypoint")]
    NotIncreasing { arm: &'static str, index: usize, t: f64 },
    #[error("{arm} arm waypoint {index} has a non-finite value")]
    NonFinite { arm: &'static str, index: usize },
    #[error("cannot read script: {0}")]
    Io(#[from] std::io::Error),
    #[error("cannot parse script: {0}")]
    Parse(#[from] serde_json::Error),
}

/// Per-arm waypoints, linearly interpolated. JSON form:
///
/// ```json
/// { "loop": false,
///   "left":  [ { "t": 0.0, "angles": [0,0,0,0,0,0,0], "gripper": 1.0 }, ... ],
///   "right": [ ... ] }
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LeaderScript {
    #[serde(default, rename = "loop")]
    pub looping: bool,
    pub left: Vec<Waypoint>,
    pub right: Vec<Waypoint>,
}

fn sample_arm(wps: &[Waypoint], t: f64) -> JointVector {
    let first = &wps[0];
    let last = &wps[wps.len() - 1];
    if t <= first.t {
        return first.joints();
    }
    if t >= last.t {
        return last.joints();
    }
    let i = wps.partition_point(|w| w.t <= t) - 1;
    let (a, b) = (&wps[i], &wps[i + 1]);
    let u = (t - a.t) / (b.t - a.t);
    let lerp = |x: f64, y: f64| x + (y - x) * u;
    JointVector::new(
        std::array::from_fn(|j| lerp(a.angles[j], b.angles[j])),
        lerp(a.gripper, b.gripper),
    )
}

impl LeaderScript {
    pub fn validate(&self) -> Result<(), ScriptError> {
        for (arm, wps) in [("left", &self.left), ("right", &self.right)] {
            if wps.is_empty() {
                return Err(ScriptError::Empty { arm });
            }
            for (index, w) in wps.iter().enumerate() {
                if !w.t.is_finite() || !w.joints().is_finite() {
                    return Err(ScriptError::NonFinite { arm, index });
                }
                if index > 0 && !(w.t > wps[index - 1].t) {
                    return Err(ScriptError::NotIncreasing { arm, index, t: w.t });
                }
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, ScriptError> {
        let s: LeaderScript = serde_json::from_str(text)?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self, ScriptError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("script serializes")
    }

    /// Time of the last waypoint on either arm.
    pub fn duration(&self) -> f64 {
        let end = |w: &[Waypoint]| w.last().map_or(0.0, |w| w.t);
        end(&self.left).max(end(&self.right))
    }

    /// Both arms at `t` seconds. Looping scripts wrap at [`duration`](Self::duration).
    pub fn sample(&self, t: f64) -> [JointVector; 2] {
        let period = self.duration();
        let t = if self.looping && period > 0.0 && t > period {
            t.rem_euclid(period)
        } else {
            t
        };
        [sample_arm(&self.left, t), sample_arm(&self.right, t)]
    }
}

/// Incremental script authoring with a shared time cursor for both arms.
#[derive(Debug, Clone)]
pub struct ScriptBuilder {
    t: f64,
    pose: [JointVector; 2],
    script: LeaderScript,
}

impl ScriptBuilder {
    pub fn new(start: [JointVector; 2]) -> Self {
        Self {
            t: 0.0,
            pose: start,
            script: LeaderScript {
                looping: false,
                left: vec![Waypoint::new(0.0, &start[0])],
                right: vec![Waypoint::new(0.0, &start[1])],
            },
        }
    }

    pub fn now(&self) -> f64 {
        self.t
    }

    pub fn pose(&self) -> [JointVector; 2] {
        self.pose
    }

    /// Move linearly to `pose` over `secs`.
    pub fn move_to(mut self, pose: [JointVector; 2], secs: f64) -> Self {
        assert!(secs > 0.0, "segment duration must be positive");
        self.t += secs;
        self.pose = pose;
        self.script.left.push(Waypoint::new(self.t, &pose[0]));
        self.script.right.push(Waypoint::new(self.t, &pose[1]));
        self
    }

    pub fn hold(self, secs: f64) -> Self {
        let pose = self.pose;
        self.move_to(pose, secs)
    }

    /// Ramp both grippers to `aperture` over `secs`, keeping joint angles.
    pub fn grippers(self, aperture: f64, secs: f64) -> Self {
        let mut pose = self.pose;
        pose[0].gripper = aperture;
        pose[1].gripper = aperture;
        self.move_to(pose, secs)
    }

    pub fn looping(mut self, on: bool) -> Self {
        self.script.looping = on;
        self
    }

    pub fn build(self) -> LeaderScript {
        self.script
    }
}

/// Setpoints injected from outside (the browser console). `None` means no
/// driver is attached and the leader publishes nothing.
#[derive(Debug, Clone, Default)]
pub struct UiSetpoints {
    inner: Arc<Mutex<Option<[JointVector; 2]>>>,
}

impl UiSetpoints {
    pub fn new() -> Self {
        Self::default()
    }

    /// Start publishing from `initial` if no driver was attached.
    pub fn attach(&self, initial: [JointVector; 2]) {
        let mut g = self.inner.lock().unwrap();
        if g.is_none() {
            *g = Some(initial);
        }
    }

    pub fn detach(&self) {
        *self.inner.lock().unwrap() = None;
    }

    /// Set one arm (0 = left, 1 = right). Ignored while detached.
    pub fn set(&self, arm: usize, q: JointVector) -> bool {
        match self.inner.lock().unwrap().as_mut() {
            Some(s) if arm < 2 => {
                s[arm] = q;
                true
            }
            _ => false,
        }
    }

    pub fn get(&self) -> Option<[JointVector; 2]> {
        *self.inner.lock().unwrap()
    }
}

pub enum LeaderSource {
    /// Script time 0 maps to stamp `start_ns`.
    Script { script: LeaderScript, start_ns: u64 },
    Ui(UiSetpoints),
    /// Messages replayed at their recorded stamps.
    Log { messages: Vec<BusMessage>, next: usize },
}

impl LeaderSource {
    pub fn log(mut messages: Vec<BusMessage>) -> Self {
        messages.retain(|m| m.topic.as_str() == topics::LEADER_JOINT_STATES);
        messages.sort_by_key(|m| m.stamp);
        LeaderSource::Log { messages, next: 0 }
    }

    /// Stamp after which the source produces nothing new, if finite.
    pub fn end_ns(&self) -> Option<u64> {
        match self {
            LeaderSource::Script { script, start_ns } if !script.looping => {
                Some(start_ns + crate::clock::secs_to_nanos(script.duration()))
            }
            LeaderSource::Log { messages, .. } => Some(messages.last().map_or(0, |m| m.stamp)),
            _ => None,
        }
    }
}

/// Publishes leader joint states for both arms.
pub struct LeaderDevice {
    source: LeaderSource,
    publisher: Publisher,
    topic: Topic,
}

impl LeaderDevice {
    pub fn new(source: LeaderSource, publisher: Publisher) -> Self {
        Self {
            source,
            publisher,
            topic: Topic::new(topics::LEADER_JOINT_STATES).unwrap(),
        }
    }

    pub fn source(&self) -> &LeaderSource {
        &self.source
    }

    /// Publish the sample(s) due at `now`.
    pub fn tick(&mut self, now: u64) {
        match &mut self.source {
            LeaderSource::Script { script, start_ns } => {
                let t = nanos_to_secs(now.saturating_sub(*start_ns));
                let q = script.sample(t);
                let payload = Payload::JointState(q.iter().map(ArmState::at_rest).collect());
                self.publisher.publish_at(&self.topic, now, payload);
            }
            LeaderSource::Ui(setpoints) => {
                if let Some(q) = setpoints.get() {
                    let payload = Payload::JointState(q.iter().map(ArmState::at_rest).collect());
                    self.publisher.publish_at(&self.topic, now, payload);
                }
            }
            LeaderSource::Log { messages, next } => {
                while let Some(m) = messages.get(*next).filter(|m| m.stamp <= now) {
                    self.publisher.publish_at(&self.topic, m.stamp, m.payload.clone());
                    *next += 1;
                }
            }
        }
    }
}
