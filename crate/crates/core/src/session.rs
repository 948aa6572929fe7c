//! Data-collection lifecycle driven by grasp gestures on the leader devices.
//!
//! ```text
//! Idle → Ready → Arming → {Ready, Transit} → Following → Disarming → {Following, Stopping} → Ready
//! ```
//!
//! All timing comes from the `now` stamp handed to [`Session::step`]; the
//! machine never reads a clock, so replaying the same inputs reproduces the
//! same transitions.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::secs_to_nanos;
use crate::kinematics::JointVector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[repr(u8)]
pub enum StateCode {
    Idle = 0,
    Ready = 1,
    Arming = 2,
    Transit = 3,
    Following = 4,
    Disarming = 5,
    Stopping = 6,
}

impl StateCode {
    pub fn from_u8(v: u8) -> Option<Self> {
        Some(match v {
            0 => StateCode::Idle,
            1 => StateCode::Ready,
            2 => StateCode::Arming,
            3 => StateCode::Transit,
            4 => StateCode::Following,
            5 => StateCode::Disarming,
            6 => StateCode::Stopping,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            StateCode::Idle => "Idle",
            StateCode::Ready => "Ready",
            StateCode::Arming => "Arming",
            StateCode::Transit => "Transit",
            StateCode::Following => "Following",
            StateCode::Disarming => "Disarming",
            StateCode::Stopping => "Stopping",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SessionState {
    Idle,
    Ready,
    Arming {
        held_since: u64,
    },
    Transit {
        started: u64,
        progress: f64,
        episode_id: u64,
    },
    Following {
        episode_id: u64,
    },
    Disarming {
        held_since: u64,
        episode_id: u64,
    },
    Stopping {
        started: u64,
        progress: f64,
        episode_id: u64,
    },
}

impl SessionState {
    pub fn code(&self) -> StateCode {
        match self {
            SessionState::Idle => StateCode::Idle,
            SessionState::Ready => StateCode::Ready,
            SessionState::Arming { .. } => StateCode::Arming,
            SessionState::Transit { .. } => StateCode::Transit,
            SessionState::Following { .. } => StateCode::Following,
            SessionState::Disarming { .. } => StateCode::Disarming,
            SessionState::Stopping { .. } => StateCode::Stopping,
        }
    }

    /// Episode being collected, if any. Transit and Stopping belong to their episode.
    pub fn episode_id(&self) -> Option<u64> {
        match *self {
            SessionState::Transit { episode_id, .. }
            | SessionState::Following { episode_id }
            | SessionState::Disarming { episode_id, .. }
            | SessionState::Stopping { episode_id, .. } => Some(episode_id),
            _ => None,
        }
    }

    /// States in which retargeted leader commands reach the followers.
    pub fn is_teleoperating(&self) -> bool {
        matches!(self, SessionState::Following { .. } | SessionState::Disarming { .. })
    }
}

/// Events published on `/session/events`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SessionEvent {
    /// Liveness marker carrying no arguments.
    Heartbeat,
    EpisodeStart { episode_id: u64 },
    EpisodeStop { episode_id: u64 },
    StateChanged { state: StateCode },
}

impl SessionEvent {
    pub fn code(&self) -> u8 {
        match self {
            SessionEvent::Heartbeat => 0,
            SessionEvent::EpisodeStart { .. } => 1,
            SessionEvent::EpisodeStop { .. } => 2,
            SessionEvent::StateChanged { .. } => 3,
        }
    }
}

/// Axis-aligned box in the rig frame, closed on all faces.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Aabb {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Aabb {
    pub fn cube(center: Vector3<f64>, side: f64) -> Self {
        let h = side / 2.0;
        Self {
            min: [center.x - h, center.y - h, center.z - h],
            max: [center.x + h, center.y + h, center.z + h],
        }
    }

    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }

    pub fn is_degenerate(&self) -> bool {
        (0..3).any(|i| !(self.max[i] > self.min[i]))
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GestureConfigError {
    #[error("hold_duration must be positive, got {0}")]
    Hold(f64),
    #[error("transit_duration must be >= 0, got {0}")]
    Transit(f64),
    #[error("end_zone must have positive extent on every axis")]
    DegenerateZone,
    #[error("grasp_threshold must lie in [0, 1], got {0}")]
    Threshold(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GestureConfig {
    /// Normalized aperture at or below which a leader gripper counts as grasped.
    pub grasp_threshold: f64,
    /// Seconds both grippers must stay grasped.
    pub hold_duration: f64,
    /// Region both leader end-effectors must occupy for the stop gesture.
    pub end_zone: Aabb,
    /// Seconds for the follower to move between the ready pose and the leader pose.
    pub transit_duration: f64,
}

impl GestureConfig {
    pub fn validate(&self) -> Result<(), GestureConfigError> {
        if !(self.hold_duration > 0.0 && self.hold_duration.is_finite()) {
            return Err(GestureConfigError::Hold(self.hold_duration));
        }
        if !(self.transit_duration >= 0.0 && self.transit_duration.is_finite()) {
            return Err(GestureConfigError::Transit(self.transit_duration));
        }
        if !(0.0..=1.0).contains(&self.grasp_threshold) {
            return Err(GestureConfigError::Threshold(self.grasp_threshold));
        }
        if self.end_zone.is_degenerate() {
            return Err(GestureConfigError::DegenerateZone);
        }
        Ok(())
    }

    pub fn hold_nanos(&self) -> u64 {
        secs_to_nanos(self.hold_duration)
    }

    pub fn transit_nanos(&self) -> u64 {
        secs_to_nanos(self.transit_duration)
    }
}

pub fn is_grasped(leader: &JointVector, cfg: &GestureConfig) -> bool {
    leader.gripper <= cfg.grasp_threshold
}

/// Minimum-jerk time scaling `6p⁵ − 15p⁴ + 10p³`.
pub fn min_jerk(p: f64) -> f64 {
    let p = p.clamp(0.0, 1.0);
    p * p * p * (10.0 + p * (-15.0 + 6.0 * p))
}

/// Per-joint minimum-jerk blend; progress 0 yields `source`, 1 yields `target`.
pub fn transit_command(
    source: &[JointVector; 2],
    target: &[JointVector; 2],
    progress: f64,
) -> [JointVector; 2] {
    let s = min_jerk(progress);
    let blend = |a: f64, b: f64| (1.0 - s) * a + s * b;
    std::array::from_fn(|arm| JointVector {
        angles: std::array::from_fn(|j| blend(source[arm].angles[j], target[arm].angles[j])),
        gripper: blend(source[arm].gripper, target[arm].gripper),
    })
}

/// Follower configuration held while waiting for a start gesture.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReadyPose {
    pub left: JointVector,
    pub right: JointVector,
}

impl ReadyPose {
    pub fn pair(&self) -> [JointVector; 2] {
        [self.left, self.right]
    }

    /// Largest joint-angle distance between `state` and this pose over both arms.
    pub fn max_error(&self, state: &[JointVector; 2]) -> f64 {
        self.left
            .max_joint_distance(&state[0])
            .max(self.right.max_joint_distance(&state[1]))
    }
}

/// Leader observation for one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LeaderView {
    pub q: [JointVector; 2],
    /// End-effector positions in the rig frame.
    pub ee: [Vector3<f64>; 2],
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SessionInput {
    /// `None` when no fresh leader sample is available.
    pub leaders: Option<LeaderView>,
    /// Followers are within tolerance of the ready pose.
    pub followers_at_ready: bool,
}

fn fraction(now: u64, started: u64, duration: u64) -> f64 {
    if duration == 0 {
        return 1.0;
    }
    (now.saturating_sub(started) as f64 / duration as f64).min(1.0)
}

/// Pure transition function. `next_episode_id` is used if an episode starts.
pub fn transition(
    state: &SessionState,
    input: &SessionInput,
    cfg: &GestureConfig,
    now: u64,
    next_episode_id: u64,
) -> (SessionState, Option<SessionEvent>) {
    let grasped = input
        .leaders
        .as_ref()
        .is_some_and(|l| l.q.iter().all(|q| is_grasped(q, cfg)));
    let in_zone = input
        .leaders
        .as_ref()
        .is_some_and(|l| l.ee.iter().all(|p| cfg.end_zone.contains(p)));
    let hold = cfg.hold_nanos();

    match *state {
        SessionState::Idle if input.followers_at_ready => (SessionState::Ready, None),
        SessionState::Idle => (SessionState::Idle, None),
        SessionState::Ready if grasped => (SessionState::Arming { held_since: now }, None),
        SessionState::Ready => (SessionState::Ready, None),
        SessionState::Arming { .. } if !grasped => (SessionState::Ready, None),
        SessionState::Arming { held_since } if now.saturating_sub(held_since) >= hold => {
            let episode_id = next_episode_id;
            let progress = fraction(now, now, cfg.transit_nanos());
            let next = if progress >= 1.0 {
                SessionState::Following { episode_id }
            } else {
                SessionState::Transit {
                    started: now,
                    progress,
                    episode_id,
                }
            };
            (next, Some(SessionEvent::EpisodeStart { episode_id }))
        }
        s @ SessionState::Arming { .. } => (s, None),
        SessionState::Transit {
            started, episode_id, ..
        } => {
            let progress = fraction(now, started, cfg.transit_nanos());
            if progress >= 1.0 {
                (SessionState::Following { episode_id }, None)
            } else {
                (
                    SessionState::Transit {
                        started,
                        progress,
                        episode_id,
                    },
                    None,
                )
            }
        }
        SessionState::Following { episode_id } if grasped && in_zone => (
            SessionState::Disarming {
                held_since: now,
                episode_id,
            },
            None,
        ),
        s @ SessionState::Following { .. } => (s, None),
        SessionState::Disarming { episode_id, .. } if !(grasped && in_zone) => {
            (SessionState::Following { episode_id }, None)
        }
        SessionState::Disarming {
            held_since,
            episode_id,
        } if now.saturating_sub(held_since) >= hold => (
            SessionState::Stopping {
                started: now,
                progress: fraction(now, now, cfg.transit_nanos()),
                episode_id,
            },
            Some(SessionEvent::EpisodeStop { episode_id }),
        ),
        s @ SessionState::Disarming { .. } => (s, None),
        SessionState::Stopping {
            started, episode_id, ..
        } => {
            let progress = fraction(now, started, cfg.transit_nanos());
            if progress >= 1.0 && input.followers_at_ready {
                (SessionState::Ready, None)
            } else {
                (
                    SessionState::Stopping {
                        started,
                        progress,
                        episode_id,
                    },
                    None,
                )
            }
        }
    }
}

/// Owns the lifecycle state and episode numbering.
#[derive(Debug, Clone)]
pub struct Session {
    state: SessionState,
    next_episode_id: u64,
    cfg: GestureConfig,
}

impl Session {
    pub fn new(cfg: GestureConfig) -> Self {
        Self::starting_at(cfg, 0)
    }

    /// Start numbering episodes at `first_episode_id`.
    pub fn starting_at(cfg: GestureConfig, first_episode_id: u64) -> Self {
        Self {
            state: SessionState::Idle,
            next_episode_id: first_episode_id,
            cfg,
        }
    }

    pub fn state(&self) -> &SessionState {
        &self.state
    }

    pub fn config(&self) -> &GestureConfig {
        &self.cfg
    }

    /// Advance one tick. Episode events come before the `StateChanged` they cause.
    pub fn step(&mut self, input: &SessionInput, now: u64) -> Vec<SessionEvent> {
        let before = self.state.code();
        let (next, event) = transition(&self.state, input, &self.cfg, now, self.next_episode_id);
        let mut events = Vec::new();
        if let Some(ev) = event {
            if let SessionEvent::EpisodeStart { .. } = ev {
                self.next_episode_id += 1;
            }
            events.push(ev);
        }
        self.state = next;
        if next.code() != before {
            events.push(SessionEvent::StateChanged { state: next.code() });
        }
        events
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MS: u64 = 1_000_000;

    fn cfg() -> GestureConfig {
        GestureConfig {
            grasp_threshold: 0.2,
            hold_duration: 1.0,
            end_zone: Aabb::cube(Vector3::new(0.0, 0.0, 0.0), 0.3),
            transit_duration: 2.0,
        }
    }

    fn view(gripper: f64, ee: Vector3<f64>) -> SessionInput {
        SessionInput {
            leaders: Some(LeaderView {
                q: [JointVector::new([0.0; 7], gripper); 2],
                ee: [ee; 2],
            }),
            followers_at_ready: true,
        }
    }

    fn outside() -> Vector3<f64> {
        Vector3::new(1.0, 1.0, 1.0)
    }

    fn ready_session() -> Session {
        let mut s = Session::new(cfg());
        s.step(&view(1.0, outside()), 0);
        assert_eq!(s.state().code(), StateCode::Ready);
        s
    }

    /// Drive both grippers to `gripper` every 8 ms from `from` to `to` (exclusive).
    fn hold(s: &mut Session, gripper: f64, ee: Vector3<f64>, from: u64, to: u64) -> Vec<SessionEvent> {
        let mut out = Vec::new();
        let mut t = from;
        while t < to {
            out.extend(s.step(&view(gripper, ee), t));
            t += 8 * MS;
        }
        out
    }

    #[test]
    fn short_grasp_does_not_start() {
        let mut s = ready_session();
        let ev = hold(&mut s, 0.0, outside(), 8 * MS, 8 * MS + 900 * MS);
        assert_eq!(s.state().code(), StateCode::Arming);
        let ev2 = s.step(&view(1.0, outside()), 920 * MS);
        assert_eq!(s.state().code(), StateCode::Ready);
        assert!(ev
            .iter()
            .chain(ev2.iter())
            .all(|e| !matches!(e, SessionEvent::EpisodeStart { .. })));
    }

    #[test]
    fn full_second_grasp_starts_episode() {
        let mut s = ready_session();
        let start = 8 * MS;
        let ev = hold(&mut s, 0.0, outside(), start, start + 1000 * MS + 1);
        assert_eq!(s.state().code(), StateCode::Transit);
        assert_eq!(
            ev,
            vec![
                SessionEvent::StateChanged {
                    state: StateCode::Arming
                },
                SessionEvent::EpisodeStart { episode_id: 0 },
                SessionEvent::StateChanged {
                    state: StateCode::Transit
                },
            ]
        );
    }

    #[test]
    fn stop_requires_end_zone() {
        let mut s = Session::new(cfg());
        s.state = SessionState::Following { episode_id: 3 };
        let ev = hold(&mut s, 0.0, outside(), 0, 1500 * MS);
        assert!(ev.is_empty());
        assert_eq!(s.state().code(), StateCode::Following);

        let inside = Vector3::new(0.05, 0.0, 0.0);
        let ev = hold(&mut s, 0.0, inside, 2000 * MS, 3008 * MS);
        assert!(ev.contains(&SessionEvent::EpisodeStop { episode_id: 3 }));
        assert_eq!(s.state().code(), StateCode::Stopping);
    }

    #[test]
    fn leaving_zone_cancels_disarm() {
        let mut s = Session::new(cfg());
        s.state = SessionState::Following { episode_id: 0 };
        let inside = Vector3::zeros();
        hold(&mut s, 0.0, inside, 0, 500 * MS);
        assert_eq!(s.state().code(), StateCode::Disarming);
        s.step(&view(0.0, outside()), 504 * MS);
        assert_eq!(s.state().code(), StateCode::Following);
    }

    #[test]
    fn transit_then_following_then_ready() {
        let mut s = ready_session();
        hold(&mut s, 0.0, outside(), 0, 1001 * MS);
        assert_eq!(s.state().code(), StateCode::Transit);
        let started = match *s.state() {
            SessionState::Transit { started, .. } => started,
            _ => unreachable!(),
        };
        s.step(&view(1.0, outside()), started + 1000 * MS);
        match *s.state() {
            SessionState::Transit { progress, .. } => assert_eq!(progress, 0.5),
            other => panic!("{other:?}"),
        }
        s.step(&view(1.0, outside()), started + 2000 * MS);
        assert_eq!(s.state().code(), StateCode::Following);

        s.state = SessionState::Stopping {
            started: 10_000 * MS,
            progress: 0.0,
            episode_id: 0,
        };
        let mut not_ready = view(1.0, outside());
        not_ready.followers_at_ready = false;
        s.step(&not_ready, 13_000 * MS);
        assert_eq!(s.state().code(), StateCode::Stopping);
        s.step(&view(1.0, outside()), 13_008 * MS);
        assert_eq!(s.state().code(), StateCode::Ready);
    }

    #[test]
    fn missing_leaders_never_arm() {
        let mut s = ready_session();
        let none = SessionInput {
            leaders: None,
            followers_at_ready: true,
        };
        for k in 0..1000 {
            assert!(s.step(&none, k * 8 * MS).is_empty());
        }
        assert_eq!(s.state().code(), StateCode::Ready);
    }

    #[test]
    fn grasp_threshold_is_closed() {
        let c = cfg();
        assert!(is_grasped(&JointVector::new([0.0; 7], 0.0), &c));
        assert!(is_grasped(&JointVector::new([0.0; 7], 0.2), &c));
        assert!(!is_grasped(&JointVector::new([0.0; 7], 0.21), &c));
    }

    #[test]
    fn min_jerk_endpoints_and_midpoint() {
        let a = [JointVector::new([0.1, -0.3, 0.7, 1.1, 0.0, 2.0, -2.0], 0.9); 2];
        let b = [JointVector::new([0.3, 0.2, -0.4, 2.5, 1.0, -1.0, 3.0], 0.1); 2];
        assert_eq!(transit_command(&a, &b, 0.0), a);
        assert_eq!(transit_command(&a, &b, 1.0), b);
        assert_eq!(min_jerk(0.5), 0.5);
        let mid = transit_command(&a, &b, 0.5);
        for j in 0..7 {
            assert_eq!(mid[0].angles[j], 0.5 * a[0].angles[j] + 0.5 * b[0].angles[j]);
        }
    }

    #[test]
    fn config_validation() {
        assert!(cfg().validate().is_ok());
        let mut c = cfg();
        c.hold_duration = 0.0;
        assert!(c.validate().is_err());
        let mut c = cfg();
        c.end_zone.max[1] = c.end_zone.min[1];
        assert_eq!(c.validate(), Err(GestureConfigError::DegenerateZone));
    }
}
