//! The control node: each tick it advances the session, computes and gates
//! follower commands, publishes feedback and drives the episode recorder.

mod runner;

use std::path::PathBuf;
use std::sync::Arc;

use chrono::{DateTime, SecondsFormat, Utc};
use log::{info, warn};

use crate::bus::{topics, ArmState, Bus, Payload, Publisher, Subscription, Topic};
use crate::clock::{secs_to_nanos, Clock, NANOS_PER_SEC};
use crate::kinematics::{JointVector, JOINT_COUNT};
use crate::recorder::{write_episode, Episode, EpisodeLabels, EpisodeRecorder, EpisodeStatus};
use crate::retarget::retarget;
use crate::rig::Rig;
use crate::safety::{
    check_self_collision, compute_feedback, gate_command, CollisionReport, FeedbackCause,
    FeedbackSignal,
};
use crate::session::{
    transit_command, LeaderView, Session, SessionEvent, SessionInput, SessionState, StateCode,
};

pub use runner::{
    run_virtual, CameraDevice, FollowerDevice, LiveRun, RunOutcome, SimSetup, VirtualRig,
};

const SUB_CAPACITY: usize = 1024;
const RECORDER_CAPACITY: usize = 1 << 14;

#[derive(Debug, Clone, Default)]
pub struct TeleopOptions {
    pub labels: EpisodeLabels,
    /// Where finished episodes are written; `None` keeps them in memory.
    pub record_root: Option<PathBuf>,
    pub first_episode_id: u64,
}

/// What one tick did.
#[derive(Debug, Clone, PartialEq)]
pub struct TickReport {
    pub stamp: u64,
    pub state: StateCode,
    pub events: Vec<SessionEvent>,
    /// Published follower command.
    pub command: [JointVector; 2],
    /// Command before gating.
    pub candidate: [JointVector; 2],
    pub gated: bool,
    pub collision: CollisionReport,
    pub feedback: FeedbackSignal,
    pub leader_fresh: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TeleopStats {
    pub ticks: u64,
    pub gated_ticks: u64,
    pub episodes_started: u64,
    pub episodes_completed: u64,
    pub episodes_aborted: u64,
}

/// A finished episode, on disk or in memory.
#[derive(Debug, Clone)]
pub struct FinishedEpisode {
    pub episode_id: u64,
    pub status: EpisodeStatus,
    pub record_count: usize,
    pub path: Option<PathBuf>,
    pub episode: Option<Episode>,
}

pub struct TeleopNode {
    rig: Arc<Rig>,
    clock: Clock,
    publisher: Publisher,
    leader_sub: Subscription,
    follower_sub: Subscription,
    recorder_tap: Subscription,
    topic_cmd: Topic,
    topic_feedback: Topic,
    topic_events: Topic,
    session: Session,
    recorder: EpisodeRecorder,
    opts: TeleopOptions,
    leader: Option<(u64, [JointVector; 2])>,
    follower: Option<(u64, [ArmState; 2])>,
    last_cmd: [JointVector; 2],
    last_safe: [JointVector; 2],
    transit_source: [JointVector; 2],
    transit_target: [JointVector; 2],
    prev_retarget: Option<[JointVector; 2]>,
    next_heartbeat: u64,
    stats: TeleopStats,
    finished: Vec<FinishedEpisode>,
}

fn pair<T: Copy>(v: &[T]) -> Option<[T; 2]> {
    <[T; 2]>::try_from(v).ok()
}

impl TeleopNode {
    pub fn new(rig: Arc<Rig>, bus: &Bus, clock: Clock, opts: TeleopOptions) -> Self {
        let t = |name: &str| Topic::new(name).unwrap();
        let ready = rig.ready();
        let session = Session::starting_at(rig.desc.gesture, opts.first_episode_id);
        Self {
            leader_sub: bus.subscribe(&t(topics::LEADER_JOINT_STATES), SUB_CAPACITY),
            follower_sub: bus.subscribe(&t(topics::FOLLOWER_JOINT_STATES), SUB_CAPACITY),
            recorder_tap: bus.tap(RECORDER_CAPACITY, None),
            publisher: Publisher::new(bus.clone(), clock.clone()),
            topic_cmd: t(topics::FOLLOWER_JOINT_COMMANDS),
            topic_feedback: t(topics::TELEOP_FEEDBACK),
            topic_events: t(topics::SESSION_EVENTS),
            recorder: EpisodeRecorder::new(rig.desc.camera_count),
            session,
            opts,
            leader: None,
            follower: None,
            last_cmd: ready,
            last_safe: ready,
            transit_source: ready,
            transit_target: ready,
            prev_retarget: None,
            next_heartbeat: 0,
            stats: TeleopStats::default(),
            finished: Vec::new(),
            clock,
            rig,
        }
    }

    pub fn state(&self) -> &SessionState {
        self.session.state()
    }

    pub fn stats(&self) -> &TeleopStats {
        &self.stats
    }

    pub fn finished(&self) -> &[FinishedEpisode] {
        &self.finished
    }

    pub fn take_finished(&mut self) -> Vec<FinishedEpisode> {
        std::mem::take(&mut self.finished)
    }

    pub fn rig(&self) -> &Arc<Rig> {
        &self.rig
    }

    fn drain_inputs(&mut self) {
        for m in self.leader_sub.drain() {
            if let Payload::JointState(arms) = &m.payload {
                if let Some(a) = pair(arms) {
                    if self.leader.is_none_or(|(s, _)| m.stamp >= s) {
                        self.leader = Some((m.stamp, a.map(|s| s.joints())));
                    }
                }
            }
        }
        for m in self.follower_sub.drain() {
            if let Payload::JointState(arms) = &m.payload {
                if let Some(a) = pair(arms) {
                    if self.follower.is_none_or(|(s, _)| m.stamp >= s) {
                        self.follower = Some((m.stamp, a));
                    }
                }
            }
        }
    }

    fn publish_event(&mut self, now: u64, ev: SessionEvent) {
        let topic = self.topic_events.clone();
        self.publisher.publish_at(&topic, now, Payload::SessionEvent(ev));
    }

    fn wall_clock(&self, stamp: u64) -> String {
        DateTime::<Utc>::from(self.clock.wall_time(stamp)).to_rfc3339_opts(SecondsFormat::Nanos, true)
    }

    fn store(&mut self, episode: Episode) {
        let id = episode.manifest.episode_id;
        let status = episode.manifest.status;
        match status {
            EpisodeStatus::Complete => self.stats.episodes_completed += 1,
            EpisodeStatus::Aborted => self.stats.episodes_aborted += 1,
        }
        let record_count = episode.records.len();
        let (path, kept) = match &self.opts.record_root {
            Some(root) => match write_episode(&episode, root) {
                Ok(p) => {
                    info!("episode {id} written to {} ({record_count} records)", p.display());
                    (Some(p), None)
                }
                Err(e) => {
                    warn!("failed to write episode {id}: {e}");
                    (None, Some(episode))
                }
            },
            None => (None, Some(episode)),
        };
        self.finished.push(FinishedEpisode {
            episode_id: id,
            status,
            record_count,
            path,
            episode: kept,
        });
    }

    /// Finalize an in-flight episode as aborted.
    pub fn abort(&mut self, now: u64) -> Option<u64> {
        let ep = self.recorder.finish(now, EpisodeStatus::Aborted)?;
        let id = ep.manifest.episode_id;
        warn!("episode {id} aborted");
        self.store(ep);
        Some(id)
    }

    pub fn tick(&mut self, now: u64) -> TickReport {
        self.stats.ticks += 1;
        self.drain_inputs();
        let rig = self.rig.clone();
        let desc = &rig.desc;
        let timeout = secs_to_nanos(desc.leader_timeout);

        let fresh_leader = self
            .leader
            .filter(|(s, _)| now.saturating_sub(*s) <= timeout)
            .map(|(_, q)| q);
        let follower_q = self.follower.map(|(_, a)| a.map(|s| s.joints()));
        let at_ready = follower_q
            .as_ref()
            .is_some_and(|q| desc.ready_pose.max_error(q) < desc.ready_tolerance);
        let input = SessionInput {
            leaders: fresh_leader.map(|q| LeaderView {
                q,
                ee: rig.leader_ee(&q),
            }),
            followers_at_ready: at_ready,
        };

        // Retarget whenever the leader is live so smoothing state stays continuous.
        let retargeted = fresh_leader.map(|q| {
            let models = [&rig.followers.left, &rig.followers.right];
            let prev = self.prev_retarget;
            let r: [_; 2] = std::array::from_fn(|i| {
                retarget(&desc.retarget, models[i], &q[i], prev.as_ref().map(|p| &p[i]))
            });
            self.prev_retarget = Some([r[0].command, r[1].command]);
            r
        });

        let events = self.session.step(&input, now);
        for ev in &events {
            match *ev {
                SessionEvent::EpisodeStart { episode_id } => {
                    self.stats.episodes_started += 1;
                    self.transit_source = self.last_cmd;
                    if let Some(r) = &retargeted {
                        self.transit_target = [r[0].command, r[1].command];
                    }
                    info!("episode {episode_id} started");
                    self.recorder.begin(
                        episode_id,
                        now,
                        self.wall_clock(now),
                        rig.hash.clone(),
                        self.opts.labels.clone(),
                    );
                }
                SessionEvent::EpisodeStop { episode_id } => {
                    self.transit_source = self.last_cmd;
                    info!("episode {episode_id} stopped");
                    if let Some(ep) = self.recorder.finish(now, EpisodeStatus::Complete) {
                        self.store(ep);
                    }
                }
                _ => {}
            }
        }
        for ev in &events {
            self.publish_event(now, *ev);
        }

        let state = *self.session.state();
        let ready = rig.ready();
        let mut limits_hit = [[false; JOINT_COUNT]; 2];
        let mut reference = None;
        let candidate = match state {
            SessionState::Idle | SessionState::Ready | SessionState::Arming { .. } => ready,
            SessionState::Transit { progress, .. } => {
                if let Some(r) = &retargeted {
                    self.transit_target = [r[0].command, r[1].command];
                }
                transit_command(&self.transit_source, &self.transit_target, progress)
            }
            SessionState::Following { .. } | SessionState::Disarming { .. } => match &retargeted {
                Some(r) => {
                    limits_hit = [r[0].limits_hit, r[1].limits_hit];
                    reference = Some([r[0].command, r[1].command]);
                    [r[0].command, r[1].command]
                }
                None => self.last_cmd,
            },
            SessionState::Stopping { progress, .. } => {
                transit_command(&self.transit_source, &ready, progress)
            }
        };
        let candidate = [
            rig.followers.left.clamp_to_limits(&candidate[0]),
            rig.followers.right.clamp_to_limits(&candidate[1]),
        ];

        let collision =
            check_self_collision(&rig.followers, &candidate[0], &candidate[1], desc.safety.margin);
        let gated = gate_command(&collision, &candidate, &self.last_safe);
        if gated.gated {
            self.stats.gated_ticks += 1;
        } else {
            self.last_safe = gated.command;
        }
        let command = gated.command;
        self.last_cmd = command;
        let topic = self.topic_cmd.clone();
        self.publisher
            .publish_at(&topic, now, Payload::JointCommand(command.to_vec()));

        let reference = reference.unwrap_or(command);
        let errors: [[f64; JOINT_COUNT]; 2] = match &follower_q {
            Some(q) => std::array::from_fn(|arm| {
                std::array::from_fn(|j| reference[arm].angles[j] - q[arm].angles[j])
            }),
            None => [[0.0; JOINT_COUNT]; 2],
        };
        let mut feedback = compute_feedback(
            &errors,
            &collision,
            &limits_hit,
            desc.safety.deadband,
            desc.safety.saturation,
        );
        if fresh_leader.is_none() && feedback.cause != FeedbackCause::Collision {
            feedback.cause = FeedbackCause::TrackingLag;
        }
        let topic = self.topic_feedback.clone();
        self.publisher
            .publish_at(&topic, now, Payload::Feedback(feedback));

        if now >= self.next_heartbeat {
            self.publish_event(now, SessionEvent::Heartbeat);
            self.next_heartbeat = now + NANOS_PER_SEC;
        }

        for m in self.recorder_tap.drain() {
            self.recorder.ingest(&m);
        }
        self.recorder.tick(now, state.is_teleoperating());

        TickReport {
            stamp: now,
            state: state.code(),
            events,
            command,
            candidate,
            gated: gated.gated,
            collision,
            feedback,
            leader_fresh: fresh_leader.is_some(),
        }
    }
}
