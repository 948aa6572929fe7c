//! Synchronized 50 Hz episode recording.
//!
//! The recorder listens to follower states, follower commands, feedback and
//! camera frames, and on each teleop tick emits every grid record whose time
//! has passed. Grid times are anchored at the episode start stamp.

mod replay;
mod store;
mod sync;
mod validate;

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::bus::{topics, ArmState, BusMessage, CameraFrame, Payload};
use crate::kinematics::JointVector;

pub use store::{
    episode_dir_name, list_episode_dirs, next_episode_id, read_episode, record_width,
    write_episode, ReadError, FORMAT_VERSION, RECORDS_MAGIC,
};
pub use replay::{replay_messages, rescale};
pub use sync::{SkipReason, Synchronizer, ZohStream, STALE_AFTER_NS};
pub use validate::{validate_episode, ValidationReport, Violation};

pub const RECORD_RATE_HZ: u64 = 50;
pub const RECORD_PERIOD_NS: u64 = 1_000_000_000 / RECORD_RATE_HZ;

/// Episode time of grid index `k`.
pub fn grid_time(k: u64) -> f64 {
    k as f64 / RECORD_RATE_HZ as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FrameRef {
    pub camera_id: u8,
    pub frame_index: u64,
    pub frame_stamp: u64,
}

/// One synchronized row.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRecord {
    /// Seconds since the episode start, always `k / 50` for an integer `k`.
    pub t: f64,
    pub obs: [ArmState; 2],
    pub action: [JointVector; 2],
    pub frames: Vec<FrameRef>,
    pub feedback_cause: u8,
    pub gated: bool,
    /// The newest joint state was more than 100 ms old at this grid time.
    pub stale: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EpisodeStatus {
    Complete,
    Aborted,
}

/// Free-form labels used to group episodes during analysis.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct EpisodeLabels {
    pub task: String,
    pub location: String,
    pub operator: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub episode_id: u64,
    /// RFC 3339 wall-clock time of the episode start.
    pub wall_clock: String,
    pub rig_hash: String,
    pub labels: EpisodeLabels,
    pub status: EpisodeStatus,
    pub camera_count: u8,
    /// Stamp of the start event; record times are relative to it.
    pub start_stamp_ns: u64,
    /// First stamp at which records could be produced.
    pub record_start_ns: Option<u64>,
    pub end_stamp_ns: u64,
    /// Grid points that produced no record because a stream had no sample yet.
    pub skipped_ticks: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrameImage {
    pub width: u16,
    pub height: u16,
    pub pixels: Vec<u8>,
}

impl From<&CameraFrame> for FrameImage {
    fn from(f: &CameraFrame) -> Self {
        Self {
            width: f.width,
            height: f.height,
            pixels: f.pixels.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub manifest: Manifest,
    pub records: Vec<EpisodeRecord>,
    /// Referenced frames keyed by `(camera_id, frame_index)`.
    pub frames: BTreeMap<(u8, u64), FrameImage>,
}

impl Episode {
    /// Bus stamp of a record.
    pub fn record_stamp(&self, record: &EpisodeRecord) -> u64 {
        self.manifest.start_stamp_ns + (record.t * RECORD_RATE_HZ as f64).round() as u64 * RECORD_PERIOD_NS
    }

    pub fn duration_secs(&self) -> f64 {
        match (self.records.first(), self.records.last()) {
            (Some(a), Some(b)) => b.t - a.t,
            _ => 0.0,
        }
    }
}

struct Active {
    episode: Episode,
    next_k: Option<u64>,
}

/// Builds episodes from bus traffic. Owned by the teleop loop.
pub struct EpisodeRecorder {
    sync: Synchronizer,
    camera_count: u8,
    active: Option<Active>,
}

impl EpisodeRecorder {
    pub fn new(camera_count: u8) -> Self {
        Self {
            sync: Synchronizer::new(camera_count),
            camera_count,
            active: None,
        }
    }

    pub fn is_active(&self) -> bool {
        self.active.is_some()
    }

    pub fn synchronizer(&self) -> &Synchronizer {
        &self.sync
    }

    /// Feed one bus message; unrelated topics are ignored.
    pub fn ingest(&mut self, msg: &BusMessage) {
        match (&msg.payload, msg.topic.as_str()) {
            (Payload::JointState(arms), topics::FOLLOWER_JOINT_STATES) => {
                self.sync.push_state(msg.stamp, arms);
            }
            (Payload::JointCommand(arms), topics::FOLLOWER_JOINT_COMMANDS) => {
                self.sync.push_command(msg.stamp, arms);
            }
            (Payload::Feedback(fb), topics::TELEOP_FEEDBACK) => {
                self.sync.push_feedback(msg.stamp, fb);
            }
            (Payload::CameraFrame(f), _) if msg.topic.as_str().starts_with("/camera/") => {
                self.sync.push_frame(msg.stamp, Arc::new(f.clone()));
            }
            _ => {}
        }
    }

    pub fn begin(
        &mut self,
        episode_id: u64,
        start_stamp_ns: u64,
        wall_clock: String,
        rig_hash: String,
        labels: EpisodeLabels,
    ) {
        self.active = Some(Active {
            episode: Episode {
                manifest: Manifest {
                    episode_id,
                    wall_clock,
                    rig_hash,
                    labels,
                    status: EpisodeStatus::Aborted,
                    camera_count: self.camera_count,
                    start_stamp_ns,
                    record_start_ns: None,
                    end_stamp_ns: start_stamp_ns,
                    skipped_ticks: 0,
                },
                records: Vec::new(),
                frames: BTreeMap::new(),
            },
            next_k: None,
        });
    }

    /// Emit all grid records due at `now`. Records are produced only while
    /// `recording` is set; grid points before the first such tick are skipped.
    pub fn tick(&mut self, now: u64, recording: bool) {
        let Some(active) = self.active.as_mut() else {
            self.sync.prune_before(now);
            return;
        };
        let start = active.episode.manifest.start_stamp_ns;
        if recording {
            let next_k = *active.next_k.get_or_insert_with(|| {
                active.episode.manifest.record_start_ns = Some(now);
                (now - start).div_ceil(RECORD_PERIOD_NS)
            });
            let mut k = next_k;
            while start + k * RECORD_PERIOD_NS <= now {
                let grid = start + k * RECORD_PERIOD_NS;
                match self.sync.synchronize(grid, grid_time(k)) {
                    Ok((record, used)) => {
                        for f in used {
                            active
                                .episode
                                .frames
                                .entry((f.camera_id, f.frame_index))
                                .or_insert_with(|| FrameImage::from(f.as_ref()));
                        }
                        active.episode.records.push(record);
                    }
                    Err(_) => active.episode.manifest.skipped_ticks += 1,
                }
                k += 1;
            }
            active.next_k = Some(k);
            self.sync.prune_before(start + k * RECORD_PERIOD_NS);
        } else if active.next_k.is_none() {
            self.sync.prune_before(now);
        }
    }

    /// Close the in-flight episode, if any.
    pub fn finish(&mut self, now: u64, status: EpisodeStatus) -> Option<Episode> {
        let mut active = self.active.take()?;
        active.episode.manifest.status = status;
        active.episode.manifest.end_stamp_ns = now;
        Some(active.episode)
    }
}
