//! Turn a stored episode back into timed bus messages.

use std::sync::Arc;

use crate::bus::{topics, BusMessage, CameraFrame, Payload, Topic};
use crate::safety::{FeedbackCause, FeedbackSignal};
use crate::kinematics::JOINT_COUNT;

use super::Episode;

/// Map `stamp` so that `start` lands on `base` and offsets shrink by `speed`.
pub fn rescale(stamp: u64, start: u64, base: u64, speed: f64) -> u64 {
    let offset = (stamp as i128 - start as i128) as f64 / speed;
    (base as i128 + offset.round() as i128).max(0) as u64
}

/// Messages reproducing the episode's observation, action, feedback and frame
/// streams on their original topics, time-shifted so the episode start maps to
/// `base` and stretched by `1 / speed`. Sorted by stamp; each stored frame is
/// emitted once at its capture stamp.
pub fn replay_messages(ep: &Episode, speed: f64, base: u64) -> Vec<BusMessage> {
    assert!(speed > 0.0 && speed.is_finite(), "speed must be positive");
    let start = ep.manifest.start_stamp_ns;
    let at = |stamp: u64| rescale(stamp, start, base, speed);
    let t = |name: &str| Topic::new(name).unwrap();
    let (state, cmd, fb) = (
        t(topics::FOLLOWER_JOINT_STATES),
        t(topics::FOLLOWER_JOINT_COMMANDS),
        t(topics::TELEOP_FEEDBACK),
    );

    let mut out = Vec::with_capacity(ep.records.len() * 3 + ep.frames.len());
    let mut frame_stamps = std::collections::BTreeMap::new();
    for r in &ep.records {
        let stamp = at(ep.record_stamp(r));
        let cause = FeedbackCause::from_code(r.feedback_cause).unwrap_or_default();
        out.push((stamp, 1, state.clone(), Payload::JointState(r.obs.to_vec())));
        out.push((stamp, 2, cmd.clone(), Payload::JointCommand(r.action.to_vec())));
        out.push((
            stamp,
            3,
            fb.clone(),
            Payload::Feedback(FeedbackSignal {
                magnitudes: [[0.0; JOINT_COUNT]; 2],
                cause,
            }),
        ));
        for f in &r.frames {
            frame_stamps
                .entry((f.camera_id, f.frame_index))
                .or_insert(f.frame_stamp);
        }
    }
    for ((cam, idx), stamp) in frame_stamps {
        if let Some(img) = ep.frames.get(&(cam, idx)) {
            out.push((
                at(stamp),
                0,
                Topic::camera(cam),
                Payload::CameraFrame(CameraFrame {
                    camera_id: cam,
                    frame_index: idx,
                    width: img.width,
                    height: img.height,
                    pixels: Arc::from(img.pixels.as_slice()),
                }),
            ));
        }
    }
    out.sort_by_key(|(stamp, order, topic, _)| (*stamp, *order, topic.as_str().to_owned()));

    let mut seqs = std::collections::HashMap::new();
    out.into_iter()
        .map(|(stamp, _, topic, payload)| {
            let seq = seqs.entry(topic.clone()).or_insert(0u64);
            let m = BusMessage {
                topic,
                stamp,
                seq: *seq,
                payload,
            };
            *seq += 1;
            m
        })
        .collect()
}
