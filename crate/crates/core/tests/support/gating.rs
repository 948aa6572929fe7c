use std::sync::Arc;

use teleop_core::clock::secs_to_nanos;
use teleop_core::kinematics::JointVector;
use teleop_core::recorder::{validate_episode, EpisodeStatus};
use teleop_core::rig::{default_end_zone_pose, Rig};
use teleop_core::safety::{check_self_collision, FeedbackCause};
use teleop_core::simdev::{episode_script, EpisodePlan, LeaderScript, LeaderSource};
use teleop_core::teleop::{SimSetup, TeleopOptions, VirtualRig};

/// Both leaders swing inward until the followers would collide, then return.
pub fn collision_script(rig: &Rig) -> LeaderScript {
    let ready = rig.ready();
    let mut toward = ready;
    toward[0].angles[0] = -0.9;
    toward[1].angles[0] = 0.9;
    let plan = EpisodePlan {
        moves: vec![(toward, 2.0), (toward, 1.0), (ready, 2.0)],
        end_pose: default_end_zone_pose(),
        end_move: 1.5,
        follow_secs: 8.0,
    };
    episode_script(ready, &rig.desc.gesture, 1.5, &[plan]).unwrap()
}

/// Every published command passes a collision re-check at the configured
/// margin, gated commands are frozen, and Collision feedback follows the
/// first gated command within two ticks.
pub fn collision_course() -> String {
    let rig = Arc::new(Rig::desk_default());
    let script = collision_script(&rig);
    let end = secs_to_nanos(script.duration() + 1.0);
    let mut vr = VirtualRig::new(
        SimSetup {
            rig: rig.clone(),
            leader: LeaderSource::Script { script, start_ns: 0 },
            seed: 1,
            opts: TeleopOptions::default(),
        },
        0,
    );
    let margin = rig.desc.safety.margin;
    let mut first_gated: Option<u64> = None;
    let mut first_collision_cause: Option<u64> = None;
    let mut tick = 0u64;
    let mut frozen: Option<[JointVector; 2]> = None;
    vr.run_until(end, |r| {
        let rep = check_self_collision(&rig.followers, &r.command[0], &r.command[1], margin);
        assert!(!rep.colliding, "published colliding command at tick {tick}");
        if r.gated {
            first_gated.get_or_insert(tick);
            match frozen {
                Some(f) => assert_eq!(f, r.command),
                None => frozen = Some(r.command),
            }
        } else {
            frozen = None;
        }
        if r.feedback.cause == FeedbackCause::Collision {
            first_collision_cause.get_or_insert(tick);
        }
        tick += 1;
    });
    let out = vr.finish();
    let g = first_gated.expect("scenario must gate");
    let c = first_collision_cause.expect("feedback must report collision");
    assert!(c <= g + 2, "gated at {g}, collision feedback at {c}");
    assert!(out.stats.gated_ticks > 10);
    assert_eq!(out.episodes.len(), 1);
    assert_eq!(out.episodes[0].status, EpisodeStatus::Complete);
    let ep = out.episodes[0].episode.as_ref().unwrap();
    assert!(ep.records.iter().any(|r| r.gated));
    assert!(validate_episode(ep, &rig.follower_models()).is_clean());
    format!(
        "{tick} ticks, {} gated, none colliding; Collision feedback {} tick(s) after the first gate",
        out.stats.gated_ticks,
        c - g
    )
}
