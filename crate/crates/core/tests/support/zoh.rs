use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use teleop_core::bus::{ArmState, CameraFrame};
use teleop_core::kinematics::JointVector;
use teleop_core::recorder::{SkipReason, Synchronizer, ZohStream, STALE_AFTER_NS};

/// Linear-scan reference: last accepted sample with stamp ≤ t.
fn reference(samples: &[(u64, usize)], t: u64) -> Option<(u64, usize)> {
    samples.iter().rev().find(|(s, _)| *s <= t).copied()
}

fn random_stamps(rng: &mut ChaCha8Rng) -> Vec<u64> {
    let n = rng.random_range(0..60);
    let mut t = rng.random_range(0..1_000u64);
    (0..n)
        .map(|_| {
            match rng.random_range(0..10) {
                0 => {} // duplicate stamp
                1 => return t.saturating_sub(rng.random_range(1..50)), // out of order
                _ => t += rng.random_range(1..100),
            }
            t
        })
        .collect()
}

/// Sample-and-hold lookup against a linear scan, including pruning.
pub fn stream_lookup(cases: usize) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5a48);
    let mut queries_checked = 0usize;
    for case in 0..cases {
        let stamps = random_stamps(&mut rng);
        let mut stream = ZohStream::new();
        let mut accepted: Vec<(u64, usize)> = Vec::new();
        let mut rejected = 0;
        for (i, &s) in stamps.iter().enumerate() {
            let ok = accepted.last().is_none_or(|(last, _)| s >= *last);
            assert_eq!(stream.push(s, i), ok, "case {case}: push {i}");
            if ok {
                accepted.push((s, i));
            } else {
                rejected += 1;
            }
        }
        assert_eq!(stream.rejected(), rejected);
        assert_eq!(stream.len(), accepted.len());

        let hi = stamps.iter().max().copied().unwrap_or(0) + 100;
        let queries: Vec<u64> = (0..20).map(|_| rng.random_range(0..=hi)).collect();
        for &t in &queries {
            assert_eq!(stream.at(t).copied(), reference(&accepted, t), "case {case}: t={t}");
            queries_checked += 1;
        }

        let cut = rng.random_range(0..=hi);
        stream.prune_before(cut);
        for &t in queries.iter().filter(|&&t| t >= cut) {
            assert_eq!(
                stream.at(t).copied(),
                reference(&accepted, t),
                "case {case}: t={t} after pruning at {cut}"
            );
        }
    }
    format!("{cases} streams, {queries_checked} lookups")
}

fn frame(camera_id: u8, frame_index: u64) -> Arc<CameraFrame> {
    Arc::new(CameraFrame {
        camera_id,
        frame_index,
        width: 1,
        height: 1,
        pixels: Arc::from(vec![0u8; 3]),
    })
}

/// Record assembly picks the latest sample at or before the grid time on every stream.
pub fn record_selection(cases: usize) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(0x6752);
    let ms = 1_000_000u64;
    let mut records = 0usize;
    for case in 0..cases {
        let cameras = rng.random_range(0..3u8);
        let mut sync = Synchronizer::new(cameras);
        let mut states = Vec::new();
        let mut commands = Vec::new();
        let mut frames: Vec<Vec<(u64, u64)>> = vec![Vec::new(); cameras as usize];

        let (mut ts, mut tc) = (rng.random_range(0..50) * ms, rng.random_range(0..50) * ms);
        let mut tf: Vec<u64> = (0..cameras).map(|_| rng.random_range(0..80) * ms).collect();
        for i in 0..rng.random_range(1..40) {
            match rng.random_range(0..3) {
                0 => {
                    ts += rng.random_range(1..200) * ms / 4;
                    let q = JointVector::new([i as f64; 7], 0.5);
                    sync.push_state(ts, &[ArmState::at_rest(&q); 2]);
                    states.push((ts, i as f64));
                }
                1 => {
                    tc += rng.random_range(1..40) * ms;
                    sync.push_command(tc, &[JointVector::new([i as f64; 7], 0.0); 2]);
                    commands.push((tc, i as f64));
                }
                _ if cameras > 0 => {
                    let cam = rng.random_range(0..cameras) as usize;
                    tf[cam] += rng.random_range(20..50) * ms;
                    let index = frames[cam].len() as u64;
                    sync.push_frame(tf[cam], frame(cam as u8, index));
                    frames[cam].push((tf[cam], index));
                }
                _ => {}
            }
        }

        for _ in 0..10 {
            let grid = rng.random_range(0..400) * ms;
            let state = states.iter().rev().find(|(s, _)| *s <= grid);
            let command = commands.iter().rev().find(|(s, _)| *s <= grid);
            let frame_refs: Vec<_> = frames
                .iter()
                .map(|f| f.iter().rev().find(|(s, _)| *s <= grid))
                .collect();
            match sync.synchronize(grid, 0.0) {
                Ok((record, used)) => {
                    records += 1;
                    let (ss, sv) = state.expect("record without a prior state");
                    let (_, cv) = command.expect("record without a prior command");
                    assert_eq!(record.obs[0].position[0], *sv, "case {case}");
                    assert_eq!(record.action[1].angles[0], *cv, "case {case}");
                    assert_eq!(record.stale, grid - ss > STALE_AFTER_NS, "case {case}");
                    assert_eq!(used.len(), cameras as usize);
                    for (cam, r) in record.frames.iter().enumerate() {
                        let (fs, fi) = frame_refs[cam].expect("record without a prior frame");
                        assert_eq!((r.camera_id, r.frame_index, r.frame_stamp), (cam as u8, *fi, *fs));
                        assert!(r.frame_stamp <= grid);
                    }
                }
                Err(SkipReason::NoJointState) => assert!(state.is_none(), "case {case}"),
                Err(SkipReason::NoCommand) => {
                    assert!(state.is_some() && command.is_none(), "case {case}")
                }
                Err(SkipReason::NoFrame(cam)) => {
                    assert!(state.is_some() && command.is_some(), "case {case}");
                    assert!(frame_refs[cam as usize].is_none(), "case {case}");
                }
            }
        }
    }
    format!("{cases} stream sets, {records} records")
}
