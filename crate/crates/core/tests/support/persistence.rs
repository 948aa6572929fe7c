use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use teleop_core::bus::ArmState;
use teleop_core::kinematics::JointVector;
use teleop_core::recorder::{
    read_episode, write_episode, Episode, EpisodeLabels, EpisodeRecord, EpisodeStatus, FrameImage,
    FrameRef, Manifest,
};

fn any_f64(rng: &mut ChaCha8Rng) -> f64 {
    match rng.random_range(0..8) {
        0 => f64::from_bits(rng.random()),
        1 => -0.0,
        2 => f64::MIN_POSITIVE / 3.0,
        _ => rng.random_range(-4.0..4.0),
    }
}

fn any_string(rng: &mut ChaCha8Rng) -> String {
    let pool = ['a', 'Z', '0', ' ', '"', '\\', '\n', 'é', '中', '🙂', '\u{0}'];
    (0..rng.random_range(0..12))
        .map(|_| pool[rng.random_range(0..pool.len())])
        .collect()
}

fn random_episode(rng: &mut ChaCha8Rng) -> Episode {
    let cameras = rng.random_range(0..3u8);
    let n = rng.random_range(0..40);
    let mut frames = BTreeMap::new();
    let records = (0..n)
        .map(|k| {
            let refs = (0..cameras)
                .map(|cam| {
                    let frame_index = rng.random_range(0..(n as u64 / 2 + 1));
                    frames.entry((cam, frame_index)).or_insert_with(|| {
                        let (w, h) = (rng.random_range(0..5u16), rng.random_range(0..5u16));
                        FrameImage {
                            width: w,
                            height: h,
                            pixels: (0..w as usize * h as usize * 3).map(|_| rng.random()).collect(),
                        }
                    });
                    FrameRef {
                        camera_id: cam,
                        frame_index,
                        frame_stamp: rng.random(),
                    }
                })
                .collect();
            let arm = |rng: &mut ChaCha8Rng| ArmState {
                position: std::array::from_fn(|_| any_f64(rng)),
                velocity: std::array::from_fn(|_| any_f64(rng)),
                effort: std::array::from_fn(|_| any_f64(rng)),
                gripper: any_f64(rng),
            };
            let cmd = |rng: &mut ChaCha8Rng| JointVector {
                angles: std::array::from_fn(|_| any_f64(rng)),
                gripper: any_f64(rng),
            };
            EpisodeRecord {
                t: k as f64 / 50.0,
                obs: [arm(rng), arm(rng)],
                action: [cmd(rng), cmd(rng)],
                frames: refs,
                feedback_cause: rng.random_range(0..4),
                gated: rng.random(),
                stale: rng.random(),
            }
        })
        .collect();
    Episode {
        manifest: Manifest {
            episode_id: rng.random_range(0..1_000_000),
            wall_clock: any_string(rng),
            rig_hash: any_string(rng),
            labels: EpisodeLabels {
                task: any_string(rng),
                location: any_string(rng),
                operator: any_string(rng),
            },
            status: if rng.random() {
                EpisodeStatus::Complete
            } else {
                EpisodeStatus::Aborted
            },
            camera_count: cameras,
            start_stamp_ns: rng.random(),
            record_start_ns: rng.random::<bool>().then(|| rng.random()),
            end_stamp_ns: rng.random(),
            skipped_ticks: rng.random(),
        },
        records,
        frames,
    }
}

/// Every float as raw bits so that signed zeros and NaN payloads count.
fn record_bits(r: &EpisodeRecord) -> Vec<u64> {
    let mut out = vec![r.t.to_bits()];
    for a in &r.obs {
        out.extend(a.position.iter().chain(&a.velocity).chain(&a.effort).map(|v| v.to_bits()));
        out.push(a.gripper.to_bits());
    }
    for c in &r.action {
        out.extend(c.angles.iter().map(|v| v.to_bits()));
        out.push(c.gripper.to_bits());
    }
    for f in &r.frames {
        out.extend([f.camera_id as u64, f.frame_index, f.frame_stamp]);
    }
    out.extend([r.feedback_cause as u64, r.gated as u64, r.stale as u64]);
    out
}

fn dir_contents(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.insert(rel, fs::read(&path).unwrap());
            }
        }
    }
    out
}

/// read(write(episode)) reproduces every bit, and rewriting reproduces every file.
pub fn round_trip(cases: usize) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(0x9E5);
    let root = tempfile::tempdir().unwrap();
    let mut records = 0usize;
    for case in 0..cases {
        let ep = random_episode(&mut rng);
        let first = root.path().join(format!("a{case}"));
        let second = root.path().join(format!("b{case}"));
        let path = write_episode(&ep, &first).unwrap();
        let back = read_episode(&path).unwrap();
        records += back.records.len();

        assert_eq!(back.manifest, ep.manifest, "case {case}");
        assert_eq!(back.frames, ep.frames, "case {case}");
        assert_eq!(back.records.len(), ep.records.len(), "case {case}");
        for (i, (a, b)) in back.records.iter().zip(&ep.records).enumerate() {
            assert_eq!(record_bits(a), record_bits(b), "case {case} record {i}");
        }

        let again = write_episode(&back, &second).unwrap();
        assert_eq!(dir_contents(&path), dir_contents(&again), "case {case}");
        fs::remove_dir_all(&first).unwrap();
        fs::remove_dir_all(&second).unwrap();
    }
    format!("{cases} episodes, {records} records, bit-exact")
}
