//! End-to-end acceptance suite. Each test prints one `PASS` or `FAIL` line.

mod common;
#[path = "../../core/tests/support/mod.rs"]
mod support;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write;
use std::panic::{catch_unwind, resume_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use common::*;
use nalgebra::Vector3;
use teleop_core::bus::capture::read_log;
use teleop_core::bus::{topics, BusMessage, Topic};
use teleop_core::clock::secs_to_nanos;
use teleop_core::recorder::{read_episode, write_episode, Episode, EpisodeStatus, RECORD_PERIOD_NS};
use teleop_core::rig::{default_end_zone_pose, Rig, RigDescription};
use teleop_core::simdev::{episode_script, still_episode, LeaderSource};
use teleop_core::teleop::{run_virtual, SimSetup, TeleopOptions};

fn criterion(n: u8, name: &str, check: impl FnOnce() -> String) {
    let outcome = catch_unwind(AssertUnwindSafe(check));
    let line = match &outcome {
        Ok(summary) => format!("criterion {n} PASS {name}: {summary}"),
        Err(e) => {
            let msg = e
                .downcast_ref::<String>()
                .map(String::as_str)
                .or_else(|| e.downcast_ref::<&str>().copied())
                .unwrap_or("panicked");
            format!("criterion {n} FAIL {name}: {msg}")
        }
    };
    // Written past the test harness capture so the verdict is always visible.
    let mut out = std::io::stdout().lock();
    writeln!(out, "{line}").unwrap();
    out.flush().unwrap();
    if let Err(e) = outcome {
        resume_unwind(e);
    }
}

fn rate(stamps: &[u64]) -> f64 {
    assert!(stamps.len() > 1, "too few samples");
    (stamps.len() - 1) as f64 / ((stamps[stamps.len() - 1] - stamps[0]) as f64 * 1e-9)
}

fn topic_stamps(msgs: &[BusMessage], topic: &Topic) -> Vec<u64> {
    msgs.iter().filter(|m| &m.topic == topic).map(|m| m.stamp).collect()
}

fn assert_record_grid(ep: &Episode) {
    for r in &ep.records {
        assert_eq!((ep.record_stamp(r) - ep.manifest.start_stamp_ns) % RECORD_PERIOD_NS, 0);
    }
}

fn distinct_frames(ep: &Episode, camera_id: u8) -> usize {
    ep.records
        .iter()
        .flat_map(|r| &r.frames)
        .filter(|f| f.camera_id == camera_id)
        .map(|f| f.frame_index)
        .collect::<BTreeSet<_>>()
        .len()
}

fn run_args<'a>(script: &'a str, root: &'a str, extra: &[&'a str]) -> Vec<&'a str> {
    let mut v = vec!["run", "--scripted", script, "--headless", "--root", root];
    v.extend_from_slice(extra);
    v
}

fn run_ok(args: &[&str]) -> String {
    let o = teleop(args);
    assert!(o.status.success(), "{args:?} failed: {}{}", stdout(&o), stderr(&o));
    stdout(&o)
}

#[test]
fn rate_contract() {
    criterion(1, "rate contract", || {
        let rig = Arc::new(Rig::desk_default());
        let script = episode_script(
            rig.ready(),
            &rig.desc.gesture,
            SETTLE,
            &[still_episode(default_end_zone_pose(), 10.0)],
        )
        .unwrap();

        // Virtual clock, in process, with every bus message captured.
        let began = Instant::now();
        let end = secs_to_nanos(script.duration() + 1.0);
        let out = run_virtual(
            SimSetup {
                rig: rig.clone(),
                leader: LeaderSource::Script {
                    script: script.clone(),
                    start_ns: 0,
                },
                seed: 0,
                opts: TeleopOptions::default(),
            },
            end,
            true,
        );
        let virtual_secs = began.elapsed().as_secs_f64();
        assert!(virtual_secs < 1.0, "virtual run took {virtual_secs:.3} s");
        let ep = out.episodes[0].episode.as_ref().expect("episode kept in memory");
        assert!(ep.records.len().abs_diff(500) <= 1, "{} records", ep.records.len());
        assert_record_grid(ep);
        for topic in [topics::LEADER_JOINT_STATES, topics::FOLLOWER_JOINT_STATES] {
            let hz = rate(&topic_stamps(&out.capture, &Topic::new(topic).unwrap()));
            assert!((hz - 125.0).abs() <= 1.25, "{topic} at {hz} Hz");
        }
        let mut camera_rates = Vec::new();
        for cam in 0..rig.desc.camera_count {
            let hz = rate(&topic_stamps(&out.capture, &Topic::camera(cam)));
            assert!((hz - 30.0).abs() <= 1.0, "camera {cam} at {hz} Hz");
            camera_rates.push(hz);
        }

        // Same script through the binary on the virtual clock.
        let tmp = tempfile::tempdir().unwrap();
        let script_path = write_script(tmp.path(), "ten.json", &script);
        let root = tmp.path().join("virtual");
        let began = Instant::now();
        run_ok(&run_args(path_str(&script_path), path_str(&root), &["--virtual-clock"]));
        let cli_virtual = began.elapsed().as_secs_f64();
        assert!(cli_virtual < 1.0, "virtual-clock run took {cli_virtual:.3} s");
        let ep = read_episode(&root.join("000000")).unwrap();
        assert!(ep.records.len().abs_diff(500) <= 1);

        // Real time. A shorter transit and settle keep the whole run under 15 s.
        let mut desc = RigDescription::desk_default();
        desc.gesture.transit_duration = 0.5;
        let rig_path = tmp.path().join("quick.toml");
        fs::write(&rig_path, desc.to_toml()).unwrap();
        let quick = episode_script(
            desc.ready_pose.pair(),
            &desc.gesture,
            1.0,
            &[still_episode(default_end_zone_pose(), 10.0)],
        )
        .unwrap();
        let quick_path = write_script(tmp.path(), "quick.json", &quick);
        let root = tmp.path().join("real");
        let log = tmp.path().join("leader.tbag");
        // Following begins at 1.0 + 0.08 + 1.0 + 0.5 s and lasts 10 s.
        let began = Instant::now();
        run_ok(&run_args(
            path_str(&quick_path),
            path_str(&root),
            &["--rig", path_str(&rig_path), "--duration", "12.9", "--capture", path_str(&log)],
        ));
        let real_secs = began.elapsed().as_secs_f64();
        assert!(real_secs < 15.0, "real-time run took {real_secs:.2} s");
        let ep = read_episode(&root.join("000000")).unwrap();
        assert_eq!(ep.manifest.status, EpisodeStatus::Complete);
        assert!(ep.records.len().abs_diff(500) <= 1, "{} records in real time", ep.records.len());
        assert_record_grid(&ep);
        let span = ep.duration_secs();
        for cam in 0..desc.camera_count {
            let hz = (distinct_frames(&ep, cam) - 1) as f64 / span;
            assert!((hz - 30.0).abs() <= 1.0, "real-time camera {cam} at {hz} Hz");
        }
        let leader: Vec<u64> = read_log(&log).unwrap().iter().map(|m| m.stamp).collect();
        let leader_hz = rate(&leader);
        assert!((leader_hz - 125.0).abs() <= 1.25, "real-time leader at {leader_hz} Hz");

        format!(
            "500±1 records; joint states 125 Hz; cameras {:.2}/{:.2}/{:.2} Hz; virtual {:.3} s in process, {:.3} s via CLI; real time {:.1} s",
            camera_rates[0], camera_rates[1], camera_rates[2], virtual_secs, cli_virtual, real_secs
        )
    });
}

#[test]
fn gesture_timing() {
    criterion(2, "gesture timing", || support::session::reference_fsm(10_000));
}

#[test]
fn safety_gating() {
    criterion(3, "safety gating", support::gating::collision_course);
}

#[test]
fn kinematics_oracle() {
    criterion(4, "kinematics oracle", || {
        format!(
            "{}; {}",
            support::kinematics::forward_kinematics(1000),
            support::kinematics::scaled_leader(1000)
        )
    });
}

#[test]
fn collision_oracle() {
    criterion(5, "collision oracle", || support::collision::capsule_distance_sampling(1000));
}

fn tree_bytes(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

#[test]
fn determinism_and_persistence() {
    criterion(6, "determinism and persistence", || {
        let rig = Rig::desk_default();
        let tmp = tempfile::tempdir().unwrap();
        let script = write_script(tmp.path(), "swing.json", &support::gating::collision_script(&rig));
        let log = tmp.path().join("leader.tbag");
        let live = tmp.path().join("live");
        run_ok(&run_args(
            path_str(&script),
            path_str(&live),
            &["--virtual-clock", "--capture", path_str(&log)],
        ));
        let replay = |name: &str| {
            let root = tmp.path().join(name);
            run_ok(&[
                "run",
                "--leader-log",
                path_str(&log),
                "--virtual-clock",
                "--headless",
                "--root",
                path_str(&root),
            ]);
            tree_bytes(&root)
        };
        let (a, b) = (replay("a"), replay("b"));
        assert!(a.keys().any(|p| p.ends_with("records.tbr")), "no episode written");
        assert_eq!(a.keys().collect::<Vec<_>>(), b.keys().collect::<Vec<_>>());
        for (path, bytes) in &a {
            assert!(b[path] == *bytes, "{} differs between replays", path.display());
        }
        let bytes: usize = a.values().map(Vec::len).sum();
        format!(
            "two leader-log replays byte-identical ({} files, {bytes} bytes); {}",
            a.len(),
            support::persistence::round_trip(1000)
        )
    });
}

#[test]
fn synchronization_oracle() {
    criterion(7, "synchronization oracle", || {
        format!(
            "{}; {}",
            support::zoh::stream_lookup(10_000),
            support::zoh::record_selection(10_000)
        )
    });
}

fn read_csv(path: &Path) -> Vec<BTreeMap<String, String>> {
    let mut r = csv::Reader::from_path(path).unwrap();
    let headers = r.headers().unwrap().clone();
    r.records()
        .map(|rec| {
            let rec = rec.unwrap();
            headers.iter().zip(rec.iter()).map(|(h, v)| (h.to_owned(), v.to_owned())).collect()
        })
        .collect()
}

#[test]
fn interaction_point_analysis() {
    criterion(8, "interaction-point analysis", || {
        let rig = Rig::desk_default();
        let tmp = tempfile::tempdir().unwrap();
        let root = tmp.path().join("episodes");
        let jitter = [
            Vector3::new(0.0, 0.0, 0.0),
            Vector3::new(0.01, 0.01, -0.01),
            Vector3::new(-0.01, -0.01, 0.01),
            Vector3::new(0.005, -0.005, 0.0),
        ];
        let offset = Vector3::new(0.1, 0.0, 0.0);
        let base = Vector3::new(0.3, 0.0, 0.2);
        for (label, centre) in [("bench-a", base), ("bench-b", base + offset)] {
            let mids: Vec<_> = jitter.iter().map(|j| centre + j).collect();
            let script = write_script(tmp.path(), &format!("{label}.json"), &handover_script(&rig, &mids));
            let out = run_ok(&run_args(
                path_str(&script),
                path_str(&root),
                &["--virtual-clock", "--location", label],
            ));
            assert!(out.contains(", 0 gated"), "handover was gated:\n{out}");
        }
        let groups = tmp.path().join("groups.csv");
        let per_episode = tmp.path().join("episodes.csv");
        let o = teleop(&[
            "analyze",
            path_str(&root),
            "--group-by",
            "location",
            "--out",
            path_str(&per_episode),
            "--groups",
            path_str(&groups),
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        let rows = read_csv(&per_episode);
        assert_eq!(rows.len(), 8);
        assert!(rows.iter().all(|r| r["status"] == "interaction"));
        let g = read_csv(&groups);
        assert_eq!(g.len(), 2);
        let mean = |row: &BTreeMap<String, String>| {
            Vector3::new(
                row["mean_x"].parse::<f64>().unwrap(),
                row["mean_y"].parse::<f64>().unwrap(),
                row["mean_z"].parse::<f64>().unwrap(),
            )
        };
        let (a, b) = (mean(&g[0]), mean(&g[1]));
        assert_eq!((g[0]["group"].as_str(), g[1]["group"].as_str()), ("bench-a", "bench-b"));
        assert_eq!((g[0]["count"].as_str(), g[1]["count"].as_str()), ("4", "4"));
        let separation = (b - a).norm();
        assert!((separation - 0.1).abs() <= 1e-3, "group means {separation} m apart");
        assert!((b - a - offset).norm() <= 1e-3, "offset direction {:?}", b - a);
        format!("8 handover episodes in 2 groups; group means {separation:.6} m apart")
    });
}

type Corruption = (&'static str, fn(&mut Episode));

#[test]
fn end_to_end_validation() {
    criterion(9, "end-to-end validation", || {
        let rig = Rig::desk_default();
        let tmp = tempfile::tempdir().unwrap();
        let root = tmp.path().join("episodes");
        let plans: Vec<_> = (0..20)
            .map(|i| {
                if i % 2 == 0 {
                    still_episode(default_end_zone_pose(), 3.0 + 0.1 * i as f64)
                } else {
                    let m = Vector3::new(0.3 + 0.005 * i as f64, 0.0, 0.2);
                    handover_plan(&rig, m)
                }
            })
            .collect();
        let script = episode_script(rig.ready(), &rig.desc.gesture, SETTLE, &plans).unwrap();
        let script = write_script(tmp.path(), "twenty.json", &script);
        let out = run_ok(&run_args(path_str(&script), path_str(&root), &["--virtual-clock"]));
        assert!(out.contains("20 episodes written"), "{out}");
        let o = teleop(&["validate", path_str(&root)]);
        assert!(o.status.success(), "{}", stdout(&o));
        assert!(stdout(&o).contains("20 episodes, 0 failed"));

        let source = root.join("000003");
        let clean = read_episode(&source).unwrap();
        let record_corruptions: Vec<Corruption> = vec![
            ("GridViolation", |e| e.records[5].t += 0.003),
            ("NonMonotonic", |e| {
                let t = e.records[5].t;
                e.records[6].t = t;
            }),
            ("LimitViolation", |e| e.records[5].obs[0].position[3] = 3.0),
            ("DanglingFrame", |e| e.records[5].frames[0].frame_index = 1 << 40),
            ("FutureFrame", |e| {
                let s = e.record_stamp(&e.records[5]);
                e.records[5].frames[1].frame_stamp = s + 1;
            }),
            ("NonFiniteAction", |e| e.records[5].action[1].angles[0] = f64::NAN),
            ("NonFiniteObservation", |e| e.records[5].obs[1].velocity[2] = f64::INFINITY),
            ("UnknownFeedbackCause", |e| e.records[5].feedback_cause = 9),
            ("GatedFlagMismatch", |e| e.records[5].gated = !e.records[5].gated),
            ("RecordCount", |e| {
                let n = e.records.len() - 10;
                e.records.truncate(n);
            }),
        ];
        let bad_root = tmp.path().join("corrupt");
        let mut planted = Vec::new();
        for (i, (class, corrupt)) in record_corruptions.iter().enumerate() {
            let mut ep = clean.clone();
            ep.manifest.episode_id = 100 + i as u64;
            corrupt(&mut ep);
            let dir = write_episode(&ep, &bad_root).unwrap();
            planted.push((*class, dir));
        }
        let file_corruptions: [(&str, fn(&Path)); 3] = [
            ("ChecksumMismatch", |d| {
                let p = d.join("records.tbr");
                let mut b = fs::read(&p).unwrap();
                b[12 + 8 * 3] ^= 0x40;
                fs::write(p, b).unwrap();
            }),
            ("TruncatedRecords", |d| {
                let p = d.join("records.tbr");
                let b = fs::read(&p).unwrap();
                fs::write(p, &b[..b.len() - 7]).unwrap();
            }),
            ("MissingManifest", |d| fs::remove_file(d.join("manifest.json")).unwrap()),
        ];
        for (i, (class, corrupt)) in file_corruptions.iter().enumerate() {
            let dir = bad_root.join(format!("file-{i}"));
            copy_dir(&source, &dir);
            corrupt(&dir);
            planted.push((*class, dir));
        }
        for (class, dir) in &planted {
            let o = teleop(&["validate", path_str(dir)]);
            let text = stdout(&o);
            assert_eq!(o.status.code(), Some(1), "{class} not detected:\n{text}{}", stderr(&o));
            assert!(text.contains(&format!("{class}:")), "{class} not reported:\n{text}");
        }
        let o = teleop(&["validate", path_str(&source)]);
        assert!(o.status.success(), "source episode changed");
        let classes: Vec<_> = planted.iter().map(|(c, _)| *c).collect();
        format!(
            "20 episodes clean; {} corrupted copies each rejected with their class ({})",
            planted.len(),
            classes.join(", ")
        )
    });
}

fn copy_dir(from: &Path, to: &Path) {
    for (rel, bytes) in tree_bytes(from) {
        let dest = to.join(rel);
        fs::create_dir_all(dest.parent().unwrap()).unwrap();
        fs::write(dest, bytes).unwrap();
    }
}
