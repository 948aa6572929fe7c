#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use nalgebra::{SMatrix, Vector3};
use teleop_core::kinematics::{ArmModel, JointVector, JOINT_COUNT};
use teleop_core::rig::{default_end_zone_pose, Rig};
use teleop_core::safety::check_self_collision;
use teleop_core::simdev::{episode_script, still_episode, EpisodePlan, LeaderScript};

pub const BIN: &str = env!("CARGO_BIN_EXE_teleop-rig");

pub fn teleop(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

pub fn path_str(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

pub fn write_script(dir: &Path, name: &str, script: &LeaderScript) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, script.to_json()).unwrap();
    path
}

/// Settle time before the first gesture so the followers reach the ready pose.
pub const SETTLE: f64 = 1.5;

/// Episodes that hold the leaders still and then stop in the end zone.
pub fn still_script(rig: &Rig, episodes: usize, follow_secs: f64) -> LeaderScript {
    let plans = vec![still_episode(default_end_zone_pose(), follow_secs); episodes];
    episode_script(rig.ready(), &rig.desc.gesture, SETTLE, &plans).unwrap()
}

type Jacobian = SMatrix<f64, 3, JOINT_COUNT>;

fn jacobian(model: &ArmModel, q: &JointVector) -> Jacobian {
    let h = 1e-7;
    let mut j = Jacobian::zeros();
    for i in 0..JOINT_COUNT {
        let (mut plus, mut minus) = (*q, *q);
        plus.angles[i] += h;
        minus.angles[i] -= h;
        let d = (model.end_effector(&plus).translation - model.end_effector(&minus).translation) / (2.0 * h);
        j.set_column(i, &d);
    }
    j
}

/// Damped least-squares position IK with a null-space pull toward `nominal`.
pub fn solve_position(model: &ArmModel, target: Vector3<f64>, nominal: JointVector) -> JointVector {
    let mut q = nominal;
    for _ in 0..2000 {
        let err = target - model.end_effector(&q).translation;
        if err.norm() < 1e-12 {
            break;
        }
        let j = jacobian(model, &q);
        let jjt = j * j.transpose() + SMatrix::<f64, 3, 3>::identity() * 1e-8;
        let pinv = j.transpose() * jjt.try_inverse().expect("invertible");
        let null = SMatrix::<f64, JOINT_COUNT, JOINT_COUNT>::identity() - pinv * j;
        let bias = SMatrix::<f64, JOINT_COUNT, 1>::from_fn(|i, _| nominal.angles[i] - q.angles[i]);
        let pull = if err.norm() > 1e-6 { 0.05 } else { 0.0 };
        let mut step = pinv * err + null * bias * pull;
        let n = step.norm();
        if n > 0.2 {
            step *= 0.2 / n;
        }
        for i in 0..JOINT_COUNT {
            q.angles[i] += step[i];
        }
        q = model.clamp_to_limits(&q);
    }
    let residual = (target - model.end_effector(&q).translation).norm();
    assert!(residual < 1e-9, "IK did not converge: {residual}");
    q
}

/// Follower poses placing the end-effectors `separation` apart along y,
/// centred on `midpoint`, grippers pointing down.
pub fn handover_pair(rig: &Rig, midpoint: Vector3<f64>, separation: f64) -> [JointVector; 2] {
    let [left, right] = rig.follower_models();
    let half = Vector3::new(0.0, separation / 2.0, 0.0);
    let nominal = |yaw: f64| JointVector::new([yaw, 0.7, 0.0, 1.4, 0.0, 0.9, 0.0], 1.0);
    let pair = [
        solve_position(&left, midpoint + half, nominal(-0.4)),
        solve_position(&right, midpoint - half, nominal(0.4)),
    ];
    let report = check_self_collision(&rig.followers, &pair[0], &pair[1], rig.desc.safety.margin);
    assert!(!report.colliding, "handover pose collides: {report:?}");
    pair
}

pub const HANDOVER_SEPARATION: f64 = 0.12;

/// One handover plan: approach, hold, retreat to ready, stop in the end zone.
pub fn handover_plan(rig: &Rig, midpoint: Vector3<f64>) -> EpisodePlan {
    let pose = handover_pair(rig, midpoint, HANDOVER_SEPARATION);
    let moves = vec![(pose, 2.5), (pose, 1.0), (rig.ready(), 2.0)];
    let end_move = 1.5;
    let busy: f64 = moves.iter().map(|(_, s)| s).sum::<f64>() + end_move;
    EpisodePlan {
        moves,
        end_pose: default_end_zone_pose(),
        end_move,
        follow_secs: busy + 1.5,
    }
}

pub fn handover_script(rig: &Rig, midpoints: &[Vector3<f64>]) -> LeaderScript {
    let plans: Vec<_> = midpoints.iter().map(|m| handover_plan(rig, *m)).collect();
    episode_script(rig.ready(), &rig.desc.gesture, SETTLE, &plans).unwrap()
}
