//! Self-collision gating of follower commands and operator feedback.

use std::cmp::Ordering;
use std::fmt;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kinematics::{ArmModel, Capsule, JointVector, JOINT_COUNT};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SafetyConfigError {
    #[error("margin must be finite and >= 0, got {0}")]
    Margin(f64),
    #[error("need 0 <= deadband < saturation, got deadband {deadband}, saturation {saturation}")]
    Ramp { deadband: f64, saturation: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SafetyConfig {
    /// Meters. A pair closer than this counts as colliding.
    pub margin: f64,
    /// Radians of tracking error ignored by the feedback ramp.
    pub deadband: f64,
    /// Radians of tracking error at which feedback saturates.
    pub saturation: f64,
}

impl Default for SafetyConfig {
    fn default() -> Self {
        Self {
            margin: 0.02,
            deadband: 0.05,
            saturation: 0.5,
        }
    }
}

impl SafetyConfig {
    pub fn validate(&self) -> Result<(), SafetyConfigError> {
        if !(self.margin >= 0.0 && self.margin.is_finite()) {
            return Err(SafetyConfigError::Margin(self.margin));
        }
        if !(self.deadband >= 0.0 && self.deadband < self.saturation && self.saturation.is_finite()) {
            return Err(SafetyConfigError::Ramp {
                deadband: self.deadband,
                saturation: self.saturation,
            });
        }
        Ok(())
    }
}

/// Static capsule in the rig frame (suitcase body, camera stand, ...).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BodyCapsule {
    pub a: Vector3<f64>,
    pub b: Vector3<f64>,
    pub radius: f64,
}

impl From<BodyCapsule> for Capsule {
    fn from(c: BodyCapsule) -> Self {
        Capsule::new(c.a, c.b, c.radius)
    }
}

/// Both follower arms plus static body proxies.
#[derive(Debug, Clone, PartialEq)]
pub struct DualArm {
    pub left: ArmModel,
    pub right: ArmModel,
    pub body: Vec<Capsule>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum CapsuleId {
    Left(usize),
    Right(usize),
    Body(usize),
}

impl fmt::Display for CapsuleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CapsuleId::Left(i) => write!(f, "left[{i}]"),
            CapsuleId::Right(i) => write!(f, "right[{i}]"),
            CapsuleId::Body(i) => write!(f, "body[{i}]"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CollisionReport {
    pub colliding: bool,
    /// Smallest surface distance over all checked pairs; `+inf` if none were checked.
    pub min_distance: f64,
    pub worst_pair: Option<(CapsuleId, CapsuleId)>,
    pub margin: f64,
}

impl CollisionReport {
    pub fn clear(margin: f64) -> Self {
        Self {
            colliding: false,
            min_distance: f64::INFINITY,
            worst_pair: None,
            margin,
        }
    }
}

fn key(c: &Capsule) -> [u64; 7] {
    [
        c.a.x.to_bits(),
        c.a.y.to_bits(),
        c.a.z.to_bits(),
        c.b.x.to_bits(),
        c.b.y.to_bits(),
        c.b.z.to_bits(),
        c.radius.to_bits(),
    ]
}

/// Surface distance between two capsules; negative means penetration.
///
/// Exactly symmetric: the pair is put into a canonical order first.
pub fn capsule_distance(a: &Capsule, b: &Capsule) -> f64 {
    let (first, second) = match key(a).cmp(&key(b)) {
        Ordering::Greater => (b, a),
        _ => (a, b),
    };
    segment_distance(&first.a, &first.b, &second.a, &second.b) - (a.radius + b.radius)
}

/// Closest distance between segments `p1q1` and `p2q2`.
pub fn segment_distance(
    p1: &Vector3<f64>,
    q1: &Vector3<f64>,
    p2: &Vector3<f64>,
    q2: &Vector3<f64>,
) -> f64 {
    let d1 = q1 - p1;
    let d2 = q2 - p2;
    let r = p1 - p2;
    let a = d1.dot(&d1);
    let e = d2.dot(&d2);
    let f = d2.dot(&r);
    const EPS: f64 = 1e-18;

    let (s, t) = if a <= EPS && e <= EPS {
        (0.0, 0.0)
    } else if a <= EPS {
        (0.0, (f / e).clamp(0.0, 1.0))
    } else {
        let c = d1.dot(&r);
        if e <= EPS {
            ((-c / a).clamp(0.0, 1.0), 0.0)
        } else {
            let b = d1.dot(&d2);
            let denom = a * e - b * b;
            let mut s = if denom > EPS {
                ((b * f - c * e) / denom).clamp(0.0, 1.0)
            } else {
                0.0
            };
            let mut t = (b * s + f) / e;
            if t < 0.0 {
                t = 0.0;
                s = (-c / a).clamp(0.0, 1.0);
            } else if t > 1.0 {
                t = 1.0;
                s = ((b - c) / a).clamp(0.0, 1.0);
            }
            (s, t)
        }
    };
    let c1 = p1 + d1 * s;
    let c2 = p2 + d2 * t;
    (c1 - c2).norm()
}

fn arm_capsules(model: &ArmModel, q: &JointVector) -> Vec<(usize, Capsule)> {
    model
        .capsules
        .iter()
        .map(|c| c.link)
        .zip(model.capsule_poses(q))
        .collect()
}

/// Check inter-arm pairs, each arm against the body proxies, and non-adjacent
/// intra-arm pairs. Capsules on the same or neighbouring links are skipped.
pub fn check_self_collision(
    rig: &DualArm,
    q_left: &JointVector,
    q_right: &JointVector,
    margin: f64,
) -> CollisionReport {
    let left = arm_capsules(&rig.left, q_left);
    let right = arm_capsules(&rig.right, q_right);

    let mut report = CollisionReport::clear(margin);
    let mut consider = |d: f64, pair: (CapsuleId, CapsuleId)| {
        if d < report.min_distance {
            report.min_distance = d;
            report.worst_pair = Some(pair);
        }
    };

    for (i, (_, a)) in left.iter().enumerate() {
        for (j, (_, b)) in right.iter().enumerate() {
            consider(capsule_distance(a, b), (CapsuleId::Left(i), CapsuleId::Right(j)));
        }
    }
    for (k, body) in rig.body.iter().enumerate() {
        for (i, (_, a)) in left.iter().enumerate() {
            consider(capsule_distance(a, body), (CapsuleId::Left(i), CapsuleId::Body(k)));
        }
        for (j, (_, b)) in right.iter().enumerate() {
            consider(capsule_distance(b, body), (CapsuleId::Right(j), CapsuleId::Body(k)));
        }
    }
    for (caps, id) in [
        (&left, CapsuleId::Left as fn(usize) -> CapsuleId),
        (&right, CapsuleId::Right as fn(usize) -> CapsuleId),
    ] {
        for i in 0..caps.len() {
            for j in (i + 1)..caps.len() {
                let (li, ci) = &caps[i];
                let (lj, cj) = &caps[j];
                if li.abs_diff(*lj) <= 1 {
                    continue;
                }
                consider(capsule_distance(ci, cj), (id(i), id(j)));
            }
        }
    }

    report.colliding = report.min_distance < margin;
    report
}

/// Output of [`gate_command`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gated {
    pub command: [JointVector; 2],
    pub gated: bool,
}

/// Freeze at the last safe command when the candidate is colliding.
pub fn gate_command(
    report: &CollisionReport,
    candidate: &[JointVector; 2],
    last_safe: &[JointVector; 2],
) -> Gated {
    if report.colliding {
        Gated {
            command: *last_safe,
            gated: true,
        }
    } else {
        Gated {
            command: *candidate,
            gated: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum FeedbackCause {
    #[default]
    None,
    Collision,
    JointLimit,
    TrackingLag,
}

impl FeedbackCause {
    pub fn code(self) -> u8 {
        match self {
            FeedbackCause::None => 0,
            FeedbackCause::Collision => 1,
            FeedbackCause::JointLimit => 2,
            FeedbackCause::TrackingLag => 3,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            0 => FeedbackCause::None,
            1 => FeedbackCause::Collision,
            2 => FeedbackCause::JointLimit,
            3 => FeedbackCause::TrackingLag,
            _ => return None,
        })
    }
}

/// Normalized per-joint feedback for both arms.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FeedbackSignal {
    pub magnitudes: [[f64; JOINT_COUNT]; 2],
    pub cause: FeedbackCause,
}

impl FeedbackSignal {
    pub fn quiet() -> Self {
        Self::default()
    }
}

/// Linear ramp from `deadband` (0) to `saturation` (1) on `|error|`.
pub fn feedback_magnitude(error: f64, deadband: f64, saturation: f64) -> f64 {
    ((error.abs() - deadband) / (saturation - deadband)).clamp(0.0, 1.0)
}

pub fn compute_feedback(
    errors: &[[f64; JOINT_COUNT]; 2],
    report: &CollisionReport,
    limits_hit: &[[bool; JOINT_COUNT]; 2],
    deadband: f64,
    saturation: f64,
) -> FeedbackSignal {
    let mut magnitudes: [[f64; JOINT_COUNT]; 2] = std::array::from_fn(|arm| {
        std::array::from_fn(|j| feedback_magnitude(errors[arm][j], deadband, saturation))
    });
    let any_limit = limits_hit.iter().flatten().any(|&h| h);
    let any_lag = magnitudes.iter().flatten().any(|&m| m > 0.0);
    let cause = if report.colliding {
        FeedbackCause::Collision
    } else if any_limit {
        FeedbackCause::JointLimit
    } else if any_lag {
        FeedbackCause::TrackingLag
    } else {
        FeedbackCause::None
    };
    if cause == FeedbackCause::None {
        magnitudes = [[0.0; JOINT_COUNT]; 2];
    }
    FeedbackSignal { magnitudes, cause }
}
