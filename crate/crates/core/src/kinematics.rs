//! Kinematic model of a 7-DoF serial arm with a parallel-jaw gripper.
//!
//! Every joint is revolute. A link carries the fixed transform from the
//! parent joint frame to the next joint frame, followed by the joint's own
//! rotation about its axis. Frame 0 is the arm base in the rig frame and
//! frame 7 is the end-effector.

use nalgebra::{Point3, Unit, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Number of revolute joints per arm.
pub const JOINT_COUNT: usize = 7;

/// Number of frames returned by forward kinematics (base plus one per joint).
pub const FRAME_COUNT: usize = JOINT_COUNT + 1;

const UNIT_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("joint {joint}: lower limit {lower} is not below upper limit {upper}")]
    InvertedLimit { joint: usize, lower: f64, upper: f64 },
    #[error("gripper limits ({closed}, {open}) must satisfy 0 <= closed < open <= 1")]
    GripperLimits { closed: f64, open: f64 },
    #[error("joint {joint}: axis is not unit length (norm {norm})")]
    AxisNotUnit { joint: usize, norm: f64 },
    #[error("capsule {index}: radius {radius} must be positive")]
    CapsuleRadius { index: usize, radius: f64 },
    #[error("capsule {index}: link index {link} is out of range 0..={max}")]
    CapsuleLink { index: usize, link: usize, max: usize },
    #[error("{what}: value is not finite")]
    NonFinite { what: String },
}

/// Joint angles of one arm plus the normalized gripper aperture.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointVector {
    pub angles: [f64; JOINT_COUNT],
    pub gripper: f64,
}

impl JointVector {
    pub const fn new(angles: [f64; JOINT_COUNT], gripper: f64) -> Self {
        Self { angles, gripper }
    }

    pub const fn zeros() -> Self {
        Self {
            angles: [0.0; JOINT_COUNT],
            gripper: 0.0,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.angles.iter().all(|a| a.is_finite()) && self.gripper.is_finite()
    }

    /// Largest absolute joint-angle difference (gripper excluded).
    pub fn max_joint_distance(&self, other: &JointVector) -> f64 {
        self.angles
            .iter()
            .zip(other.angles.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

impl Default for JointVector {
    fn default() -> Self {
        Self::zeros()
    }
}

/// A rigid transform with a unit-quaternion rotation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TransformRepr", into = "TransformRepr")]
pub struct RigidTransform {
    pub translation: Vector3<f64>,
    pub rotation: UnitQuaternion<f64>,
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            translation: Vector3::zeros(),
            rotation: UnitQuaternion::identity(),
        }
    }

    pub fn from_translation(x: f64, y: f64, z: f64) -> Self {
        Self {
            translation: Vector3::new(x, y, z),
            rotation: UnitQuaternion::identity(),
        }
    }

    pub fn from_rotation(rotation: UnitQuaternion<f64>) -> Self {
        Self {
            translation: Vector3::zeros(),
            rotation,
        }
    }

    pub fn new(translation: Vector3<f64>, rotation: UnitQuaternion<f64>) -> Self {
        Self {
            translation,
            rotation,
        }
    }

    /// `self ∘ other`: apply `other` first, then `self`. The result is renormalized.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        let mut rotation = self.rotation * other.rotation;
        rotation.renormalize();
        RigidTransform {
            translation: self.translation + self.rotation * other.translation,
            rotation,
        }
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.translation + self.rotation * p
    }

    pub fn position(&self) -> Point3<f64> {
        Point3::from(self.translation)
    }
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

/// Serialized form: translation `[x, y, z]` and rotation `[w, x, y, z]`.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TransformRepr {
    translation: [f64; 3],
    #[serde(default = "identity_wxyz")]
    rotation: [f64; 4],
}

fn identity_wxyz() -> [f64; 4] {
    [1.0, 0.0, 0.0, 0.0]
}

impl TryFrom<TransformRepr> for RigidTransform {
    type Error = String;

    fn try_from(r: TransformRepr) -> Result<Self, Self::Error> {
        if r.translation.iter().chain(r.rotation.iter()).any(|v| !v.is_finite()) {
            return Err("transform contains a non-finite value".into());
        }
        let q = nalgebra::Quaternion::new(r.rotation[0], r.rotation[1], r.rotation[2], r.rotation[3]);
        let norm = q.norm();
        // Hand-written files carry a handful of digits; anything further off is a typo.
        if (norm - 1.0).abs() > 1e-6 {
            return Err(format!("rotation quaternion has norm {norm}, expected 1"));
        }
        Ok(RigidTransform {
            translation: Vector3::from(r.translation),
            rotation: if (norm - 1.0).abs() <= 4.0 * f64::EPSILON {
                UnitQuaternion::new_unchecked(q)
            } else {
                UnitQuaternion::from_quaternion(q)
            },
        })
    }
}

impl From<RigidTransform> for TransformRepr {
    fn from(t: RigidTransform) -> Self {
        let q = t.rotation.quaternion();
        TransformRepr {
            translation: [t.translation.x, t.translation.y, t.translation.z],
            rotation: [q.w, q.i, q.j, q.k],
        }
    }
}

/// Fixed transform from the parent joint frame to this joint, plus the joint axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkSpec {
    pub origin: RigidTransform,
    pub axis: Vector3<f64>,
}

impl LinkSpec {
    fn joint_rotation(&self, angle: f64) -> UnitQuaternion<f64> {
        UnitQuaternion::from_axis_angle(&Unit::new_unchecked(self.axis), angle)
    }
}

/// Capsule attached to one kinematic frame, endpoints in that frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CapsuleSpec {
    /// Index into the forward-kinematics frames (0 = base, 7 = end-effector).
    pub link: usize,
    pub a: Vector3<f64>,
    pub b: Vector3<f64>,
    pub radius: f64,
}

/// A capsule in the rig frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Capsule {
    pub a: Vector3<f64>,
    pub b: Vector3<f64>,
    pub radius: f64,
}

impl Capsule {
    pub fn new(a: Vector3<f64>, b: Vector3<f64>, radius: f64) -> Self {
        Self { a, b, radius }
    }

    pub fn length(&self) -> f64 {
        (self.b - self.a).norm()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArmModel {
    pub name: String,
    pub links: [LinkSpec; JOINT_COUNT],
    /// `(lower, upper)` in radians, closed interval.
    pub joint_limits: [(f64, f64); JOINT_COUNT],
    /// `(closed, open)` normalized aperture.
    pub gripper_limits: (f64, f64),
    pub base_pose: RigidTransform,
    pub capsules: Vec<CapsuleSpec>,
}

impl ArmModel {
    /// Desk-scale 7-DoF arm with alternating yaw/pitch axes and a 0.794 m
    /// reach from base to the last joint. Points straight up at zero angles.
    pub fn desk_default(name: impl Into<String>, base_pose: RigidTransform) -> Self {
        const LENGTHS: [f64; JOINT_COUNT] = [0.10, 0.12, 0.14, 0.12, 0.12, 0.10, 0.094];
        const RADII: [f64; JOINT_COUNT] = [0.035, 0.035, 0.035, 0.03, 0.03, 0.025, 0.025];
        let yaw = Vector3::z();
        let pitch = Vector3::y();
        let links = std::array::from_fn(|i| LinkSpec {
            origin: RigidTransform::from_translation(0.0, 0.0, LENGTHS[i]),
            axis: if i % 2 == 0 { yaw } else { pitch },
        });
        let mut joint_limits = [(-std::f64::consts::PI, std::f64::consts::PI); JOINT_COUNT];
        joint_limits[3] = (-2.6, 2.6);

        // One capsule per segment between consecutive joint frames, plus the gripper.
        let mut capsules: Vec<CapsuleSpec> = (0..JOINT_COUNT)
            .map(|i| CapsuleSpec {
                link: i,
                a: Vector3::zeros(),
                b: Vector3::new(0.0, 0.0, LENGTHS[i]),
                radius: RADII[i],
            })
            .collect();
        capsules.push(CapsuleSpec {
            link: JOINT_COUNT,
            a: Vector3::zeros(),
            b: Vector3::new(0.0, 0.0, 0.06),
            radius: 0.025,
        });

        Self {
            name: name.into(),
            links,
            joint_limits,
            gripper_limits: (0.0, 1.0),
            base_pose,
            capsules,
        }
    }

    /// Uniformly scaled copy: link translations, capsule endpoints and radii
    /// are multiplied by `scale`. Rotations, axes, limits and base pose are kept.
    pub fn scaled(&self, scale: f64, name: impl Into<String>) -> Self {
        let mut out = self.clone();
        out.name = name.into();
        for link in out.links.iter_mut() {
            link.origin.translation *= scale;
        }
        for c in out.capsules.iter_mut() {
            c.a *= scale;
            c.b *= scale;
            c.radius *= scale;
        }
        out
    }

    pub fn with_base_pose(mut self, base_pose: RigidTransform) -> Self {
        self.base_pose = base_pose;
        self
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        for (i, &(lower, upper)) in self.joint_limits.iter().enumerate() {
            if !lower.is_finite() || !upper.is_finite() {
                return Err(ModelError::NonFinite {
                    what: format!("joint {i} limits"),
                });
            }
            if lower >= upper {
                return Err(ModelError::InvertedLimit { joint: i, lower, upper });
            }
        }
        let (closed, open) = self.gripper_limits;
        if !(0.0..=1.0).contains(&closed) || !(0.0..=1.0).contains(&open) || closed >= open {
            return Err(ModelError::GripperLimits { closed, open });
        }
        for (i, link) in self.links.iter().enumerate() {
            let norm = link.axis.norm();
            if (norm - 1.0).abs() > UNIT_TOLERANCE {
                return Err(ModelError::AxisNotUnit { joint: i, norm });
            }
            if !link.origin.translation.iter().all(|v| v.is_finite()) {
                return Err(ModelError::NonFinite {
                    what: format!("link {i} translation"),
                });
            }
        }
        for (i, c) in self.capsules.iter().enumerate() {
            if c.link > JOINT_COUNT {
                return Err(ModelError::CapsuleLink {
                    index: i,
                    link: c.link,
                    max: JOINT_COUNT,
                });
            }
            if !(c.radius > 0.0) || !c.radius.is_finite() {
                return Err(ModelError::CapsuleRadius {
                    index: i,
                    radius: c.radius,
                });
            }
        }
        Ok(())
    }

    /// Base frame followed by each joint frame; the last entry is the end-effector.
    pub fn forward_kinematics(&self, q: &JointVector) -> [RigidTransform; FRAME_COUNT] {
        let mut frames = [self.base_pose; FRAME_COUNT];
        for (k, (link, &angle)) in self.links.iter().zip(q.angles.iter()).enumerate() {
            let joint = RigidTransform::from_rotation(link.joint_rotation(angle));
            frames[k + 1] = frames[k].compose(&link.origin).compose(&joint);
        }
        frames
    }

    pub fn end_effector(&self, q: &JointVector) -> RigidTransform {
        self.forward_kinematics(q)[JOINT_COUNT]
    }

    /// True iff every angle and the gripper lie inside their closed intervals.
    pub fn within_limits(&self, q: &JointVector) -> bool {
        let joints_ok = q
            .angles
            .iter()
            .zip(self.joint_limits.iter())
            .all(|(&a, &(lo, hi))| a >= lo && a <= hi);
        let (closed, open) = self.gripper_limits;
        joints_ok && q.gripper >= closed && q.gripper <= open
    }

    /// Per-joint check; `true` marks a joint outside its interval.
    pub fn limit_violations(&self, q: &JointVector) -> [bool; JOINT_COUNT] {
        std::array::from_fn(|i| {
            let (lo, hi) = self.joint_limits[i];
            !(q.angles[i] >= lo && q.angles[i] <= hi)
        })
    }

    pub fn clamp_to_limits(&self, q: &JointVector) -> JointVector {
        let angles = std::array::from_fn(|i| {
            let (lo, hi) = self.joint_limits[i];
            q.angles[i].clamp(lo, hi)
        });
        let (closed, open) = self.gripper_limits;
        JointVector {
            angles,
            gripper: q.gripper.clamp(closed, open),
        }
    }

    /// Collision capsules placed by the forward-kinematics frame of their link.
    pub fn capsule_poses(&self, q: &JointVector) -> Vec<Capsule> {
        let frames = self.forward_kinematics(q);
        self.capsules
            .iter()
            .map(|c| {
                let frame = &frames[c.link];
                Capsule {
                    a: frame.transform_point(&c.a),
                    b: frame.transform_point(&c.b),
                    radius: c.radius,
                }
            })
            .collect()
    }
}
