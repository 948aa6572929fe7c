//! Rig description: both arms, leader mounts, retargeting, gestures, safety
//! and simulation parameters in one TOML file.

use std::fmt;
use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::kinematics::{ArmModel, Capsule, JointVector, RigidTransform};
use crate::retarget::RetargetConfig;
use crate::safety::{check_self_collision, BodyCapsule, DualArm, SafetyConfig};
use crate::session::{Aabb, GestureConfig, ReadyPose};
use crate::simdev::{CameraConfig, FollowerSimConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArmPair {
    pub left: ArmModel,
    pub right: ArmModel,
}

/// Leader devices are the follower arms scaled down and mounted separately.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LeaderMount {
    /// Leader link length / follower link length, in (0, 1].
    pub scale: f64,
    pub left_base: RigidTransform,
    pub right_base: RigidTransform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RigDescription {
    pub name: String,
    /// Teleop loop rate, Hz.
    pub tick_rate: f64,
    pub camera_count: u8,
    pub record_root: PathBuf,
    /// Seconds without a leader sample before the stream counts as lost.
    pub leader_timeout: f64,
    /// Max joint error (rad) at which followers count as at the ready pose.
    pub ready_tolerance: f64,
    pub home_pose: ReadyPose,
    pub ready_pose: ReadyPose,
    pub retarget: RetargetConfig,
    pub gesture: GestureConfig,
    pub safety: SafetyConfig,
    pub follower_sim: FollowerSimConfig,
    pub cameras: CameraConfig,
    pub leader: LeaderMount,
    pub body: Vec<BodyCapsule>,
    pub arms: ArmPair,
}

#[derive(Debug, Clone, PartialEq)]
pub enum RigError {
    Io(String),
    /// Syntax error, unknown key or wrong type.
    Parse(String),
    /// Semantically invalid value at `key`.
    Invalid {
        key: String,
        line: Option<usize>,
        message: String,
    },
}

impl fmt::Display for RigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RigError::Io(m) => write!(f, "cannot read rig file: {m}"),
            RigError::Parse(m) => write!(f, "invalid rig file: {m}"),
            RigError::Invalid {
                key,
                line: Some(line),
                message,
            } => write!(f, "invalid rig file: line {line}: `{key}`: {message}"),
            RigError::Invalid { key, message, .. } => {
                write!(f, "invalid rig file: `{key}`: {message}")
            }
        }
    }
}

impl std::error::Error for RigError {}

/// Best-effort 1-based line of a dotted key path in TOML source.
fn locate(text: &str, key: &str) -> Option<usize> {
    let parts: Vec<&str> = key.split('.').collect();
    let lines: Vec<&str> = text.lines().collect();
    let header_of = |path: &str| {
        lines.iter().position(|l| {
            let t = l.trim();
            t == format!("[{path}]") || t == format!("[[{path}]]")
        })
    };
    if let Some(h) = header_of(key) {
        return Some(h + 1);
    }
    for split in (0..parts.len()).rev() {
        let table = parts[..split].join(".");
        let field = parts[split];
        let start = if table.is_empty() {
            Some(0)
        } else {
            header_of(&table).map(|i| i + 1)
        };
        let Some(start) = start else { continue };
        for (i, l) in lines.iter().enumerate().skip(start) {
            let t = l.trim_start();
            if t.starts_with('[') {
                break;
            }
            if let Some(rest) = t.strip_prefix(field) {
                if rest.trim_start().starts_with('=') {
                    return Some(i + 1);
                }
            }
        }
    }
    None
}

/// Loaded and validated rig with derived models.
#[derive(Debug, Clone)]
pub struct Rig {
    pub desc: RigDescription,
    /// Hex SHA-256 of the canonical TOML serialization.
    pub hash: String,
    pub followers: DualArm,
    pub leaders: [ArmModel; 2],
}

impl Rig {
    pub fn from_description(desc: RigDescription) -> Result<Self, RigError> {
        Self::build(desc, None)
    }

    pub fn from_toml_str(text: &str) -> Result<Self, RigError> {
        let desc: RigDescription =
            toml::from_str(text).map_err(|e| RigError::Parse(e.to_string().trim_end().to_owned()))?;
        Self::build(desc, Some(text))
    }

    pub fn load(path: &Path) -> Result<Self, RigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| RigError::Io(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    fn build(desc: RigDescription, source: Option<&str>) -> Result<Self, RigError> {
        let invalid = |key: &str, message: String| RigError::Invalid {
            key: key.to_owned(),
            line: source.and_then(|s| locate(s, key)),
            message,
        };
        validate(&desc).map_err(|(k, m)| invalid(&k, m))?;

        let followers = DualArm {
            left: desc.arms.left.clone(),
            right: desc.arms.right.clone(),
            body: desc.body.iter().copied().map(Capsule::from).collect(),
        };
        let s = desc.leader.scale;
        let leaders = [
            desc.arms
                .left
                .scaled(s, format!("{}-leader", desc.arms.left.name))
                .with_base_pose(desc.leader.left_base),
            desc.arms
                .right
                .scaled(s, format!("{}-leader", desc.arms.right.name))
                .with_base_pose(desc.leader.right_base),
        ];
        let report = check_self_collision(
            &followers,
            &desc.ready_pose.left,
            &desc.ready_pose.right,
            desc.safety.margin,
        );
        if report.colliding {
            return Err(invalid(
                "ready_pose",
                format!(
                    "ready pose is in collision ({} m between {:?})",
                    report.min_distance, report.worst_pair
                ),
            ));
        }
        let hash = hash_description(&desc);
        Ok(Self {
            desc,
            hash,
            followers,
            leaders,
        })
    }

    /// Desk-scale two-arm rig.
    pub fn desk_default() -> Self {
        Self::from_description(RigDescription::desk_default()).expect("default rig is valid")
    }

    pub fn to_toml(&self) -> String {
        self.desc.to_toml()
    }

    pub fn follower_models(&self) -> [ArmModel; 2] {
        [self.followers.left.clone(), self.followers.right.clone()]
    }

    pub fn ready(&self) -> [JointVector; 2] {
        self.desc.ready_pose.pair()
    }

    /// Leader end-effector positions for a leader joint pair.
    pub fn leader_ee(&self, q: &[JointVector; 2]) -> [Vector3<f64>; 2] {
        [
            self.leaders[0].end_effector(&q[0]).translation,
            self.leaders[1].end_effector(&q[1]).translation,
        ]
    }
}

pub fn hash_description(desc: &RigDescription) -> String {
    hex::encode(Sha256::digest(desc.to_toml().as_bytes()))
}

fn check<E: fmt::Display>(key: &str, r: Result<(), E>) -> Result<(), (String, String)> {
    r.map_err(|e| (key.to_owned(), e.to_string()))
}

fn validate(d: &RigDescription) -> Result<(), (String, String)> {
    let fail = |k: &str, m: String| Err((k.to_owned(), m));
    if d.name.trim().is_empty() {
        return fail("name", "must not be empty".into());
    }
    if !(d.tick_rate >= 50.0 && d.tick_rate.is_finite()) {
        return fail("tick_rate", format!("must be >= 50 Hz, got {}", d.tick_rate));
    }
    if d.camera_count > 16 {
        return fail("camera_count", format!("at most 16 cameras, got {}", d.camera_count));
    }
    if !(d.leader_timeout > 0.0 && d.leader_timeout.is_finite()) {
        return fail("leader_timeout", format!("must be positive, got {}", d.leader_timeout));
    }
    if !(d.ready_tolerance > 0.0 && d.ready_tolerance.is_finite()) {
        return fail("ready_tolerance", format!("must be positive, got {}", d.ready_tolerance));
    }
    check("arms.left", d.arms.left.validate())?;
    check("arms.right", d.arms.right.validate())?;
    if !(d.leader.scale > 0.0 && d.leader.scale <= 1.0) {
        return fail("leader.scale", format!("must lie in (0, 1], got {}", d.leader.scale));
    }
    check("retarget", d.retarget.validate())?;
    check("gesture", d.gesture.validate())?;
    check("safety", d.safety.validate())?;
    check("follower_sim", d.follower_sim.validate())?;
    check("cameras", d.cameras.validate())?;
    for (i, b) in d.body.iter().enumerate() {
        if !(b.radius > 0.0 && b.radius.is_finite()) {
            return fail(&format!("body.{i}.radius"), format!("must be positive, got {}", b.radius));
        }
    }
    for (key, pose) in [("home_pose", &d.home_pose), ("ready_pose", &d.ready_pose)] {
        for (side, q, model) in [
            ("left", &pose.left, &d.arms.left),
            ("right", &pose.right, &d.arms.right),
        ] {
            if !model.within_limits(q) {
                return fail(&format!("{key}.{side}"), "outside the arm's joint limits".into());
            }
        }
    }
    Ok(())
}

impl RigDescription {
    pub fn desk_default() -> Self {
        let follower = |name: &str, y: f64| {
            ArmModel::desk_default(name, RigidTransform::from_translation(0.0, y, 0.0))
        };
        let ready = JointVector::new([0.0, 0.6, 0.0, 1.6, 0.0, 0.8, 0.0], 1.0);
        let home = JointVector::new([0.0; 7], 1.0);
        Self {
            name: "desk-default".into(),
            tick_rate: 125.0,
            camera_count: 3,
            record_root: PathBuf::from("episodes"),
            leader_timeout: 0.5,
            ready_tolerance: 0.02,
            home_pose: ReadyPose {
                left: home,
                right: home,
            },
            ready_pose: ReadyPose {
                left: ready,
                right: ready,
            },
            retarget: RetargetConfig::identity(),
            gesture: GestureConfig {
                grasp_threshold: 0.2,
                hold_duration: 1.0,
                end_zone: Aabb {
                    min: [-0.14, -0.3, 0.12],
                    max: [-0.02, 0.3, 0.26],
                },
                transit_duration: 2.0,
            },
            safety: SafetyConfig::default(),
            follower_sim: FollowerSimConfig::default(),
            cameras: CameraConfig::default(),
            leader: LeaderMount {
                scale: 0.8,
                left_base: RigidTransform::from_translation(-0.45, 0.2, 0.1),
                right_base: RigidTransform::from_translation(-0.45, -0.2, 0.1),
            },
            body: vec![BodyCapsule {
                a: Vector3::new(-0.25, 0.0, 0.0),
                b: Vector3::new(-0.25, 0.0, 0.7),
                radius: 0.03,
            }],
            arms: ArmPair {
                left: follower("left", 0.25),
                right: follower("right", -0.25),
            },
        }
    }

    /// Canonical TOML form; its SHA-256 is the rig hash.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("rig description serializes")
    }
}

/// Leader poses that put both leader end-effectors in the default end zone.
pub fn default_end_zone_pose() -> [JointVector; 2] {
    [JointVector::new([0.0, 1.1, 0.0, 1.0, 0.0, 1.0, 0.0], 1.0); 2]
}
