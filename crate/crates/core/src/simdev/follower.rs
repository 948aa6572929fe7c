use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bus::ArmState;
use crate::kinematics::{ArmModel, JointVector, JOINT_COUNT};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FollowerSimError {
    #[error("tracking_bandwidth must be positive, got {0}")]
    Bandwidth(f64),
    #[error("max velocity for joint {0} must be positive")]
    Velocity(usize),
    #[error("control_rate must be positive, got {0}")]
    Rate(f64),
    #[error("noise_std must be >= 0, got {0}")]
    Noise(f64),
    #[error("tracking_bandwidth / control_rate must not exceed 1 (got {0}); the integrator would overshoot")]
    Unstable(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FollowerSimConfig {
    /// First-order pole, 1/s.
    pub tracking_bandwidth: f64,
    /// rad/s per joint.
    pub max_joint_velocity: [f64; JOINT_COUNT],
    /// Normalized aperture per second.
    pub max_gripper_velocity: f64,
    /// Hz.
    pub control_rate: f64,
    /// Standard deviation of reported-position noise, radians.
    pub noise_std: f64,
    /// Reported effort per radian of residual error.
    pub effort_gain: f64,
}

impl Default for FollowerSimConfig {
    fn default() -> Self {
        Self {
            tracking_bandwidth: 15.0,
            max_joint_velocity: [3.0; JOINT_COUNT],
            max_gripper_velocity: 3.0,
            control_rate: 125.0,
            noise_std: 0.0,
            effort_gain: 5.0,
        }
    }
}

impl FollowerSimConfig {
    pub fn validate(&self) -> Result<(), FollowerSimError> {
        if !(self.tracking_bandwidth > 0.0 && self.tracking_bandwidth.is_finite()) {
            return Err(FollowerSimError::Bandwidth(self.tracking_bandwidth));
        }
        for (j, v) in self.max_joint_velocity.iter().enumerate() {
            if !(*v > 0.0 && v.is_finite()) {
                return Err(FollowerSimError::Velocity(j));
            }
        }
        if !(self.max_gripper_velocity > 0.0 && self.max_gripper_velocity.is_finite()) {
            return Err(FollowerSimError::Velocity(JOINT_COUNT));
        }
        if !(self.control_rate > 0.0 && self.control_rate.is_finite()) {
            return Err(FollowerSimError::Rate(self.control_rate));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(FollowerSimError::Noise(self.noise_std));
        }
        let ratio = self.tracking_bandwidth / self.control_rate;
        if ratio > 1.0 {
            return Err(FollowerSimError::Unstable(ratio));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FollowerStep {
    pub state: JointVector,
    pub velocity: [f64; JOINT_COUNT],
    pub effort: [f64; JOINT_COUNT],
}

fn track(q: f64, cmd: f64, bandwidth: f64, vmax: f64, dt: f64) -> f64 {
    let e = cmd - q;
    let dq = (bandwidth * e).clamp(-vmax, vmax) * dt;
    // Never step past the command.
    if dq.abs() > e.abs() {
        cmd
    } else {
        q + dq
    }
}

/// One integration step of rate-limited first-order tracking.
pub fn follower_step(
    cfg: &FollowerSimConfig,
    state: &JointVector,
    cmd: &JointVector,
    dt: f64,
) -> FollowerStep {
    assert!(dt > 0.0, "dt must be positive");
    let bw = cfg.tracking_bandwidth;
    let angles: [f64; JOINT_COUNT] = std::array::from_fn(|j| {
        track(state.angles[j], cmd.angles[j], bw, cfg.max_joint_velocity[j], dt)
    });
    let gripper = track(state.gripper, cmd.gripper, bw, cfg.max_gripper_velocity, dt);
    FollowerStep {
        state: JointVector::new(angles, gripper),
        velocity: std::array::from_fn(|j| (angles[j] - state.angles[j]) / dt),
        effort: std::array::from_fn(|j| cfg.effort_gain * (cmd.angles[j] - angles[j])),
    }
}

/// Simulated follower arm: integrates commands and reports noisy state.
#[derive(Debug, Clone)]
pub struct FollowerSim {
    model: ArmModel,
    cfg: FollowerSimConfig,
    q: JointVector,
    rng: ChaCha8Rng,
    noise: Option<Normal<f64>>,
}

impl FollowerSim {
    pub fn new(model: ArmModel, cfg: FollowerSimConfig, initial: JointVector, seed: u64) -> Self {
        let noise = (cfg.noise_std > 0.0).then(|| Normal::new(0.0, cfg.noise_std).unwrap());
        let q = model.clamp_to_limits(&initial);
        Self {
            model,
            cfg,
            q,
            rng: ChaCha8Rng::seed_from_u64(seed),
            noise,
        }
    }

    /// True (noise-free) joint state.
    pub fn state(&self) -> &JointVector {
        &self.q
    }

    pub fn step(&mut self, cmd: &JointVector, dt: f64) -> ArmState {
        let out = follower_step(&self.cfg, &self.q, cmd, dt);
        self.q = self.model.clamp_to_limits(&out.state);
        let mut reported = self.q;
        if let Some(n) = &self.noise {
            for a in &mut reported.angles {
                *a += n.sample(&mut self.rng);
            }
            reported = self.model.clamp_to_limits(&reported);
        }
        ArmState {
            position: reported.angles,
            velocity: out.velocity,
            effort: out.effort,
            gripper: reported.gripper,
        }
    }
}
