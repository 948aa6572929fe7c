//! Interaction points: where the two end-effectors come closest during an episode.

use std::collections::BTreeMap;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kinematics::ArmModel;
use crate::recorder::{Episode, EpisodeLabels};

pub const DEFAULT_PROXIMITY_THRESHOLD: f64 = 0.15;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InteractionPoint {
    /// Midpoint of the two end-effectors, rig frame.
    pub point: Vector3<f64>,
    pub min_distance: f64,
    /// Record time of the closest approach.
    pub t: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum AnalyzeError {
    #[error("no interaction: closest approach {min_distance:.4} m is not below {threshold} m")]
    NoInteraction { min_distance: f64, threshold: f64 },
    #[error("episode has no records")]
    Empty,
}

/// Closest approach of the observed end-effectors, if it falls below `threshold`.
/// Ties resolve to the earliest record.
pub fn interaction_point(
    ep: &Episode,
    followers: &[ArmModel; 2],
    threshold: f64,
) -> Result<InteractionPoint, AnalyzeError> {
    let mut best: Option<InteractionPoint> = None;
    for r in &ep.records {
        let a = followers[0].end_effector(&r.obs[0].joints()).translation;
        let b = followers[1].end_effector(&r.obs[1].joints()).translation;
        let d = (a - b).norm();
        if best.is_none_or(|p| d < p.min_distance) {
            best = Some(InteractionPoint {
                point: (a + b) * 0.5,
                min_distance: d,
                t: r.t,
            });
        }
    }
    let best = best.ok_or(AnalyzeError::Empty)?;
    if best.min_distance < threshold {
        Ok(best)
    } else {
        Err(AnalyzeError::NoInteraction {
            min_distance: best.min_distance,
            threshold,
        })
    }
}

/// Manifest label used to group episodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GroupBy {
    #[default]
    Location,
    Operator,
    Task,
}

impl GroupBy {
    pub fn key(self, labels: &EpisodeLabels) -> &str {
        match self {
            GroupBy::Location => &labels.location,
            GroupBy::Operator => &labels.operator,
            GroupBy::Task => &labels.task,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupStats {
    pub count: usize,
    pub mean: Vector3<f64>,
    /// Sample covariance; zero for a single point.
    pub covariance: Matrix3<f64>,
}

/// Per-group mean and covariance. Points are sorted before accumulation so the
/// result does not depend on input order.
pub fn group_stats<'a>(
    points: impl IntoIterator<Item = (&'a str, Vector3<f64>)>,
) -> BTreeMap<String, GroupStats> {
    let mut groups: BTreeMap<String, Vec<Vector3<f64>>> = BTreeMap::new();
    for (k, p) in points {
        groups.entry(k.to_owned()).or_default().push(p);
    }
    groups
        .into_iter()
        .map(|(k, mut pts)| {
            pts.sort_by(|a, b| {
                a.iter()
                    .zip(b.iter())
                    .map(|(x, y)| x.total_cmp(y))
                    .find(|o| o.is_ne())
                    .unwrap_or(std::cmp::Ordering::Equal)
            });
            let n = pts.len();
            let mean = pts.iter().fold(Vector3::zeros(), |s, p| s + p) / n as f64;
            let covariance = if n > 1 {
                pts.iter()
                    .map(|p| (p - mean) * (p - mean).transpose())
                    .fold(Matrix3::zeros(), |s, m| s + m)
                    / (n - 1) as f64
            } else {
                Matrix3::zeros()
            };
            (
                k,
                GroupStats {
                    count: n,
                    mean,
                    covariance,
                },
            )
        })
        .collect()
}
