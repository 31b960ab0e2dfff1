//! World-space motion consistency.
//!
//! Velocities and accelerations are frame-rate normalised finite differences
//! of the (smoothed) centroid track. Each interior frame `t` is scored by the
//! transition `v_{t-1} -> v_t`: a soft-saturated acceleration ratio and the
//! cosine dissimilarity of the two velocities, averaged with equal weight.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::MetricError;
use crate::geometry::Point3;
use crate::stats;

/// Lower bound of the speed reference.
pub const SPEED_FLOOR: f64 = 1e-6;
/// Direction penalty only applies above this fraction of the speed reference.
pub const SPEED_GATE: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct KinematicsSeries {
    /// `T - 1` velocities (world units / s).
    pub velocities: Vec<Vector3<f64>>,
    /// `T - 2` accelerations (world units / s^2).
    pub accelerations: Vec<Vector3<f64>>,
    /// Robust speed reference `max(median |v|, 2 median |a|, 1e-6)`.
    pub v_ref: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajResidualSeries {
    /// Acceleration penalty per interior frame, in `[0, 2)`.
    pub accel_penalty: Vec<f64>,
    /// Direction penalty per interior frame, in `[0, 2]`.
    pub direction_penalty: Vec<f64>,
    /// `0.5 * accel + 0.5 * direction`.
    pub residuals: Vec<f64>,
    pub rmse: f64,
}

pub fn compute_kinematics(centroids: &[Point3], fps: f64) -> Result<KinematicsSeries, MetricError> {
    if centroids.len() < 3 {
        return Err(MetricError::InsufficientFrames { needed: 3, got: centroids.len() });
    }
    let velocities: Vec<Vector3<f64>> = centroids.windows(2).map(|w| (w[1] - w[0]) * fps).collect();
    let accelerations: Vec<Vector3<f64>> = velocities.windows(2).map(|w| (w[1] - w[0]) * fps).collect();
    let speed: Vec<f64> = velocities.iter().map(|v| v.norm()).collect();
    let accel: Vec<f64> = accelerations.iter().map(|a| a.norm()).collect();
    let v_ref = stats::median(&speed)
        .expect("non-empty")
        .max(2.0 * stats::median(&accel).expect("non-empty"))
        .max(SPEED_FLOOR);
    Ok(KinematicsSeries { velocities, accelerations, v_ref })
}

/// `2 tanh((|a| / v_ref) / 5)`.
pub fn acceleration_penalty(a_norm: f64, v_ref: f64) -> f64 {
    2.0 * (a_norm / v_ref / 5.0).tanh()
}

/// `1 - cos` of the angle between consecutive velocities when both exceed
/// the speed gate, else 0.
///
/// Evaluated as `2 sin^2(theta / 2)` with `theta = atan2(|a x b|, a . b)`, which
/// is exactly 0 for parallel velocities.
pub fn direction_penalty(v_prev: &Vector3<f64>, v_curr: &Vector3<f64>, v_ref: f64) -> f64 {
    let gate = SPEED_GATE * v_ref;
    let (a, b) = (v_prev.norm(), v_curr.norm());
    if a > gate && b > gate {
        let theta = v_prev.cross(v_curr).norm().atan2(v_prev.dot(v_curr));
        2.0 * (theta / 2.0).sin().powi(2)
    } else {
        0.0
    }
}

/// Residual for interior frames `1..T-1`: frame `t` pairs `a_{t-1}` with the
/// angle between `v_{t-1}` and `v_t` (both describe the same transition).
pub fn compute_traj_residuals(kin: &KinematicsSeries) -> TrajResidualSeries {
    let accel_penalty: Vec<f64> =
        kin.accelerations.iter().map(|a| acceleration_penalty(a.norm(), kin.v_ref)).collect();
    let direction: Vec<f64> =
        kin.velocities.windows(2).map(|w| direction_penalty(&w[0], &w[1], kin.v_ref)).collect();
    let residuals: Vec<f64> = accel_penalty.iter().zip(&direction).map(|(a, d)| 0.5 * a + 0.5 * d).collect();
    let rmse = stats::rms(&residuals).unwrap_or(0.0);
    TrajResidualSeries { accel_penalty, direction_penalty: direction, residuals, rmse }
}
