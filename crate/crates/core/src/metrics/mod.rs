//! The three PDI component residuals.

pub mod motion;
pub mod rigidity;
pub mod scale;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricError {
    #[error("need at least {needed} frames, got {got}")]
    InsufficientFrames { needed: usize, got: usize },
    #[error("3D evidence (pointmaps) is required")]
    Missing3d,
    #[error("fewer than 2 anchors survive filtering ({0} left)")]
    InsufficientAnchors(usize),
    #[error("no frame has enough usable anchor pairs")]
    NoUsableFrames,
    #[error("no frame has valid 3D foreground points")]
    NoValidFrames,
}

pub use motion::{
    acceleration_penalty, compute_kinematics, compute_traj_residuals, direction_penalty, KinematicsSeries,
    TrajResidualSeries,
};
pub use rigidity::{
    rigidity_dispatch, rigidity_height3d, rigidity_pairwise2d, rigidity_pairwise3d, select_anchor_pairs, AnchorPair,
    AnchorPairSet, RigidityResult, RigidityStrategy,
};
pub use scale::{compute_scale_residuals, ScaleResidualSeries};
