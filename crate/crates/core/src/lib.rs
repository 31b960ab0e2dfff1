//! Geometric auditing of generated video: scale-depth alignment, world-space
//! motion consistency and structural rigidity of a single tracked subject.

// `!(x > 0.0)` is the NaN-rejecting form used throughout.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod geometry;
pub mod interchange;
pub mod metrics;
pub mod observation;
pub mod stats;
pub mod aggregate;
pub mod config;
pub mod fidelity;
pub mod pipeline;
pub mod synth;
pub mod vp;
