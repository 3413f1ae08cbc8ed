//! Multi-camera next-best-view servoing.
//!
//! A camera array rigidly mounted on a 7-DoF arm samples a scalar objective
//! (segmented target area plus an optional manipulability term) at several
//! nearby viewpoints at once. The inter-camera differences give a
//! least-squares gradient, and the end effector climbs it until the target
//! is well in view. A single-camera straight-line approach is provided as a
//! baseline, together with a ray-cast world, a sweep harness and a CLI.
//!
//! Module map:
//!
//! - [`scene`]: target sphere, planar occluders, ray casting
//! - [`render`]: pinhole renderer, camera array rig, pixel noise
//! - [`segment`]: rotated-HSV Gaussian segmentation
//! - [`kinematics`]: DH arm, Jacobian, manipulability, damped least-squares IK
//! - [`servo`]: objective, gradient recovery, the servo loop and the baseline
//! - [`harness`]: configuration, parameter sweeps, aggregation, plots

// negated comparisons double as NaN rejection in the validators
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod harness;
pub mod kinematics;
pub mod render;
pub mod scene;
pub mod segment;
pub mod seed;
pub mod servo;

pub use error::{Error, Result};

/// 3-vector in meters, or unitless for directions.
pub type Vec3 = nalgebra::Vector3<f64>;

/// Rigid pose. CSV output writes the quaternion scalar-first (`qw, qx, qy, qz`).
pub type Pose = nalgebra::Isometry3<f64>;

/// Linear RGB triple with channels in `[0, 1]`.
pub type Rgb = [f64; 3];
