//! Orientation keypoints for 6D human pose.
//!
//! Joint keypoints alone leave each bone's roll about its own axis
//! unobserved. Orientation keypoints are virtual markers rigidly attached
//! to every rotating bone at half-bone-length offsets; together with the
//! bone's two joints they fix the full bone rotation, which this crate
//! recovers by weighted least-squares alignment against a T-pose template.
//!
//! Modules:
//!
//! - [`geometry`]: rotations, SO(3) distance, sampling, weighted alignment
//! - [`skeleton`]: joint tree, forward kinematics, local/global conversion
//! - [`okp`]: marker synthesis, rotation recovery, flip merging
//! - [`codec`]: 1D heatmap decoding with a coordinate-weighted softmax
//! - [`metrics`]: MPJPE (both protocols), PCK, MPJAS, MAA and training losses
//! - [`harness`]: synthetic data, detector-error simulation, dataset IO and
//!   evaluation

pub mod codec;
pub mod error;
pub mod geometry;
pub mod harness;
pub mod metrics;
pub mod okp;
pub mod skeleton;

pub use error::{Error, Result};
pub use geometry::{RotationMatrix, Transform, WeightedCorrespondences};
pub use okp::{KeypointSet, Space};
pub use skeleton::{BoneLengths, JointPositions, Pose, RotationConvention, Skeleton};
