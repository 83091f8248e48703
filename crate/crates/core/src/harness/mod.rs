//! Synthetic ground truth, simulated detector error, dataset files and
//! end-to-end evaluation.

mod dataset;
mod eval;
mod perturb;
mod synthetic;

pub use dataset::{
    read_dataset, read_solved, write_dataset, write_solved, SolvedFrame, SCHEMA_VERSION,
};
pub use eval::{
    evaluate, evaluate_solved, score_frame, sensitivity_sweep, solve_frame, EvalOptions,
    NoiseRecipe, SensitivityCurve, SensitivityRow,
};
pub use perturb::{inject_error_scale, inject_gaussian_noise};
pub use synthetic::{generate_synthetic_sequence, SyntheticSequence};

use crate::okp::KeypointSet;
use crate::skeleton::Pose;

/// One evaluation frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameRecord {
    pub frame_id: String,
    /// Grouping label for per-group aggregation (an action name, say).
    pub group: String,
    /// Global-convention ground-truth pose, when known.
    pub gt_pose: Option<Pose>,
    pub gt_keypoints: KeypointSet,
    pub pred_keypoints: Option<KeypointSet>,
    /// Prediction made on the horizontally flipped input, still mirrored.
    pub pred_flipped: Option<KeypointSet>,
    /// Which bone lengths the ground truth was generated with.
    pub lengths_id: String,
}
