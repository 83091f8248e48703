use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::perturb::{inject_error_scale, inject_gaussian_noise};
use super::{FrameRecord, SolvedFrame};
use crate::error::{Error, Result};
use crate::metrics::{self, FrameFailure, MetricValues, MetricsReport, PCK_THRESHOLD_MM};
use crate::okp::{flip_merge, solve_pose, KeypointSet, Space};
use crate::skeleton::{BoneLengths, JointPositions, Pose, Skeleton};

/// Gaussian noise standing in for a detector when frames carry no
/// predictions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseRecipe {
    /// Standard deviation per coordinate, in the keypoints' units.
    pub sigma: f64,
    pub seed: u64,
}

impl NoiseRecipe {
    /// Seed for frame `index`; frames get independent streams.
    pub fn frame_seed(&self, index: usize) -> u64 {
        self.seed ^ (index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOptions {
    /// Subtract the root joint before Protocol-1 MPJPE.
    pub root_relative: bool,
    /// Include scale in the Protocol-2 alignment.
    pub procrustes_scale: bool,
    pub pck_threshold: f64,
    /// Average with the un-mirrored flipped prediction when a frame has one.
    pub flip_merge: bool,
    /// Used for frames without predictions.
    pub noise: Option<NoiseRecipe>,
    /// Scales the detector error about the ground truth before solving.
    pub error_scale: Option<f64>,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            root_relative: true,
            procrustes_scale: true,
            pck_threshold: PCK_THRESHOLD_MM,
            flip_merge: true,
            noise: None,
            error_scale: None,
        }
    }
}

/// The keypoints that stand in for the detector output of frame `index`.
fn predicted_keypoints(frame: &FrameRecord, index: usize, skel: &Skeleton, options: &EvalOptions) -> Result<KeypointSet> {
    let mut pred = match (&frame.pred_keypoints, options.noise) {
        (Some(p), _) => p.clone(),
        (None, Some(noise)) => inject_gaussian_noise(&frame.gt_keypoints, noise.sigma, noise.frame_seed(index))?,
        (None, None) => {
            return Err(Error::InvalidArgument("frame has no predictions and no noise recipe".into()))
        }
    };
    if options.flip_merge {
        if let Some(flipped) = &frame.pred_flipped {
            pred = flip_merge(&pred, flipped, skel)?;
        }
    }
    if let Some(s) = options.error_scale {
        pred = inject_error_scale(&pred, &frame.gt_keypoints, s)?;
    }
    Ok(pred)
}

/// Solves frame `index`'s prediction into a pose and maps it onto the
/// skeleton with `lengths`.
pub fn solve_frame(
    frame: &FrameRecord,
    index: usize,
    skel: &Skeleton,
    lengths: &BoneLengths,
    options: &EvalOptions,
) -> Result<(Pose, JointPositions)> {
    let pred = predicted_keypoints(frame, index, skel, options)?;
    let pose = solve_pose(&pred, skel)?;
    let positions = skel.forward_kinematics(&pose, lengths)?;
    Ok((pose, positions))
}

/// All metrics of one frame against its ground truth.
pub fn score_frame(
    frame: &FrameRecord,
    pred_pose: &Pose,
    pred_positions: &JointPositions,
    skel: &Skeleton,
    options: &EvalOptions,
) -> Result<MetricValues> {
    let joints = frame.gt_keypoints.joints(skel);
    if joints.len() != skel.n_joints() {
        return Err(Error::count("ground-truth joints", skel.n_joints(), joints.len()));
    }
    let missing = frame.gt_keypoints.missing(skel.n_joints());
    if !missing.is_empty() {
        return Err(Error::IncompleteKeypoints(missing));
    }
    let gt = JointPositions(joints.to_vec());
    let gt_rotations = match &frame.gt_pose {
        Some(p) => p.rotations.clone(),
        None => solve_pose(&frame.gt_keypoints, skel)?.rotations,
    };
    let root = skel.root();
    let aligned = metrics::procrustes_align(pred_positions, &gt, options.procrustes_scale)?;
    let subset = skel.pck_subset();
    Ok(MetricValues {
        mpjpe_p1: metrics::mpjpe(pred_positions, &gt, options.root_relative.then_some(root))?,
        mpjpe_p2: metrics::mpjpe(&aligned, &gt, None)?,
        pck: metrics::pck(pred_positions, &gt, options.pck_threshold, subset, Some(root))?,
        ppck: metrics::pck(&aligned, &gt, options.pck_threshold, subset, None)?,
        mpjas: metrics::mpjas(&pred_pose.rotations, &gt_rotations)?,
        maa: metrics::maa(&pred_pose.rotations, &gt_rotations)?,
    })
}

fn collect_report(frames: &[FrameRecord], results: Vec<Result<MetricValues>>) -> Result<MetricsReport> {
    let mut scored = Vec::with_capacity(frames.len());
    let mut failures = Vec::new();
    for (frame, result) in frames.iter().zip(results) {
        match result {
            Ok(m) => scored.push((frame.group.clone(), m)),
            Err(e) => failures.push(FrameFailure {
                frame: frame.frame_id.clone(),
                error: e.to_string(),
            }),
        }
    }
    if frames.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if scored.is_empty() {
        return Err(Error::AllFramesFailed {
            count: failures.len(),
            first: format!("frame {}: {}", failures[0].frame, failures[0].error),
        });
    }
    MetricsReport::aggregate(&scored, failures)
}

/// Solves every frame's prediction, reconstructs joints with `lengths` and
/// scores against ground truth. Frames that fail are listed in the report;
/// the call only fails when no frame could be scored.
pub fn evaluate(
    frames: &[FrameRecord],
    skel: &Skeleton,
    lengths: &BoneLengths,
    options: &EvalOptions,
) -> Result<MetricsReport> {
    let results: Vec<Result<MetricValues>> = frames
        .par_iter()
        .enumerate()
        .map(|(i, frame)| {
            let (pose, positions) = solve_frame(frame, i, skel, lengths, options)?;
            score_frame(frame, &pose, &positions, skel, options)
        })
        .collect();
    collect_report(frames, results)
}

/// Scores previously solved frames, matched to ground truth by frame id.
pub fn evaluate_solved(
    frames: &[FrameRecord],
    solved: &[SolvedFrame],
    skel: &Skeleton,
    options: &EvalOptions,
) -> Result<MetricsReport> {
    let by_id: HashMap<&str, &SolvedFrame> = solved.iter().map(|s| (s.frame_id.as_str(), s)).collect();
    let results = frames
        .iter()
        .map(|frame| {
            let s = by_id.get(frame.frame_id.as_str()).ok_or_else(|| {
                Error::InvalidArgument(format!("no solved entry for frame {}", frame.frame_id))
            })?;
            score_frame(frame, &s.pose, &s.positions, skel, options)
        })
        .collect();
    collect_report(frames, results)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensitivityRow {
    pub error_scale: f64,
    /// Mean 2D keypoint error as a fraction of the image span.
    pub detector_err_pct_resolution: f64,
    /// Protocol-1 MPJPE, mm.
    pub mpjpe: f64,
    /// Radians.
    pub mpjas: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityCurve {
    pub rows: Vec<SensitivityRow>,
}

impl SensitivityCurve {
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        for row in &self.rows {
            w.serialize(row).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
    }
}

/// Span of the image the keypoints live in: 2 for normalized-image space,
/// otherwise the larger side of the ground-truth 2D bounding box.
fn image_span(gt: &KeypointSet) -> f64 {
    match gt.space {
        Space::NormalizedImage => 2.0,
        Space::WorldMetric => {
            let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
            for p in gt.points.iter().filter(|p| p.iter().all(|v| v.is_finite())) {
                for a in 0..2 {
                    lo[a] = lo[a].min(p[a]);
                    hi[a] = hi[a].max(p[a]);
                }
            }
            (hi[0] - lo[0]).max(hi[1] - lo[1])
        }
    }
}

/// Mean over points of the xy error, as a fraction of the image span.
fn detector_error_2d(pred: &KeypointSet, gt: &KeypointSet) -> f64 {
    let errs: Vec<f64> = pred
        .points
        .iter()
        .zip(&gt.points)
        .map(|(p, g)| (p.xy() - g.xy()).norm())
        .filter(|e| e.is_finite())
        .collect();
    if errs.is_empty() {
        return f64::NAN;
    }
    errs.iter().sum::<f64>() / errs.len() as f64 / image_span(gt)
}

/// One evaluation per error scale, each with the detector error scaled
/// about the ground truth.
pub fn sensitivity_sweep(
    frames: &[FrameRecord],
    scales: &[f64],
    skel: &Skeleton,
    lengths: &BoneLengths,
    base: &EvalOptions,
) -> Result<SensitivityCurve> {
    if scales.is_empty() {
        return Err(Error::InvalidArgument("no error scales given".into()));
    }
    if let Some(s) = scales.iter().find(|s| !(**s >= 0.0 && s.is_finite())) {
        return Err(Error::InvalidArgument(format!("error scale must be >= 0, got {s}")));
    }
    if scales.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidArgument("error scales must be strictly increasing".into()));
    }
    let rows = scales
        .iter()
        .map(|&s| {
            let options = EvalOptions {
                error_scale: Some(s),
                ..base.clone()
            };
            let report = evaluate(frames, skel, lengths, &options)?;
            let errs: Vec<f64> = frames
                .par_iter()
                .enumerate()
                .filter_map(|(i, f)| {
                    predicted_keypoints(f, i, skel, &options)
                        .ok()
                        .map(|p| detector_error_2d(&p, &f.gt_keypoints))
                })
                .collect();
            Ok(SensitivityRow {
                error_scale: s,
                detector_err_pct_resolution: errs.iter().sum::<f64>() / errs.len().max(1) as f64,
                mpjpe: report.overall.mpjpe_p1,
                mpjas: report.overall.mpjas,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SensitivityCurve { rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::random_rotation;
    use crate::harness::generate_synthetic_sequence;
    use crate::okp::synthesize_okps;
    use nalgebra::Vector3;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn frames(n: usize, seed: u64) -> (Skeleton, Vec<FrameRecord>) {
        let s = Skeleton::h36m17();
        let f = generate_synthetic_sequence(seed, n, &s, s.default_lengths(), 1.5).unwrap();
        (s, f)
    }

    #[test]
    fn perfect_detector_scores_perfectly() {
        let (s, mut fs) = frames(50, 1);
        for f in &mut fs {
            f.pred_keypoints = Some(f.gt_keypoints.clone());
        }
        let r = evaluate(&fs, &s, s.default_lengths(), &EvalOptions::default()).unwrap();
        assert!(r.overall.mpjpe_p1 < 1e-9);
        assert!(r.overall.mpjpe_p2 < 1e-9);
        assert!(r.overall.mpjas < 1e-9);
        assert_eq!(r.overall.pck, 1.0);
        assert_eq!(r.frame_count, 50);
        assert_eq!(r.failed_frames, 0);
    }

    #[test]
    fn uniform_offset_shows_only_without_root_subtraction() {
        let (s, mut fs) = frames(10, 2);
        for f in &mut fs {
            let mut p = f.gt_keypoints.clone();
            p.points.iter_mut().for_each(|v| *v += Vector3::new(3.0, 4.0, 0.0));
            f.pred_keypoints = Some(p);
        }
        let raw = EvalOptions {
            root_relative: false,
            ..EvalOptions::default()
        };
        let r = evaluate(&fs, &s, s.default_lengths(), &raw).unwrap();
        assert!((r.overall.mpjpe_p1 - 5.0).abs() < 1e-9);
        let r = evaluate(&fs, &s, s.default_lengths(), &EvalOptions::default()).unwrap();
        assert!(r.overall.mpjpe_p1 < 1e-9);
    }

    #[test]
    fn random_rotations_score_about_thirty_percent() {
        let (s, mut fs) = frames(2000, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for f in &mut fs {
            let wrong = crate::skeleton::Pose::global(
                Vector3::zeros(),
                (0..s.n_rotations()).map(|_| random_rotation(&mut rng)).collect(),
            );
            f.pred_keypoints = Some(synthesize_okps(&s, &wrong, s.default_lengths()).unwrap());
        }
        let r = evaluate(&fs, &s, s.default_lengths(), &EvalOptions::default()).unwrap();
        assert!((r.overall.maa - 0.297).abs() < 0.01, "maa {}", r.overall.maa);
    }

    #[test]
    fn other_bone_lengths_change_positions_not_rotations() {
        let (s, fs) = frames(40, 4);
        let options = EvalOptions {
            noise: Some(NoiseRecipe { sigma: 15.0, seed: 1 }),
            ..EvalOptions::default()
        };
        let a = evaluate(&fs, &s, s.default_lengths(), &options).unwrap();
        let b = evaluate(&fs, &s, &s.default_lengths().scaled(1.15).unwrap(), &options).unwrap();
        assert_eq!(a.overall.mpjas, b.overall.mpjas);
        assert!(b.overall.mpjpe_p1 > a.overall.mpjpe_p1);
    }

    #[test]
    fn failures_are_collected() {
        let (s, mut fs) = frames(5, 5);
        for f in &mut fs {
            f.pred_keypoints = Some(f.gt_keypoints.clone());
        }
        fs[2].pred_keypoints.as_mut().unwrap().points[0].x = f64::NAN;
        let r = evaluate(&fs, &s, s.default_lengths(), &EvalOptions::default()).unwrap();
        assert_eq!(r.frame_count, 4);
        assert_eq!(r.failed_frames, 1);
        assert_eq!(r.failures[0].frame, fs[2].frame_id);
        for f in &mut fs {
            f.pred_keypoints = None;
        }
        assert!(matches!(
            evaluate(&fs, &s, s.default_lengths(), &EvalOptions::default()),
            Err(Error::AllFramesFailed { count: 5, .. })
        ));
    }

    #[test]
    fn sweep_rows_and_validation() {
        let (s, fs) = frames(60, 6);
        let base = EvalOptions {
            noise: Some(NoiseRecipe { sigma: 20.0, seed: 3 }),
            ..EvalOptions::default()
        };
        let curve = sensitivity_sweep(&fs, &[0.0, 0.5, 1.0, 1.5, 2.0], &s, s.default_lengths(), &base).unwrap();
        assert_eq!(curve.rows.len(), 5);
        assert!(curve.rows[0].mpjpe < 1e-9 && curve.rows[0].mpjas < 1e-9);
        assert_eq!(curve.rows[0].detector_err_pct_resolution, 0.0);
        for w in curve.rows.windows(2) {
            assert!(w[1].mpjpe >= w[0].mpjpe && w[1].mpjas >= w[0].mpjas);
            assert!(w[1].detector_err_pct_resolution > w[0].detector_err_pct_resolution);
        }
        // At s = 1 the detector column is the unscaled prediction error.
        let unscaled: f64 = fs
            .iter()
            .enumerate()
            .map(|(i, f)| {
                let p = predicted_keypoints(f, i, &s, &base).unwrap();
                detector_error_2d(&p, &f.gt_keypoints)
            })
            .sum::<f64>()
            / fs.len() as f64;
        assert_eq!(curve.rows[2].detector_err_pct_resolution, unscaled);
        let csv = curve.to_csv();
        assert!(csv.starts_with("error_scale,detector_err_pct_resolution,mpjpe,mpjas\n"));
        assert_eq!(csv.lines().count(), 6);

        assert!(sensitivity_sweep(&fs, &[], &s, s.default_lengths(), &base).is_err());
        assert!(sensitivity_sweep(&fs, &[1.0, 0.5], &s, s.default_lengths(), &base).is_err());
        assert!(sensitivity_sweep(&fs, &[-1.0], &s, s.default_lengths(), &base).is_err());
    }

    #[test]
    fn evaluation_is_deterministic() {
        let (s, fs) = frames(30, 7);
        let options = EvalOptions {
            noise: Some(NoiseRecipe { sigma: 10.0, seed: 8 }),
            ..EvalOptions::default()
        };
        let a = evaluate(&fs, &s, s.default_lengths(), &options).unwrap();
        let b = evaluate(&fs, &s, s.default_lengths(), &options).unwrap();
        assert_eq!(a.to_json(), b.to_json());
    }
}
