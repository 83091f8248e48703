//! Orientation keypoints: synthesis from poses, per-bone rotation recovery
//! and flip-averaged merging.
//!
//! A keypoint vector holds the joint keypoints in skeleton joint order,
//! followed by four orientation keypoints per rotating bone in rotation-slot
//! order. Each quadruple is anchored at the bone's parent joint and offset
//! by half the bone length:
//!
//! | marker | local offset (X, Y, Z) / l |
//! |--------|----------------------------|
//! | o₁     | ( 0.5, 0.5,  0.0)          |
//! | o₂     | (−0.5, 0.5,  0.0)          |
//! | o₃     | ( 0.0, 0.5,  0.5)          |
//! | o₄     | ( 0.0, 0.5, −0.5)          |
//!
//! Y is the bone axis, X the left axis and Z forward.

use std::fmt;

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{umeyama_align, RotationMatrix, WeightedCorrespondences};
use crate::skeleton::{BoneLengths, Pose, Skeleton};

/// Correspondence weights for (parent joint, child joint, o₁..o₄).
pub const MARKER_WEIGHTS: [f64; 6] = [2.0, 2.0, 1.0, 1.0, 1.0, 1.0];

/// Local offsets of o₁..o₄ for a bone of unit length.
pub const OKP_OFFSETS: [[f64; 3]; 4] = [
    [0.5, 0.5, 0.0],
    [-0.5, 0.5, 0.0],
    [0.0, 0.5, 0.5],
    [0.0, 0.5, -0.5],
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Space {
    /// Unitless crop coordinates, nominally within [−1.25, 1.25] per axis.
    NormalizedImage,
    /// Millimeters.
    WorldMetric,
}

impl fmt::Display for Space {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Space::NormalizedImage => "normalized_image",
            Space::WorldMetric => "world_metric",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KeypointSet {
    pub points: Vec<Vector3<f64>>,
    pub space: Space,
}

impl KeypointSet {
    pub fn new(points: Vec<Vector3<f64>>, space: Space) -> Self {
        KeypointSet { points, space }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Index of marker `marker` (0..4) of rotation slot `slot`.
    pub fn okp_index(skel: &Skeleton, slot: usize, marker: usize) -> usize {
        skel.n_joints() + 4 * slot + marker
    }

    pub fn joints<'a>(&'a self, skel: &Skeleton) -> &'a [Vector3<f64>] {
        &self.points[..skel.n_joints().min(self.points.len())]
    }

    /// The six markers of a bone: parent joint, child joint, o₁..o₄.
    pub fn bone_markers(&self, skel: &Skeleton, slot: usize) -> [Vector3<f64>; 6] {
        let bone = skel.rotating_bone(slot);
        let o = |m| self.points[Self::okp_index(skel, slot, m)];
        [
            self.points[bone.parent],
            self.points[bone.child],
            o(0),
            o(1),
            o(2),
            o(3),
        ]
    }

    /// Indices that are absent or hold non-finite coordinates.
    pub fn missing(&self, expected: usize) -> Vec<usize> {
        (0..expected)
            .filter(|&i| {
                self.points
                    .get(i)
                    .is_none_or(|p| p.iter().any(|v| !v.is_finite()))
            })
            .collect()
    }

    pub fn check_layout(&self, skel: &Skeleton) -> Result<()> {
        if self.points.len() != skel.n_keypoints() {
            return Err(Error::count("keypoints", skel.n_keypoints(), self.points.len()));
        }
        Ok(())
    }

    pub(crate) fn check_compatible(&self, other: &KeypointSet) -> Result<()> {
        if self.space != other.space {
            return Err(Error::SpaceMismatch {
                left: self.space,
                right: other.space,
            });
        }
        if self.points.len() != other.points.len() {
            return Err(Error::count("keypoints", self.points.len(), other.points.len()));
        }
        Ok(())
    }
}

/// Markers of one bone in bone-length-normalized local coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoneMarkerTemplate(pub [Vector3<f64>; 6]);

impl BoneMarkerTemplate {
    pub fn unit() -> Self {
        let o = |i: usize| Vector3::from(OKP_OFFSETS[i]);
        BoneMarkerTemplate([Vector3::zeros(), Vector3::y(), o(0), o(1), o(2), o(3)])
    }

    /// The template placed in the T-pose by a bone's neutral frame.
    pub fn in_neutral_pose(neutral: &RotationMatrix) -> Self {
        let unit = Self::unit();
        BoneMarkerTemplate(unit.0.map(|p| neutral.apply(&p)))
    }
}

/// Keypoints for a global-convention pose, in world-metric space.
pub fn synthesize_okps(skel: &Skeleton, pose: &Pose, lengths: &BoneLengths) -> Result<KeypointSet> {
    let joints = skel.forward_kinematics(pose, lengths)?;
    let mut points = joints.0;
    points.reserve(4 * skel.n_rotations());
    for (slot, &b) in skel.rotating_bones().iter().enumerate() {
        let anchor = points[skel.bones()[b].parent];
        let rotation = &pose.rotations[slot];
        for offset in OKP_OFFSETS {
            points.push(anchor + rotation.apply(&(Vector3::from(offset) * lengths[b])));
        }
    }
    Ok(KeypointSet::new(points, Space::WorldMetric))
}

/// Global rotation of one bone from its six observed markers.
pub fn solve_bone(skel: &Skeleton, slot: usize, markers: &[Vector3<f64>; 6]) -> Result<RotationMatrix> {
    let neutral = skel.rotating_bone(slot).neutral;
    let template = BoneMarkerTemplate::in_neutral_pose(&neutral);
    let corr = WeightedCorrespondences::new(
        template.0.to_vec(),
        markers.to_vec(),
        MARKER_WEIGHTS.to_vec(),
    )?;
    let delta = umeyama_align(&corr, false)?;
    Ok(delta.rotation * neutral)
}

/// Recovers the global rotation of every rotating bone from a complete
/// keypoint set. The root position is the detected root joint.
pub fn solve_pose(kps: &KeypointSet, skel: &Skeleton) -> Result<Pose> {
    let missing = kps.missing(skel.n_keypoints());
    if !missing.is_empty() {
        return Err(Error::IncompleteKeypoints(missing));
    }
    kps.check_layout(skel)?;
    let rotations = (0..skel.n_rotations())
        .into_par_iter()
        .map(|slot| solve_bone(skel, slot, &kps.bone_markers(skel, slot)))
        .collect::<Result<Vec<_>>>()?;
    Ok(Pose::global(kps.points[skel.root()], rotations))
}

/// Left/right mirror of a keypoint set: x is negated, mirrored joints and
/// their bones' quadruples trade places, and o₁/o₂ swap within each
/// quadruple. Applying it twice is the identity.
pub fn mirror_keypoints(kps: &KeypointSet, skel: &Skeleton) -> Result<KeypointSet> {
    kps.check_layout(skel)?;
    let flip = |p: &Vector3<f64>| Vector3::new(-p.x, p.y, p.z);
    let mut points = vec![Vector3::zeros(); kps.len()];
    for j in 0..skel.n_joints() {
        points[skel.mirror_joint(j)] = flip(&kps.points[j]);
    }
    for slot in 0..skel.n_rotations() {
        let target = skel.mirror_slot(slot);
        for (m, dst) in [1, 0, 2, 3].into_iter().enumerate() {
            points[KeypointSet::okp_index(skel, target, dst)] =
                flip(&kps.points[KeypointSet::okp_index(skel, slot, m)]);
        }
    }
    Ok(KeypointSet::new(points, kps.space))
}

/// Averages a prediction with the un-mirrored prediction made on the
/// horizontally flipped input.
pub fn flip_merge(kps: &KeypointSet, from_flipped: &KeypointSet, skel: &Skeleton) -> Result<KeypointSet> {
    kps.check_compatible(from_flipped)?;
    let unflipped = mirror_keypoints(from_flipped, skel)?;
    let points = kps
        .points
        .iter()
        .zip(&unflipped.points)
        .map(|(a, b)| (a + b) * 0.5)
        .collect();
    Ok(KeypointSet::new(points, kps.space))
}
