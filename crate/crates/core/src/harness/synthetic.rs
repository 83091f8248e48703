use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, UnitSphere};

use super::FrameRecord;
use crate::error::{Error, Result};
use crate::geometry::RotationMatrix;
use crate::okp::synthesize_okps;
use crate::skeleton::{BoneLengths, Pose, RotationConvention, Skeleton};

/// Half-width of the cube the synthetic root is drawn from, mm.
const ROOT_HALF_EXTENT_MM: f64 = 1000.0;

/// Parameters of a synthetic ground-truth sequence.
#[derive(Debug, Clone)]
pub struct SyntheticSequence {
    pub seed: u64,
    pub n_frames: usize,
    /// Upper bound on each bone's rotation away from its parent, radians.
    pub angle_limit: f64,
    /// Frames are labelled `g0`, `g1`, ... round-robin; 1 labels all
    /// frames `synthetic`.
    pub groups: usize,
}

impl SyntheticSequence {
    pub fn generate(&self, skel: &Skeleton, lengths: &BoneLengths) -> Result<Vec<FrameRecord>> {
        if self.n_frames == 0 {
            return Err(Error::InvalidArgument("n_frames must be at least 1".into()));
        }
        if !(self.angle_limit > 0.0 && self.angle_limit <= std::f64::consts::PI) {
            return Err(Error::InvalidArgument(format!(
                "angle_limit must be in (0, π], got {}",
                self.angle_limit
            )));
        }
        let groups = self.groups.max(1);
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        (0..self.n_frames)
            .map(|i| {
                let pose = self.random_pose(skel, &mut rng)?;
                let gt_keypoints = synthesize_okps(skel, &pose, lengths)?;
                Ok(FrameRecord {
                    frame_id: format!("{i:06}"),
                    group: if groups == 1 {
                        "synthetic".to_string()
                    } else {
                        format!("g{}", i % groups)
                    },
                    gt_pose: Some(pose),
                    gt_keypoints,
                    pred_keypoints: None,
                    pred_flipped: None,
                    lengths_id: "default".to_string(),
                })
            })
            .collect()
    }

    /// Each bone turns by a random axis-angle (angle ≤ `angle_limit`)
    /// relative to where its parent carries it from the T-pose.
    fn random_pose(&self, skel: &Skeleton, rng: &mut ChaCha8Rng) -> Result<Pose> {
        let root = Vector3::from_fn(|_, _| rng.random_range(-ROOT_HALF_EXTENT_MM..=ROOT_HALF_EXTENT_MM));
        let locals = skel
            .rotating_bones()
            .iter()
            .map(|&b| {
                let axis: [f64; 3] = UnitSphere.sample(rng);
                let angle = rng.random_range(0.0..=self.angle_limit);
                let delta = RotationMatrix::from_scaled_axis(Vector3::from(axis) * angle);
                let neutral = skel.bones()[b].neutral;
                match skel.parent_bone(b) {
                    Some(p) => skel.bones()[p].neutral.transpose() * delta * neutral,
                    None => delta * neutral,
                }
            })
            .collect();
        skel.locals_to_globals(&Pose {
            root_position: root,
            rotations: locals,
            convention: RotationConvention::ParentRelative,
        })
    }
}

/// `n_frames` random poses labelled with a single group.
pub fn generate_synthetic_sequence(
    seed: u64,
    n_frames: usize,
    skel: &Skeleton,
    lengths: &BoneLengths,
    angle_limit: f64,
) -> Result<Vec<FrameRecord>> {
    SyntheticSequence {
        seed,
        n_frames,
        angle_limit,
        groups: 1,
    }
    .generate(skel, lengths)
}
