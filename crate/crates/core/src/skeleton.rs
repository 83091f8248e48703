//! Kinematic model: joint tree, bone frames, forward kinematics and
//! conversion between global and parent-relative rotations.
//!
//! Bone frames put the bone axis on local Y (parent joint to child joint),
//! forward on local Z and X = Y × Z. A bone's global rotation maps its local
//! frame to world axes, so in the neutral pose the child joint sits at
//! `parent + neutral · (0, l, 0)`.

use std::collections::HashMap;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{frame_from_bone_and_forward, RotationMatrix};

const H36M17: &str = include_str!("../skeletons/h36m17.toml");
const H36M21: &str = include_str!("../skeletons/h36m21.toml");

/// Names of the configurations compiled into the library.
pub const BUILTIN_SKELETONS: [&str; 2] = ["h36m17", "h36m21"];

/// Text of a built-in configuration, as shipped.
pub fn builtin_config(name: &str) -> Option<&'static str> {
    match name {
        "h36m17" => Some(H36M17),
        "h36m21" => Some(H36M21),
        _ => None,
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SkeletonDoc {
    name: String,
    #[serde(default)]
    flip_pairs: Vec<[String; 2]>,
    #[serde(default)]
    pck_subset: Vec<String>,
    joints: Vec<JointDoc>,
    #[serde(default)]
    bones: Vec<BoneDoc>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct JointDoc {
    name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    parent: Option<String>,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BoneDoc {
    child: String,
    #[serde(default = "yes")]
    rotating: bool,
    #[serde(default)]
    reversed: bool,
    length_mm: f64,
    neutral: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bone {
    pub parent: usize,
    pub child: usize,
    pub rotating: bool,
    /// Realignment flips the bone axis for this bone.
    pub reversed: bool,
    /// T-pose world rotation of the bone frame.
    pub neutral: RotationMatrix,
}

/// Per-bone lengths in millimeters, parallel to [`Skeleton::bones`].
#[derive(Debug, Clone, PartialEq)]
pub struct BoneLengths(Vec<f64>);

impl BoneLengths {
    pub fn new(lengths: Vec<f64>) -> Result<Self> {
        if let Some(i) = lengths.iter().position(|l| !(*l > 0.0 && l.is_finite())) {
            return Err(Error::InvalidArgument(format!(
                "bone length {i} must be positive, got {}",
                lengths[i]
            )));
        }
        Ok(BoneLengths(lengths))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// All lengths multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(self.0.iter().map(|l| l * factor).collect())
    }
}

impl std::ops::Index<usize> for BoneLengths {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RotationConvention {
    Global,
    ParentRelative,
}

/// Root translation plus one rotation per rotating bone.
#[derive(Debug, Clone, PartialEq)]
pub struct Pose {
    pub root_position: Vector3<f64>,
    pub rotations: Vec<RotationMatrix>,
    pub convention: RotationConvention,
}

impl Pose {
    pub fn global(root_position: Vector3<f64>, rotations: Vec<RotationMatrix>) -> Self {
        Pose {
            root_position,
            rotations,
            convention: RotationConvention::Global,
        }
    }
}

/// One position per joint, millimeters.
#[derive(Debug, Clone, PartialEq)]
pub struct JointPositions(pub Vec<Vector3<f64>>);

impl JointPositions {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl std::ops::Index<usize> for JointPositions {
    type Output = Vector3<f64>;

    fn index(&self, i: usize) -> &Vector3<f64> {
        &self.0[i]
    }
}

#[derive(Debug, Clone)]
pub struct Skeleton {
    name: String,
    joints: Vec<String>,
    parents: Vec<Option<usize>>,
    root: usize,
    bones: Vec<Bone>,
    /// Bone indices carrying free rotations, in config order.
    rotating: Vec<usize>,
    /// Bone index -> slot in `rotating`.
    slot: Vec<Option<usize>>,
    /// Bone index -> index of the bone ending at its parent joint.
    parent_bone: Vec<Option<usize>>,
    /// Bones ordered so every bone comes after its parent bone.
    order: Vec<usize>,
    flip_pairs: Vec<(usize, usize)>,
    /// Joint index -> mirrored joint index.
    joint_mirror: Vec<usize>,
    /// Rotating slot -> mirrored rotating slot.
    slot_mirror: Vec<usize>,
    pck_subset: Vec<usize>,
    default_lengths: BoneLengths,
}

impl Skeleton {
    /// A built-in skeleton by name (`h36m17` or `h36m21`).
    pub fn builtin(name: &str) -> Result<Self> {
        let text = builtin_config(name)
            .ok_or_else(|| Error::config("name", format!("unknown built-in skeleton `{name}`")))?;
        Self::from_toml_str(text)
    }

    /// The 17-joint, 15-rotation default.
    pub fn h36m17() -> Self {
        Self::builtin("h36m17").expect("built-in skeleton is valid")
    }

    pub fn h36m21() -> Self {
        Self::builtin("h36m21").expect("built-in skeleton is valid")
    }

    /// Parses and validates a skeleton config document.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let doc: SkeletonDoc = toml::from_str(text).map_err(|e| {
            let path = e
                .span()
                .map(|s| format!("byte {}..{}", s.start, s.end))
                .unwrap_or_else(|| "<document>".into());
            Error::config(path, e.message())
        })?;
        Self::from_doc(doc)
    }

    fn from_doc(doc: SkeletonDoc) -> Result<Self> {
        let n = doc.joints.len();
        if n == 0 {
            return Err(Error::config("joints", "no joints defined"));
        }
        let mut index = HashMap::new();
        for (i, j) in doc.joints.iter().enumerate() {
            if index.insert(j.name.as_str(), i).is_some() {
                return Err(Error::config(
                    format!("joints[{i}].name"),
                    format!("duplicate joint `{}`", j.name),
                ));
            }
        }
        let lookup = |path: String, name: &str| {
            index
                .get(name)
                .copied()
                .ok_or_else(|| Error::config(path, format!("unknown joint `{name}`")))
        };

        let mut parents = vec![None; n];
        for (i, j) in doc.joints.iter().enumerate() {
            if let Some(p) = &j.parent {
                let p = lookup(format!("joints[{i}].parent"), p)?;
                if p == i {
                    return Err(Error::config(
                        format!("joints[{i}].parent"),
                        format!("joint `{}` is its own parent", j.name),
                    ));
                }
                parents[i] = Some(p);
            }
        }
        let roots: Vec<usize> = (0..n).filter(|&i| parents[i].is_none()).collect();
        if roots.len() != 1 {
            return Err(Error::config(
                "joints",
                format!("expected exactly one root joint, found {}", roots.len()),
            ));
        }
        let root = roots[0];
        for start in 0..n {
            let mut cur = start;
            for _ in 0..=n {
                match parents[cur] {
                    Some(p) => cur = p,
                    None => break,
                }
            }
            if cur != root {
                return Err(Error::config(
                    format!("joints[{start}].parent"),
                    format!("joint `{}` is on a cycle", doc.joints[start].name),
                ));
            }
        }

        let mut bones = Vec::with_capacity(doc.bones.len());
        let mut bone_of_child = vec![None; n];
        let mut lengths = Vec::with_capacity(doc.bones.len());
        for (b, bd) in doc.bones.iter().enumerate() {
            let child = lookup(format!("bones[{b}].child"), &bd.child)?;
            let parent = parents[child].ok_or_else(|| {
                Error::config(format!("bones[{b}].child"), "the root joint cannot end a bone")
            })?;
            if bone_of_child[child].replace(b).is_some() {
                return Err(Error::config(
                    format!("bones[{b}].child"),
                    format!("joint `{}` already ends a bone", bd.child),
                ));
            }
            let neutral = RotationMatrix::from_row_slice(&bd.neutral)
                .map_err(|e| Error::config(format!("bones[{b}].neutral"), e.to_string()))?;
            if !(bd.length_mm > 0.0 && bd.length_mm.is_finite()) {
                return Err(Error::config(
                    format!("bones[{b}].length_mm"),
                    "length must be positive",
                ));
            }
            lengths.push(bd.length_mm);
            bones.push(Bone {
                parent,
                child,
                rotating: bd.rotating,
                reversed: bd.reversed,
                neutral,
            });
        }
        if let Some(j) = (0..n).find(|&j| j != root && bone_of_child[j].is_none()) {
            return Err(Error::config(
                "bones",
                format!("joint `{}` has no bone", doc.joints[j].name),
            ));
        }

        let parent_bone: Vec<Option<usize>> =
            bones.iter().map(|b| bone_of_child[b.parent]).collect();
        let mut depth = vec![0usize; bones.len()];
        for b in 0..bones.len() {
            let mut cur = parent_bone[b];
            while let Some(p) = cur {
                depth[b] += 1;
                cur = parent_bone[p];
            }
        }
        let mut order: Vec<usize> = (0..bones.len()).collect();
        order.sort_by_key(|&b| (depth[b], b));

        let rotating: Vec<usize> = (0..bones.len()).filter(|&b| bones[b].rotating).collect();
        let mut slot = vec![None; bones.len()];
        for (s, &b) in rotating.iter().enumerate() {
            slot[b] = Some(s);
        }

        let mut joint_mirror: Vec<usize> = (0..n).collect();
        let mut flip_pairs = Vec::with_capacity(doc.flip_pairs.len());
        let mut seen = vec![false; n];
        for (i, [l, r]) in doc.flip_pairs.iter().enumerate() {
            let l = lookup(format!("flip_pairs[{i}][0]"), l)?;
            let r = lookup(format!("flip_pairs[{i}][1]"), r)?;
            for j in [l, r] {
                if std::mem::replace(&mut seen[j], true) || l == r {
                    return Err(Error::config(
                        format!("flip_pairs[{i}]"),
                        format!("joint `{}` appears more than once", doc.joints[j].name),
                    ));
                }
            }
            joint_mirror[l] = r;
            joint_mirror[r] = l;
            flip_pairs.push((l, r));
        }
        let mut slot_mirror = Vec::with_capacity(rotating.len());
        for &b in &rotating {
            let bone = &bones[b];
            let mirrored = bone_of_child[joint_mirror[bone.child]]
                .filter(|&m| bones[m].parent == joint_mirror[bone.parent])
                .ok_or_else(|| {
                    Error::config(
                        "flip_pairs",
                        format!("bone ending at `{}` has no mirror bone", doc.joints[bone.child].name),
                    )
                })?;
            let s = slot[mirrored].ok_or_else(|| {
                Error::config(
                    "flip_pairs",
                    format!(
                        "bones ending at `{}` and `{}` disagree on `rotating`",
                        doc.joints[bone.child].name, doc.joints[bones[mirrored].child].name
                    ),
                )
            })?;
            slot_mirror.push(s);
        }

        let pck_subset = doc
            .pck_subset
            .iter()
            .enumerate()
            .map(|(i, name)| lookup(format!("pck_subset[{i}]"), name))
            .collect::<Result<Vec<_>>>()?;

        Ok(Skeleton {
            name: doc.name,
            joints: doc.joints.into_iter().map(|j| j.name).collect(),
            parents,
            root,
            bones,
            rotating,
            slot,
            parent_bone,
            order,
            flip_pairs,
            joint_mirror,
            slot_mirror,
            pck_subset,
            default_lengths: BoneLengths(lengths),
        })
    }

    /// Serializes this skeleton back to a config document (without comments).
    pub fn to_toml_string(&self) -> String {
        let doc = SkeletonDoc {
            name: self.name.clone(),
            flip_pairs: self
                .flip_pairs
                .iter()
                .map(|&(l, r)| [self.joints[l].clone(), self.joints[r].clone()])
                .collect(),
            pck_subset: self.pck_subset.iter().map(|&j| self.joints[j].clone()).collect(),
            joints: self
                .joints
                .iter()
                .zip(&self.parents)
                .map(|(name, p)| JointDoc {
                    name: name.clone(),
                    parent: p.map(|p| self.joints[p].clone()),
                })
                .collect(),
            bones: self
                .bones
                .iter()
                .zip(self.default_lengths.as_slice())
                .map(|(b, &l)| BoneDoc {
                    child: self.joints[b.child].clone(),
                    rotating: b.rotating,
                    reversed: b.reversed,
                    length_mm: l,
                    neutral: b.neutral.to_row_array().to_vec(),
                })
                .collect(),
        };
        toml::to_string(&doc).expect("skeleton document serializes")
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn joints(&self) -> &[String] {
        &self.joints
    }

    pub fn joint_index(&self, name: &str) -> Option<usize> {
        self.joints.iter().position(|j| j == name)
    }

    pub fn parent(&self, joint: usize) -> Option<usize> {
        self.parents[joint]
    }

    pub fn root(&self) -> usize {
        self.root
    }

    pub fn bones(&self) -> &[Bone] {
        &self.bones
    }

    /// The bone ending at bone `b`'s parent joint, if any.
    pub fn parent_bone(&self, b: usize) -> Option<usize> {
        self.parent_bone[b]
    }

    /// Bone indices of the rotating bones, in rotation-slot order.
    pub fn rotating_bones(&self) -> &[usize] {
        &self.rotating
    }

    /// The rotating bone stored in rotation slot `slot`.
    pub fn rotating_bone(&self, slot: usize) -> &Bone {
        &self.bones[self.rotating[slot]]
    }

    pub fn flip_pairs(&self) -> &[(usize, usize)] {
        &self.flip_pairs
    }

    /// Joint index seen at `joint` after a left/right mirror.
    pub fn mirror_joint(&self, joint: usize) -> usize {
        self.joint_mirror[joint]
    }

    /// Rotation slot of the mirror image of the bone in `slot`.
    pub fn mirror_slot(&self, slot: usize) -> usize {
        self.slot_mirror[slot]
    }

    pub fn pck_subset(&self) -> &[usize] {
        &self.pck_subset
    }

    pub fn default_lengths(&self) -> &BoneLengths {
        &self.default_lengths
    }

    pub fn n_joints(&self) -> usize {
        self.joints.len()
    }

    pub fn n_rotations(&self) -> usize {
        self.rotating.len()
    }

    /// Joint keypoints plus four orientation keypoints per rotating bone.
    pub fn n_keypoints(&self) -> usize {
        self.n_joints() + 4 * self.n_rotations()
    }

    /// Pose with every rotating bone at its neutral frame.
    pub fn neutral_pose(&self, root_position: Vector3<f64>) -> Pose {
        Pose::global(
            root_position,
            self.rotating.iter().map(|&b| self.bones[b].neutral).collect(),
        )
    }

    fn check_pose(&self, pose: &Pose, convention: RotationConvention) -> Result<()> {
        if pose.convention != convention {
            return Err(Error::InvalidArgument(format!(
                "expected a {convention:?} pose, got {:?}",
                pose.convention
            )));
        }
        if pose.rotations.len() != self.n_rotations() {
            return Err(Error::count("pose rotations", self.n_rotations(), pose.rotations.len()));
        }
        Ok(())
    }

    fn check_lengths(&self, lengths: &BoneLengths) -> Result<()> {
        if lengths.len() != self.bones.len() {
            return Err(Error::count("bone lengths", self.bones.len(), lengths.len()));
        }
        Ok(())
    }

    /// Global rotation of a bone given the global rotation of its parent
    /// bone (`None` at the root) and, for rotating bones, its own rotation.
    fn carried(&self, b: usize, parent_global: Option<&RotationMatrix>) -> RotationMatrix {
        let bone = &self.bones[b];
        match (self.parent_bone[b], parent_global) {
            (Some(p), Some(pg)) => *pg * self.bones[p].neutral.transpose() * bone.neutral,
            _ => bone.neutral,
        }
    }

    /// World rotation of every bone, including fixed ones.
    pub fn bone_globals(&self, pose: &Pose) -> Result<Vec<RotationMatrix>> {
        self.check_pose(pose, RotationConvention::Global)?;
        let mut globals = vec![RotationMatrix::identity(); self.bones.len()];
        for &b in &self.order {
            globals[b] = match self.slot[b] {
                Some(s) => pose.rotations[s],
                None => self.carried(b, self.parent_bone[b].map(|p| &globals[p])),
            };
        }
        Ok(globals)
    }

    /// Joint positions for a global-convention pose.
    pub fn forward_kinematics(&self, pose: &Pose, lengths: &BoneLengths) -> Result<JointPositions> {
        self.check_lengths(lengths)?;
        let globals = self.bone_globals(pose)?;
        let mut positions = vec![Vector3::zeros(); self.n_joints()];
        positions[self.root] = pose.root_position;
        for &b in &self.order {
            let bone = &self.bones[b];
            positions[bone.child] =
                positions[bone.parent] + globals[b].apply(&Vector3::new(0.0, lengths[b], 0.0));
        }
        Ok(JointPositions(positions))
    }

    /// `R_local = R_parentᵀ · R_global`, with the parent taken as identity
    /// for bones attached to the root.
    pub fn globals_to_locals(&self, pose: &Pose) -> Result<Pose> {
        let globals = self.bone_globals(pose)?;
        let rotations = self
            .rotating
            .iter()
            .map(|&b| match self.parent_bone[b] {
                Some(p) => globals[p].transpose() * globals[b],
                None => globals[b],
            })
            .collect();
        Ok(Pose {
            root_position: pose.root_position,
            rotations,
            convention: RotationConvention::ParentRelative,
        })
    }

    pub fn locals_to_globals(&self, pose: &Pose) -> Result<Pose> {
        self.check_pose(pose, RotationConvention::ParentRelative)?;
        let mut globals = vec![RotationMatrix::identity(); self.bones.len()];
        for &b in &self.order {
            let parent = self.parent_bone[b].map(|p| globals[p]);
            globals[b] = match (self.slot[b], parent) {
                (Some(s), Some(pg)) => pg * pose.rotations[s],
                (Some(s), None) => pose.rotations[s],
                (None, pg) => self.carried(b, pg.as_ref()),
            };
        }
        Ok(Pose::global(
            pose.root_position,
            self.rotating.iter().map(|&b| globals[b]).collect(),
        ))
    }

    /// Per-bone mean parent-child distance over a collection of frames.
    pub fn average_bone_lengths(&self, frames: &[JointPositions]) -> Result<BoneLengths> {
        if frames.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let mut sums = vec![0.0; self.bones.len()];
        for frame in frames {
            if frame.len() != self.n_joints() {
                return Err(Error::count("joint positions", self.n_joints(), frame.len()));
            }
            for (sum, bone) in sums.iter_mut().zip(&self.bones) {
                *sum += (frame[bone.child] - frame[bone.parent]).norm();
            }
        }
        let n = frames.len() as f64;
        BoneLengths::new(sums.into_iter().map(|s| s / n).collect())
    }

    /// Rebuilds a bone rotation in this skeleton's frame convention from
    /// joint positions and an externally annotated rotation: Y follows the
    /// bone (flipped for `reversed` bones), the annotation's Z column is kept
    /// as forward, X completes the frame.
    pub fn realign_rotation(
        &self,
        slot: usize,
        positions: &JointPositions,
        annotated: &RotationMatrix,
    ) -> Result<RotationMatrix> {
        let bone = self.rotating_bone(slot);
        let dir = positions[bone.child] - positions[bone.parent];
        frame_from_bone_and_forward(&dir, &annotated.column(2), bone.reversed)
    }
}
