//! JSON-lines dataset and solved-pose files: one frame per line.
//!
//! Coordinates are written with the shortest representation that parses
//! back to the same `f64`, so files round-trip exactly. Missing
//! coordinates are `null`.

use std::io::{BufRead, Write};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::FrameRecord;
use crate::error::{Error, Result};
use crate::geometry::RotationMatrix;
use crate::okp::{KeypointSet, Space};
use crate::skeleton::{JointPositions, Pose, RotationConvention, Skeleton};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FrameLine {
    schema: u32,
    skeleton: String,
    frame: String,
    #[serde(default = "default_group")]
    group: String,
    space: Space,
    keypoints: Vec<Option<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pred: Option<Vec<Option<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pred_flipped: Option<Vec<Option<f64>>>,
    /// Global rotations, 9 row-major values per rotating bone.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    rotations: Option<Vec<f64>>,
    #[serde(default = "default_lengths")]
    lengths: String,
}

fn default_group() -> String {
    "all".to_string()
}

fn default_lengths() -> String {
    "default".to_string()
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SolvedLine {
    schema: u32,
    skeleton: String,
    frame: String,
    group: String,
    root: [f64; 3],
    rotations: Vec<f64>,
    positions: Vec<f64>,
}

/// A solved pose and its reconstructed joints.
#[derive(Debug, Clone, PartialEq)]
pub struct SolvedFrame {
    pub frame_id: String,
    pub group: String,
    /// Global convention.
    pub pose: Pose,
    pub positions: JointPositions,
}

fn flatten_points(points: &[Vector3<f64>]) -> Vec<Option<f64>> {
    points
        .iter()
        .flat_map(|p| p.iter().copied().collect::<Vec<_>>())
        .map(|v| v.is_finite().then_some(v))
        .collect()
}

fn unflatten_points(values: &[Option<f64>], what: &'static str, expected: usize) -> Result<Vec<Vector3<f64>>> {
    if values.len() != 3 * expected {
        return Err(Error::count(what, 3 * expected, values.len()));
    }
    Ok(values
        .chunks_exact(3)
        .map(|c| Vector3::from_fn(|i, _| c[i].unwrap_or(f64::NAN)))
        .collect())
}

fn flatten_rotations(rotations: &[RotationMatrix]) -> Vec<f64> {
    rotations.iter().flat_map(|r| r.to_row_array()).collect()
}

fn unflatten_rotations(values: &[f64], expected: usize) -> Result<Vec<RotationMatrix>> {
    if values.len() != 9 * expected {
        return Err(Error::count("rotation values", 9 * expected, values.len()));
    }
    values.chunks_exact(9).map(RotationMatrix::from_row_slice).collect()
}

fn as_global(pose: &Pose, skel: &Skeleton) -> Result<Pose> {
    match pose.convention {
        RotationConvention::Global => Ok(pose.clone()),
        RotationConvention::ParentRelative => skel.locals_to_globals(pose),
    }
}

fn check_header(schema: u32, skeleton: &str, skel: &Skeleton) -> Result<()> {
    if schema != SCHEMA_VERSION {
        return Err(Error::InvalidArgument(format!(
            "unsupported schema {schema}, expected {SCHEMA_VERSION}"
        )));
    }
    if skeleton != skel.name() {
        return Err(Error::InvalidArgument(format!(
            "file is for skeleton `{skeleton}`, not `{}`",
            skel.name()
        )));
    }
    Ok(())
}

/// Calls `parse` on every non-blank line, tagging errors with the line
/// number.
fn read_lines<T>(reader: impl BufRead, context: &str, mut parse: impl FnMut(&str) -> Result<T>) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let item = parse(&line).map_err(|e| match e {
            Error::Io(e) => Error::Io(e),
            e => Error::format(format!("{context} line {}", i + 1), e),
        })?;
        out.push(item);
    }
    if out.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(out)
}

fn write_line(writer: &mut impl Write, value: &impl Serialize) -> Result<()> {
    serde_json::to_writer(&mut *writer, value).map_err(|e| Error::format("serialize", e))?;
    writer.write_all(b"\n")?;
    Ok(())
}

pub fn write_dataset(mut writer: impl Write, frames: &[FrameRecord], skel: &Skeleton) -> Result<()> {
    for f in frames {
        f.gt_keypoints.check_layout(skel)?;
        let line = FrameLine {
            schema: SCHEMA_VERSION,
            skeleton: skel.name().to_string(),
            frame: f.frame_id.clone(),
            group: f.group.clone(),
            space: f.gt_keypoints.space,
            keypoints: flatten_points(&f.gt_keypoints.points),
            pred: f.pred_keypoints.as_ref().map(|p| flatten_points(&p.points)),
            pred_flipped: f.pred_flipped.as_ref().map(|p| flatten_points(&p.points)),
            rotations: match &f.gt_pose {
                Some(p) => Some(flatten_rotations(&as_global(p, skel)?.rotations)),
                None => None,
            },
            lengths: f.lengths_id.clone(),
        };
        write_line(&mut writer, &line)?;
    }
    writer.flush()?;
    Ok(())
}

/// Reads a dataset written for `skel`. The ground-truth pose's root is
/// taken from the root joint keypoint.
pub fn read_dataset(reader: impl BufRead, skel: &Skeleton) -> Result<Vec<FrameRecord>> {
    let n = skel.n_keypoints();
    read_lines(reader, "dataset", |text| {
        let line: FrameLine = serde_json::from_str(text).map_err(|e| Error::format("json", e))?;
        check_header(line.schema, &line.skeleton, skel)?;
        let set = |values: &[Option<f64>], what| -> Result<KeypointSet> {
            Ok(KeypointSet::new(unflatten_points(values, what, n)?, line.space))
        };
        let gt_keypoints = set(&line.keypoints, "keypoint values")?;
        let gt_pose = match &line.rotations {
            Some(r) => Some(Pose::global(
                gt_keypoints.points[skel.root()],
                unflatten_rotations(r, skel.n_rotations())?,
            )),
            None => None,
        };
        Ok(FrameRecord {
            frame_id: line.frame.clone(),
            group: line.group.clone(),
            gt_pose,
            pred_keypoints: line.pred.as_deref().map(|p| set(p, "prediction values")).transpose()?,
            pred_flipped: line
                .pred_flipped
                .as_deref()
                .map(|p| set(p, "flipped prediction values"))
                .transpose()?,
            gt_keypoints,
            lengths_id: line.lengths.clone(),
        })
    })
}

pub fn write_solved(mut writer: impl Write, solved: &[SolvedFrame], skel: &Skeleton) -> Result<()> {
    for s in solved {
        let pose = as_global(&s.pose, skel)?;
        let line = SolvedLine {
            schema: SCHEMA_VERSION,
            skeleton: skel.name().to_string(),
            frame: s.frame_id.clone(),
            group: s.group.clone(),
            root: pose.root_position.into(),
            rotations: flatten_rotations(&pose.rotations),
            positions: s.positions.0.iter().flat_map(|p| p.iter().copied().collect::<Vec<_>>()).collect(),
        };
        write_line(&mut writer, &line)?;
    }
    writer.flush()?;
    Ok(())
}

pub fn read_solved(reader: impl BufRead, skel: &Skeleton) -> Result<Vec<SolvedFrame>> {
    read_lines(reader, "solved", |text| {
        let line: SolvedLine = serde_json::from_str(text).map_err(|e| Error::format("json", e))?;
        check_header(line.schema, &line.skeleton, skel)?;
        if line.positions.len() != 3 * skel.n_joints() {
            return Err(Error::count("position values", 3 * skel.n_joints(), line.positions.len()));
        }
        Ok(SolvedFrame {
            frame_id: line.frame,
            group: line.group,
            pose: Pose::global(Vector3::from(line.root), unflatten_rotations(&line.rotations, skel.n_rotations())?),
            positions: JointPositions(line.positions.chunks_exact(3).map(Vector3::from_column_slice).collect()),
        })
    })
}
