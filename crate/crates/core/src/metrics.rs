//! Position and rotation metrics, training losses and report aggregation.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt::Write as _;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{geodesic_angle, umeyama_align, RotationMatrix, WeightedCorrespondences};
use crate::okp::KeypointSet;
use crate::skeleton::{JointPositions, Skeleton};

/// PCK threshold in millimeters.
pub const PCK_THRESHOLD_MM: f64 = 150.0;

fn check_counts(pred: &JointPositions, gt: &JointPositions) -> Result<()> {
    if pred.len() != gt.len() {
        return Err(Error::count("joints", gt.len(), pred.len()));
    }
    if gt.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(())
}

fn relative_to(p: &JointPositions, root: Option<usize>) -> Vec<Vector3<f64>> {
    let offset = root.map(|r| p[r]).unwrap_or_else(Vector3::zeros);
    p.0.iter().map(|v| v - offset).collect()
}

/// Mean per-joint position error. With `root = Some(r)` both skeletons are
/// first translated so joint `r` sits at the origin.
pub fn mpjpe(pred: &JointPositions, gt: &JointPositions, root: Option<usize>) -> Result<f64> {
    check_counts(pred, gt)?;
    let p = relative_to(pred, root);
    let g = relative_to(gt, root);
    Ok(p.iter().zip(&g).map(|(a, b)| (a - b).norm()).sum::<f64>() / g.len() as f64)
}

/// `pred` mapped onto `gt` by least-squares alignment over all joints.
pub fn procrustes_align(
    pred: &JointPositions,
    gt: &JointPositions,
    with_scale: bool,
) -> Result<JointPositions> {
    check_counts(pred, gt)?;
    let corr = WeightedCorrespondences::unweighted(pred.0.clone(), gt.0.clone())?;
    let t = umeyama_align(&corr, with_scale)?;
    Ok(JointPositions(pred.0.iter().map(|p| t.apply(p)).collect()))
}

/// Protocol-2 error: MPJPE after aligning `pred` to `gt` (similarity
/// alignment when `with_scale`, rigid otherwise).
pub fn pmpjpe(pred: &JointPositions, gt: &JointPositions, with_scale: bool) -> Result<f64> {
    mpjpe(&procrustes_align(pred, gt, with_scale)?, gt, None)
}

/// Fraction of `subset` joints whose error is strictly below `threshold`.
/// With `root = Some(r)` errors are root-relative.
pub fn pck(
    pred: &JointPositions,
    gt: &JointPositions,
    threshold: f64,
    subset: &[usize],
    root: Option<usize>,
) -> Result<f64> {
    check_counts(pred, gt)?;
    if subset.is_empty() {
        return Err(Error::InvalidArgument("empty PCK subset".into()));
    }
    if let Some(&j) = subset.iter().find(|&&j| j >= gt.len()) {
        return Err(Error::InvalidArgument(format!("PCK joint {j} out of range")));
    }
    let p = relative_to(pred, root);
    let g = relative_to(gt, root);
    let hits = subset
        .iter()
        .filter(|&&j| (p[j] - g[j]).norm() < threshold)
        .count();
    Ok(hits as f64 / subset.len() as f64)
}

fn separations(pred: &[RotationMatrix], gt: &[RotationMatrix]) -> Result<Vec<f64>> {
    if pred.len() != gt.len() {
        return Err(Error::count("rotations", gt.len(), pred.len()));
    }
    if gt.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(pred.iter().zip(gt).map(|(p, g)| geodesic_angle(g, p)).collect())
}

/// Mean angular separation, radians.
pub fn mpjas(pred: &[RotationMatrix], gt: &[RotationMatrix]) -> Result<f64> {
    let s = separations(pred, gt)?;
    Ok(s.iter().sum::<f64>() / s.len() as f64)
}

/// Mean of `1 − θ/π` over rotation pairs.
pub fn maa(pred: &[RotationMatrix], gt: &[RotationMatrix]) -> Result<f64> {
    let s = separations(pred, gt)?;
    Ok(s.iter().map(|t| 1.0 - t / PI).sum::<f64>() / s.len() as f64)
}

/// Mean Euclidean distance over every keypoint, joints and markers alike.
pub fn loss_mpjpe(pred: &KeypointSet, gt: &KeypointSet) -> Result<f64> {
    pred.check_compatible(gt)?;
    if gt.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(pred
        .points
        .iter()
        .zip(&gt.points)
        .map(|(a, b)| (a - b).norm())
        .sum::<f64>()
        / gt.len() as f64)
}

/// Centroid-relative structure loss: for each rotating bone's six markers,
/// the summed distance between prediction and ground truth after both are
/// centered on their own group centroid.
pub fn loss_cnt(pred: &KeypointSet, gt: &KeypointSet, skel: &Skeleton) -> Result<f64> {
    pred.check_compatible(gt)?;
    gt.check_layout(skel)?;
    let mut total = 0.0;
    for slot in 0..skel.n_rotations() {
        let p = pred.bone_markers(skel, slot);
        let g = gt.bone_markers(skel, slot);
        let pc = p.iter().sum::<Vector3<f64>>() / 6.0;
        let gc = g.iter().sum::<Vector3<f64>>() / 6.0;
        total += p
            .iter()
            .zip(&g)
            .map(|(a, b)| ((a - pc) - (b - gc)).norm())
            .sum::<f64>();
    }
    Ok(total)
}

/// Metric values for one frame or one aggregate.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricValues {
    /// Protocol 1 MPJPE, mm.
    pub mpjpe_p1: f64,
    /// Protocol 2 (aligned) MPJPE, mm.
    pub mpjpe_p2: f64,
    pub pck: f64,
    /// PCK after alignment.
    pub ppck: f64,
    /// Radians.
    pub mpjas: f64,
    pub maa: f64,
}

impl MetricValues {
    fn fields(&self) -> [f64; 6] {
        [self.mpjpe_p1, self.mpjpe_p2, self.pck, self.ppck, self.mpjas, self.maa]
    }

    fn from_fields(f: [f64; 6]) -> Self {
        MetricValues {
            mpjpe_p1: f[0],
            mpjpe_p2: f[1],
            pck: f[2],
            ppck: f[3],
            mpjas: f[4],
            maa: f[5],
        }
    }

    /// Unweighted mean, summed in input order.
    pub fn mean<'a>(values: impl IntoIterator<Item = &'a MetricValues>) -> Option<MetricValues> {
        let mut sum = [0.0; 6];
        let mut n = 0usize;
        for v in values {
            for (s, x) in sum.iter_mut().zip(v.fields()) {
                *s += x;
            }
            n += 1;
        }
        (n > 0).then(|| MetricValues::from_fields(sum.map(|s| s / n as f64)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupReport {
    pub frame_count: usize,
    #[serde(flatten)]
    pub metrics: MetricValues,
}

/// Aggregated metrics: per-group means over frames, and an overall row that
/// is the unweighted mean of the group rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub frame_count: usize,
    pub failed_frames: usize,
    #[serde(flatten)]
    pub overall: MetricValues,
    pub per_group: BTreeMap<String, GroupReport>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub failures: Vec<FrameFailure>,
}

/// A frame that could not be scored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameFailure {
    pub frame: String,
    pub error: String,
}

/// CSV header for [`MetricsReport::to_csv`].
pub const REPORT_COLUMNS: [&str; 8] = [
    "group", "frames", "mpjpe_p1", "mpjpe_p2", "pck", "ppck", "mpjas", "maa",
];

impl MetricsReport {
    /// Builds a report from `(group, metrics)` per frame, in frame order.
    pub fn aggregate(frames: &[(String, MetricValues)], failures: Vec<FrameFailure>) -> Result<Self> {
        let mut groups: BTreeMap<&str, Vec<&MetricValues>> = BTreeMap::new();
        for (g, m) in frames {
            groups.entry(g.as_str()).or_default().push(m);
        }
        let per_group: BTreeMap<String, GroupReport> = groups
            .into_iter()
            .map(|(g, ms)| {
                let metrics = MetricValues::mean(ms.iter().copied()).expect("nonempty group");
                (
                    g.to_string(),
                    GroupReport {
                        frame_count: ms.len(),
                        metrics,
                    },
                )
            })
            .collect();
        let overall =
            MetricValues::mean(per_group.values().map(|g| &g.metrics)).ok_or(Error::EmptyDataset)?;
        Ok(MetricsReport {
            frame_count: frames.len(),
            failed_frames: failures.len(),
            overall,
            per_group,
            failures,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// One row per group in name order, then an `overall` row.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(REPORT_COLUMNS).expect("in-memory write");
        let rows = self
            .per_group
            .iter()
            .map(|(g, r)| (g.as_str(), r.frame_count, &r.metrics))
            .chain(std::iter::once(("overall", self.frame_count, &self.overall)));
        for (g, n, m) in rows {
            let mut record = vec![g.to_string(), n.to_string()];
            record.extend(m.fields().iter().map(|v| v.to_string()));
            w.write_record(&record).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<16} {:>7} {:>10} {:>10} {:>7} {:>7} {:>8} {:>7}",
            "group", "frames", "MPJPE", "PMPJPE", "PCK", "PPCK", "MPJAS", "MAA"
        );
        let rows = self
            .per_group
            .iter()
            .map(|(g, r)| (g.as_str(), r.frame_count, &r.metrics))
            .chain(std::iter::once(("overall", self.frame_count, &self.overall)));
        for (g, n, m) in rows {
            let _ = writeln!(
                out,
                "{:<16} {:>7} {:>10.3} {:>10.3} {:>6.1}% {:>6.1}% {:>8.4} {:>6.1}%",
                g,
                n,
                m.mpjpe_p1,
                m.mpjpe_p2,
                100.0 * m.pck,
                100.0 * m.ppck,
                m.mpjas,
                100.0 * m.maa
            );
        }
        if self.failed_frames > 0 {
            let _ = writeln!(out, "failed frames: {}", self.failed_frames);
        }
        out
    }
}
