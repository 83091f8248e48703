//! Crosshairs decoding: one 1D heatmap per axis per keypoint, turned into a
//! coordinate by a coordinate-weighted softmax.
//!
//! Bin `i` of an `N`-bin heatmap has weight `(i + 0.5 − N/2) / (N/2)`, the
//! normalized position of its center, so uniform logits decode to exactly
//! zero. The `extend` factor widens the covered range past the image edge
//! (1.25 covers a 25% wider range).

use std::io::{Read, Write};

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::okp::{KeypointSet, Space};
use crate::skeleton::Skeleton;

/// Default range extension of the decoded coordinates.
pub const DEFAULT_EXTEND: f64 = 1.25;

const MAGIC: &[u8; 4] = b"OKH1";

#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap1D {
    logits: Vec<f64>,
}

impl Heatmap1D {
    pub fn new(logits: Vec<f64>) -> Result<Self> {
        if logits.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "heatmap needs at least 2 bins, got {}",
                logits.len()
            )));
        }
        if logits.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("heatmap logits must be finite".into()));
        }
        Ok(Heatmap1D { logits })
    }

    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    pub fn len(&self) -> usize {
        self.logits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.logits.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeatmapTriple {
    pub x: Heatmap1D,
    pub y: Heatmap1D,
    pub z: Heatmap1D,
}

impl HeatmapTriple {
    pub fn bins(&self) -> [usize; 3] {
        [self.x.len(), self.y.len(), self.z.len()]
    }
}

/// Normalized center of bin `i` out of `n`, in (−1, 1).
pub fn bin_weight(i: usize, n: usize) -> f64 {
    let half = 0.5 * n as f64;
    (i as f64 + 0.5 - half) / half
}

fn check_extend(extend: f64) -> Result<()> {
    if !(extend >= 1.0 && extend.is_finite()) {
        return Err(Error::InvalidArgument(format!("extend must be >= 1, got {extend}")));
    }
    Ok(())
}

/// `extend · Σ softmax(logits)ᵢ · wᵢ`.
pub fn soft_argmax_1d(h: &Heatmap1D, extend: f64) -> Result<f64> {
    check_extend(extend)?;
    let n = h.len();
    let max = h.logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = h.logits.iter().map(|v| (v - max).exp()).collect();
    let den: f64 = e.iter().sum();
    // Mirrored bins have exactly opposite weights; pairing them makes
    // symmetric inputs decode to exactly zero.
    let num: f64 = (0..n / 2)
        .map(|i| bin_weight(i, n) * (e[i] - e[n - 1 - i]))
        .sum();
    Ok(extend * num / den)
}

/// Decodes one keypoint per triple into a normalized-image keypoint set.
pub fn decode_keypoints(maps: &[HeatmapTriple], extend: f64, skel: &Skeleton) -> Result<KeypointSet> {
    if maps.len() != skel.n_keypoints() {
        return Err(Error::count("heatmap triples", skel.n_keypoints(), maps.len()));
    }
    let points = maps
        .iter()
        .map(|t| {
            Ok(Vector3::new(
                soft_argmax_1d(&t.x, extend)?,
                soft_argmax_1d(&t.y, extend)?,
                soft_argmax_1d(&t.z, extend)?,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(KeypointSet::new(points, Space::NormalizedImage))
}

/// Gaussian logits `−(i − c)² / (2σ²)` centered on the fractional bin `c`
/// whose weight equals `coord / extend`.
pub fn encode_gaussian(coord: f64, bins: usize, sigma_bins: f64, extend: f64) -> Result<Heatmap1D> {
    check_extend(extend)?;
    if bins < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 bins, got {bins}")));
    }
    if !(sigma_bins > 0.0 && sigma_bins.is_finite()) {
        return Err(Error::InvalidArgument(format!("sigma must be positive, got {sigma_bins}")));
    }
    if !coord.is_finite() {
        return Err(Error::InvalidArgument("coordinate must be finite".into()));
    }
    let half = 0.5 * bins as f64;
    let center = coord / extend * half + half - 0.5;
    let two_var = 2.0 * sigma_bins * sigma_bins;
    Heatmap1D::new(
        (0..bins)
            .map(|i| {
                let d = i as f64 - center;
                -d * d / two_var
            })
            .collect(),
    )
}

/// Encodes every keypoint with the given per-axis bin counts.
pub fn encode_keypoints(
    kps: &KeypointSet,
    bins: [usize; 3],
    sigma_bins: f64,
    extend: f64,
) -> Result<Vec<HeatmapTriple>> {
    kps.points
        .iter()
        .map(|p| {
            Ok(HeatmapTriple {
                x: encode_gaussian(p.x, bins[0], sigma_bins, extend)?,
                y: encode_gaussian(p.y, bins[1], sigma_bins, extend)?,
                z: encode_gaussian(p.z, bins[2], sigma_bins, extend)?,
            })
        })
        .collect()
}

/// Root-relative depth in units of `scale` millimeters.
pub fn normalize_depth(z_world: f64, root_z: f64, scale: f64) -> Result<f64> {
    check_scale(scale)?;
    Ok((z_world - root_z) / scale)
}

pub fn denormalize_depth(z_normalized: f64, root_z: f64, scale: f64) -> Result<f64> {
    check_scale(scale)?;
    Ok(z_normalized * scale + root_z)
}

/// Depth unit that makes normalized depth isotropic with x for a crop of
/// the given width.
pub fn default_depth_scale(bbox_width_mm: f64) -> f64 {
    0.5 * bbox_width_mm
}

fn check_scale(scale: f64) -> Result<()> {
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::InvalidArgument(format!("depth scale must be positive, got {scale}")));
    }
    Ok(())
}

/// Writes the binary fixture: `"OKH1"`, then keypoint count, N_x, N_y, N_z
/// as little-endian u32, then f32 logits keypoint-major, axis-major.
pub fn write_heatmaps<W: Write>(mut w: W, maps: &[HeatmapTriple]) -> Result<()> {
    let bins = maps.first().map(HeatmapTriple::bins).unwrap_or([2, 2, 2]);
    if let Some(k) = maps.iter().position(|t| t.bins() != bins) {
        return Err(Error::InvalidArgument(format!(
            "heatmap {k} has bins {:?}, expected {bins:?}",
            maps[k].bins()
        )));
    }
    let to_u32 = |v: usize| {
        u32::try_from(v).map_err(|_| Error::InvalidArgument(format!("{v} does not fit in u32")))
    };
    w.write_all(MAGIC)?;
    w.write_all(&to_u32(maps.len())?.to_le_bytes())?;
    for b in bins {
        w.write_all(&to_u32(b)?.to_le_bytes())?;
    }
    for t in maps {
        for axis in [&t.x, &t.y, &t.z] {
            for &v in axis.logits() {
                w.write_all(&(v as f32).to_le_bytes())?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_heatmaps<R: Read>(mut r: R) -> Result<Vec<HeatmapTriple>> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|e| Error::format("heatmap header", e))?;
    if &magic != MAGIC {
        return Err(Error::format("heatmap header", format!("bad magic {magic:?}")));
    }
    let mut read_u32 = |what: &str| -> Result<usize> {
        let mut buf = [0u8; 4];
        r.read_exact(&mut buf)
            .map_err(|e| Error::format(format!("heatmap header {what}"), e))?;
        Ok(u32::from_le_bytes(buf) as usize)
    };
    let count = read_u32("count")?;
    let bins = [read_u32("N_x")?, read_u32("N_y")?, read_u32("N_z")?];
    let mut read_axis = |k: usize, n: usize| -> Result<Heatmap1D> {
        let mut buf = vec![0u8; 4 * n];
        r.read_exact(&mut buf)
            .map_err(|e| Error::format(format!("heatmap {k}"), e))?;
        let logits = buf
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        Heatmap1D::new(logits).map_err(|e| Error::format(format!("heatmap {k}"), e))
    };
    (0..count)
        .map(|k| {
            Ok(HeatmapTriple {
                x: read_axis(k, bins[0])?,
                y: read_axis(k, bins[1])?,
                z: read_axis(k, bins[2])?,
            })
        })
        .collect()
}
