use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::okp::KeypointSet;

/// `(1 − s)·gt + s·pred` per point: `s = 0` gives `gt`, `s = 1` gives
/// `pred`, larger values amplify the detector error.
pub fn inject_error_scale(pred: &KeypointSet, gt: &KeypointSet, s: f64) -> Result<KeypointSet> {
    pred.check_compatible(gt)?;
    if !(s >= 0.0 && s.is_finite()) {
        return Err(Error::InvalidArgument(format!("error scale must be >= 0, got {s}")));
    }
    let points = pred
        .points
        .iter()
        .zip(&gt.points)
        .map(|(p, g)| g * (1.0 - s) + p * s)
        .collect();
    Ok(KeypointSet::new(points, gt.space))
}

/// Adds i.i.d. zero-mean Gaussian noise to every coordinate.
pub fn inject_gaussian_noise(kps: &KeypointSet, sigma: f64, seed: u64) -> Result<KeypointSet> {
    let normal = Normal::new(0.0, sigma)
        .ok()
        .filter(|_| sigma >= 0.0 && sigma.is_finite())
        .ok_or_else(|| Error::InvalidArgument(format!("sigma must be >= 0, got {sigma}")))?;
    if sigma == 0.0 {
        return Ok(kps.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points = kps
        .points
        .iter()
        .map(|p| p + Vector3::from_fn(|_, _| normal.sample(&mut rng)))
        .collect();
    Ok(KeypointSet::new(points, kps.space))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::okp::Space;

    fn set(points: Vec<[f64; 3]>) -> KeypointSet {
        KeypointSet::new(points.into_iter().map(Vector3::from).collect(), Space::WorldMetric)
    }

    #[test]
    fn scale_endpoints_are_exact() {
        let gt = set(vec![[0.1, 0.7, -3.3], [1000.25, -17.0, 4321.123]]);
        let pred = set(vec![[0.3, 0.1, -2.9], [990.5, -20.0, 4300.0]]);
        assert_eq!(inject_error_scale(&pred, &gt, 0.0).unwrap(), gt);
        assert_eq!(inject_error_scale(&pred, &gt, 1.0).unwrap(), pred);
        let doubled = inject_error_scale(&pred, &gt, 2.0).unwrap();
        for ((d, g), p) in doubled.points.iter().zip(&gt.points).zip(&pred.points) {
            assert!((d - (g + (p - g) * 2.0)).norm() < 1e-9);
        }
        assert!(inject_error_scale(&pred, &gt, -1.0).is_err());
    }

    #[test]
    fn scale_rejects_space_mismatch() {
        let gt = set(vec![[0.0; 3]]);
        let mut pred = gt.clone();
        pred.space = Space::NormalizedImage;
        assert!(matches!(inject_error_scale(&pred, &gt, 1.0), Err(Error::SpaceMismatch { .. })));
    }

    #[test]
    fn noise_zero_sigma_and_reproducibility() {
        let kps = set(vec![[1.0, 2.0, 3.0]; 10]);
        assert_eq!(inject_gaussian_noise(&kps, 0.0, 9).unwrap(), kps);
        let a = inject_gaussian_noise(&kps, 5.0, 9).unwrap();
        assert_eq!(a, inject_gaussian_noise(&kps, 5.0, 9).unwrap());
        assert_ne!(a, inject_gaussian_noise(&kps, 5.0, 10).unwrap());
        assert!(inject_gaussian_noise(&kps, -1.0, 9).is_err());
    }

    #[test]
    fn noise_mean_within_clt_bound() {
        let n = 100_000;
        let sigma = 3.0;
        let kps = set(vec![[0.0; 3]; n]);
        let noisy = inject_gaussian_noise(&kps, sigma, 1234).unwrap();
        let samples = 3 * n;
        let mean: f64 = noisy.points.iter().map(|p| p.sum()).sum::<f64>() / samples as f64;
        assert!(mean.abs() < 3.0 * sigma / (samples as f64).sqrt(), "mean {mean}");
        let var: f64 = noisy.points.iter().map(|p| p.norm_squared()).sum::<f64>() / samples as f64;
        assert!((var.sqrt() - sigma).abs() < 0.02 * sigma);
    }
}
