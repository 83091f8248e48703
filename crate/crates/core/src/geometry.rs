//! Rotation types, SO(3) distances and weighted point-set alignment.
//!
//! Everything here is a pure function of its arguments. `random_rotation`
//! only advances the caller's generator.

use std::f64::consts::PI;
use std::ops::Mul;

use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector3};
use rand::Rng;

use crate::error::{Error, Result};

/// Max-norm tolerance for the orthonormality and determinant checks.
pub const ROTATION_TOLERANCE: f64 = 1e-6;

/// Minimum weighted variance of the source set accepted by [`umeyama_align`].
pub const MIN_SOURCE_VARIANCE: f64 = 1e-12;

/// A proper 3x3 rotation matrix.
///
/// Construction through [`RotationMatrix::try_new`] checks that
/// `‖RᵀR − I‖_max ≤ 1e−6` and `|det R − 1| ≤ 1e−6`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotationMatrix(Matrix3<f64>);

impl RotationMatrix {
    pub fn identity() -> Self {
        RotationMatrix(Matrix3::identity())
    }

    pub fn try_new(m: Matrix3<f64>) -> Result<Self> {
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::NotARotation {
                ortho: f64::INFINITY,
                det: f64::NAN,
            });
        }
        let ortho = (m.transpose() * m - Matrix3::identity()).amax();
        let det = m.determinant();
        if ortho > ROTATION_TOLERANCE || (det - 1.0).abs() > ROTATION_TOLERANCE {
            return Err(Error::NotARotation { ortho, det });
        }
        Ok(RotationMatrix(m))
    }

    /// Wraps a matrix the caller has produced from rotation algebra.
    pub(crate) fn from_matrix_unchecked(m: Matrix3<f64>) -> Self {
        RotationMatrix(m)
    }

    /// Nine entries in row-major order.
    pub fn from_row_slice(values: &[f64]) -> Result<Self> {
        if values.len() != 9 {
            return Err(Error::count("rotation entries", 9, values.len()));
        }
        Self::try_new(Matrix3::from_row_slice(values))
    }

    pub fn to_row_array(&self) -> [f64; 9] {
        let m = &self.0;
        [
            m[(0, 0)],
            m[(0, 1)],
            m[(0, 2)],
            m[(1, 0)],
            m[(1, 1)],
            m[(1, 2)],
            m[(2, 0)],
            m[(2, 1)],
            m[(2, 2)],
        ]
    }

    /// Rotation by `angle` radians about `axis` (right-hand rule).
    pub fn from_axis_angle(axis: &Vector3<f64>, angle: f64) -> Result<Self> {
        let norm = axis.norm();
        if norm <= 0.0 || !norm.is_finite() || !angle.is_finite() {
            return Err(Error::DegenerateInput("zero or non-finite rotation axis".into()));
        }
        Ok(Self::from_scaled_axis(axis * (angle / norm)))
    }

    /// Rotation vector (axis times angle); the zero vector maps to identity.
    pub fn from_scaled_axis(v: Vector3<f64>) -> Self {
        RotationMatrix(*nalgebra::Rotation3::from_scaled_axis(v).matrix())
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn transpose(&self) -> Self {
        RotationMatrix(self.0.transpose())
    }

    pub fn column(&self, i: usize) -> Vector3<f64> {
        self.0.column(i).into_owned()
    }

    pub fn apply(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.0 * v
    }
}

impl Default for RotationMatrix {
    fn default() -> Self {
        Self::identity()
    }
}

impl Mul for RotationMatrix {
    type Output = RotationMatrix;

    fn mul(self, rhs: RotationMatrix) -> RotationMatrix {
        RotationMatrix(self.0 * rhs.0)
    }
}

impl Mul<&RotationMatrix> for &RotationMatrix {
    type Output = RotationMatrix;

    fn mul(self, rhs: &RotationMatrix) -> RotationMatrix {
        RotationMatrix(self.0 * rhs.0)
    }
}

/// Similarity transform `p ↦ scale · R · p + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transform {
    pub rotation: RotationMatrix,
    pub translation: Vector3<f64>,
    pub scale: f64,
}

impl Transform {
    pub fn identity() -> Self {
        Transform {
            rotation: RotationMatrix::identity(),
            translation: Vector3::zeros(),
            scale: 1.0,
        }
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.apply(p) * self.scale + self.translation
    }
}

/// Corresponding point pairs with positive weights.
#[derive(Debug, Clone)]
pub struct WeightedCorrespondences {
    source: Vec<Vector3<f64>>,
    target: Vec<Vector3<f64>>,
    weights: Vec<f64>,
}

impl WeightedCorrespondences {
    pub fn new(
        source: Vec<Vector3<f64>>,
        target: Vec<Vector3<f64>>,
        weights: Vec<f64>,
    ) -> Result<Self> {
        if source.len() != target.len() {
            return Err(Error::count("target points", source.len(), target.len()));
        }
        if source.len() != weights.len() {
            return Err(Error::count("weights", source.len(), weights.len()));
        }
        if source.len() < 3 {
            return Err(Error::DegenerateInput(format!(
                "need at least 3 correspondences, got {}",
                source.len()
            )));
        }
        if let Some(i) = weights.iter().position(|w| !(*w > 0.0 && w.is_finite())) {
            return Err(Error::InvalidArgument(format!(
                "weight {i} must be positive and finite, got {}",
                weights[i]
            )));
        }
        let finite = |p: &Vector3<f64>| p.iter().all(|v| v.is_finite());
        if !source.iter().all(finite) || !target.iter().all(finite) {
            return Err(Error::DegenerateInput("non-finite point coordinate".into()));
        }
        Ok(WeightedCorrespondences {
            source,
            target,
            weights,
        })
    }

    /// All weights set to one.
    pub fn unweighted(source: Vec<Vector3<f64>>, target: Vec<Vector3<f64>>) -> Result<Self> {
        let n = source.len();
        Self::new(source, target, vec![1.0; n])
    }

    pub fn len(&self) -> usize {
        self.source.len()
    }

    pub fn is_empty(&self) -> bool {
        self.source.is_empty()
    }

    pub fn source(&self) -> &[Vector3<f64>] {
        &self.source
    }

    pub fn target(&self) -> &[Vector3<f64>] {
        &self.target
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}

fn weighted_mean(points: &[Vector3<f64>], weights: &[f64], total: f64) -> Vector3<f64> {
    points
        .iter()
        .zip(weights)
        .fold(Vector3::zeros(), |acc, (p, w)| acc + p * *w)
        / total
}

/// Weighted least-squares alignment of `source` onto `target`.
///
/// Centroids, variance and cross-covariance are weight averages. The
/// rotation is `U·D·Vᵀ` from the SVD of the cross-covariance, where `D`
/// flips the axis of the smallest singular value when `det(UVᵀ) < 0`, so
/// the result is always a proper rotation. With `with_scale` the optimal
/// isotropic scale is estimated too; otherwise it is fixed at one.
pub fn umeyama_align(corr: &WeightedCorrespondences, with_scale: bool) -> Result<Transform> {
    let total: f64 = corr.weights.iter().sum();
    let mu_src = weighted_mean(&corr.source, &corr.weights, total);
    let mu_dst = weighted_mean(&corr.target, &corr.weights, total);

    let mut var_src = 0.0;
    let mut var_dst = 0.0;
    let mut cov = Matrix3::zeros();
    for ((x, y), w) in corr.source.iter().zip(&corr.target).zip(&corr.weights) {
        let dx = x - mu_src;
        let dy = y - mu_dst;
        var_src += w * dx.norm_squared();
        var_dst += w * dy.norm_squared();
        cov += (dy * dx.transpose()) * *w;
    }
    var_src /= total;
    var_dst /= total;
    cov /= total;

    if var_src < MIN_SOURCE_VARIANCE {
        return Err(Error::DegenerateInput(format!(
            "source points are coincident (weighted variance {var_src:.3e})"
        )));
    }
    if var_dst == 0.0 {
        return Err(Error::DegenerateInput("target points are all identical".into()));
    }

    let svd = cov.svd(true, true);
    let (Some(mut u), Some(v_t)) = (svd.u, svd.v_t) else {
        return Err(Error::DegenerateInput("SVD of the covariance failed".into()));
    };
    let mut singular = svd.singular_values;
    if (u * v_t).determinant() < 0.0 {
        let k = singular.imin();
        u.column_mut(k).neg_mut();
        singular[k] = -singular[k];
    }
    let rotation = RotationMatrix::from_matrix_unchecked(u * v_t);
    let scale = if with_scale {
        singular.sum() / var_src
    } else {
        1.0
    };
    let translation = mu_dst - rotation.apply(&mu_src) * scale;
    Ok(Transform {
        rotation,
        translation,
        scale,
    })
}

/// Geodesic distance on SO(3): the angle of `a·bᵀ`, in `[0, π]`.
///
/// Evaluated as `atan2(sin θ, cos θ)` with `cos θ = (tr − 1)/2` and `sin θ`
/// from the antisymmetric part, which keeps full precision near 0 and π
/// where `arccos` of the trace alone loses half the digits.
pub fn geodesic_angle(a: &RotationMatrix, b: &RotationMatrix) -> f64 {
    let m = a.0 * b.0.transpose();
    let cos = ((m.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let axial = Vector3::new(
        m[(2, 1)] - m[(1, 2)],
        m[(0, 2)] - m[(2, 0)],
        m[(1, 0)] - m[(0, 1)],
    );
    let sin = (axial.norm() * 0.5).min(1.0);
    sin.atan2(cos).clamp(0.0, PI)
}

/// Draws a rotation from the Haar measure on SO(3) (Shoemake's method).
pub fn random_rotation<R: Rng + ?Sized>(rng: &mut R) -> RotationMatrix {
    let u1: f64 = rng.random();
    let u2: f64 = rng.random();
    let u3: f64 = rng.random();
    let (a, b) = ((1.0 - u1).sqrt(), u1.sqrt());
    let (t2, t3) = (2.0 * PI * u2, 2.0 * PI * u3);
    let q = Quaternion::new(b * t3.cos(), a * t2.sin(), a * t2.cos(), b * t3.sin());
    let q = UnitQuaternion::new_unchecked(q);
    RotationMatrix(*q.to_rotation_matrix().matrix())
}

/// Builds a bone frame whose Y column points along `bone_dir` (negated when
/// `reversed`), Z is `forward_hint` made orthogonal to Y, and X = Y × Z.
pub fn frame_from_bone_and_forward(
    bone_dir: &Vector3<f64>,
    forward_hint: &Vector3<f64>,
    reversed: bool,
) -> Result<RotationMatrix> {
    let bone_norm = bone_dir.norm();
    let fwd_norm = forward_hint.norm();
    if !(bone_norm > 0.0 && bone_norm.is_finite() && fwd_norm > 0.0 && fwd_norm.is_finite()) {
        return Err(Error::DegenerateFrame("zero or non-finite input vector".into()));
    }
    let mut y = bone_dir / bone_norm;
    let f = forward_hint / fwd_norm;
    let sin = y.cross(&f).norm();
    if sin.asin() <= 1e-6 {
        return Err(Error::DegenerateFrame(
            "bone direction and forward hint are parallel".into(),
        ));
    }
    if reversed {
        y = -y;
    }
    let z = (f - y * y.dot(&f)).normalize();
    let x = y.cross(&z);
    Ok(RotationMatrix(Matrix3::from_columns(&[x, y, z])))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rz(angle: f64) -> RotationMatrix {
        RotationMatrix::from_axis_angle(&Vector3::z(), angle).unwrap()
    }

    fn tetrahedron() -> Vec<Vector3<f64>> {
        vec![
            Vector3::new(1.0, 1.0, 1.0),
            Vector3::new(1.0, -1.0, -1.0),
            Vector3::new(-1.0, 1.0, -1.0),
            Vector3::new(-1.0, -1.0, 1.0),
        ]
    }

    fn residual(corr: &WeightedCorrespondences, r: &RotationMatrix) -> f64 {
        // Optimal translation for a fixed rotation aligns the weighted centroids.
        let total: f64 = corr.weights().iter().sum();
        let mx = weighted_mean(corr.source(), corr.weights(), total);
        let my = weighted_mean(corr.target(), corr.weights(), total);
        corr.source()
            .iter()
            .zip(corr.target())
            .zip(corr.weights())
            .map(|((x, y), w)| w * (r.apply(&(x - mx)) - (y - my)).norm_squared())
            .sum()
    }

    #[test]
    fn recovers_quarter_turn_about_z() {
        let rot = rz(PI / 2.0);
        let src = tetrahedron();
        let dst = src.iter().map(|p| rot.apply(p)).collect();
        let corr = WeightedCorrespondences::unweighted(src, dst).unwrap();
        let t = umeyama_align(&corr, false).unwrap();
        assert_abs_diff_eq!(*t.rotation.matrix(), *rot.matrix(), epsilon = 1e-10);
        assert_abs_diff_eq!(t.translation, Vector3::zeros(), epsilon = 1e-10);
        assert_eq!(t.scale, 1.0);
    }

    #[test]
    fn identity_when_source_equals_target() {
        let src = vec![
            Vector3::new(0.3, -2.0, 5.0),
            Vector3::new(1.0, 0.0, 0.5),
            Vector3::new(-4.0, 2.0, 1.0),
            Vector3::new(0.0, 0.0, -3.0),
        ];
        let corr = WeightedCorrespondences::unweighted(src.clone(), src).unwrap();
        for with_scale in [false, true] {
            let t = umeyama_align(&corr, with_scale).unwrap();
            assert_abs_diff_eq!(*t.rotation.matrix(), Matrix3::identity(), epsilon = 1e-12);
            assert_abs_diff_eq!(t.translation, Vector3::zeros(), epsilon = 1e-12);
            assert_abs_diff_eq!(t.scale, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn mirrored_coplanar_target_still_proper_and_optimal() {
        let src = vec![
            Vector3::new(0.0, 0.0, 0.0),
            Vector3::new(2.0, 0.0, 0.0),
            Vector3::new(0.0, 1.0, 0.0),
            Vector3::new(1.5, 1.5, 0.0),
        ];
        // Mirror through the x = 0 plane.
        let dst: Vec<_> = src.iter().map(|p| Vector3::new(-p.x, p.y, p.z)).collect();
        let corr = WeightedCorrespondences::unweighted(src, dst).unwrap();
        let t = umeyama_align(&corr, false).unwrap();
        assert_abs_diff_eq!(t.rotation.matrix().determinant(), 1.0, epsilon = 1e-12);
        let best = residual(&corr, &t.rotation);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let r = random_rotation(&mut rng);
            assert!(best <= residual(&corr, &r) + 1e-12);
        }
    }

    #[test]
    fn rejects_degenerate_inputs() {
        let p = Vector3::new(1.0, 2.0, 3.0);
        assert!(matches!(
            WeightedCorrespondences::unweighted(vec![p, p], vec![p, p]),
            Err(Error::DegenerateInput(_))
        ));
        let corr = WeightedCorrespondences::unweighted(vec![p; 4], tetrahedron()).unwrap();
        assert!(matches!(
            umeyama_align(&corr, false),
            Err(Error::DegenerateInput(_))
        ));
        assert!(WeightedCorrespondences::new(tetrahedron(), tetrahedron(), vec![1.0, 0.0, 1.0, 1.0])
            .is_err());
    }

    #[test]
    fn collinear_source_is_rejected_only_when_coincident() {
        // Collinear but spread: variance is fine, rotation is still proper.
        let src: Vec<_> = (0..4).map(|i| Vector3::new(i as f64, 0.0, 0.0)).collect();
        let dst: Vec<_> = (0..4).map(|i| Vector3::new(0.0, i as f64, 0.0)).collect();
        let corr = WeightedCorrespondences::unweighted(src, dst).unwrap();
        let t = umeyama_align(&corr, false).unwrap();
        assert_abs_diff_eq!(t.rotation.matrix().determinant(), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(t.rotation.apply(&Vector3::x()), Vector3::y(), epsilon = 1e-12);
    }

    #[test]
    fn geodesic_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let r = random_rotation(&mut rng);
        assert_eq!(geodesic_angle(&r, &r), 0.0);
        let half = RotationMatrix::from_axis_angle(&Vector3::x(), PI).unwrap();
        assert_abs_diff_eq!(geodesic_angle(&RotationMatrix::identity(), &half), PI, epsilon = 1e-12);
        assert_abs_diff_eq!(
            geodesic_angle(&RotationMatrix::identity(), &rz(0.3)),
            0.3,
            epsilon = 1e-14
        );
    }

    #[test]
    fn geodesic_matches_trace_formula_away_from_the_ends() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..1000 {
            let a = random_rotation(&mut rng);
            let b = random_rotation(&mut rng);
            let m = a.matrix() * b.matrix().transpose();
            let trace = ((m.trace() - 1.0) / 2.0).clamp(-1.0, 1.0).acos();
            assert_abs_diff_eq!(geodesic_angle(&a, &b), trace, epsilon = 1e-7);
        }
    }

    #[test]
    fn geodesic_is_precise_for_tiny_angles() {
        let a = RotationMatrix::from_axis_angle(&Vector3::new(1.0, 2.0, -0.5), 1e-11).unwrap();
        let got = geodesic_angle(&a, &RotationMatrix::identity());
        assert!((got - 1e-11).abs() < 1e-20, "{got}");
    }

    #[test]
    fn random_rotation_is_deterministic_and_valid() {
        let a = random_rotation(&mut ChaCha8Rng::seed_from_u64(42));
        let b = random_rotation(&mut ChaCha8Rng::seed_from_u64(42));
        assert_eq!(a, b);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let r = random_rotation(&mut rng);
            RotationMatrix::try_new(*r.matrix()).unwrap();
        }
    }

    #[test]
    fn random_rotation_mean_angle_matches_haar_measure() {
        // Haar density of the angle is (1 − cos θ)/π, whose mean is π/2 + 2/π.
        let expected = PI / 2.0 + 2.0 / PI;
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let n = 100_000;
        let id = RotationMatrix::identity();
        let mean = (0..n)
            .map(|_| geodesic_angle(&id, &random_rotation(&mut rng)))
            .sum::<f64>()
            / n as f64;
        assert!((mean - expected).abs() < 0.02, "mean {mean}, expected {expected}");
    }

    #[test]
    fn frame_examples() {
        let up = Vector3::y();
        let fwd = Vector3::z();
        let f = frame_from_bone_and_forward(&up, &fwd, false).unwrap();
        assert_abs_diff_eq!(*f.matrix(), Matrix3::identity(), epsilon = 1e-15);

        let f = frame_from_bone_and_forward(&up, &fwd, true).unwrap();
        assert_abs_diff_eq!(f.column(1), Vector3::new(0.0, -1.0, 0.0), epsilon = 1e-15);
        assert_abs_diff_eq!(f.column(2), Vector3::new(0.0, 0.0, 1.0), epsilon = 1e-15);
        assert_abs_diff_eq!(f.column(0), Vector3::new(-1.0, 0.0, 0.0), epsilon = 1e-15);

        let f = frame_from_bone_and_forward(&Vector3::new(1.0, 1.0, 0.0), &fwd, false).unwrap();
        let h = 0.5f64.sqrt();
        assert_abs_diff_eq!(f.column(1), Vector3::new(h, h, 0.0), epsilon = 1e-15);
        assert_abs_diff_eq!(f.column(2), Vector3::new(0.0, 0.0, 1.0), epsilon = 1e-15);
        // (h, h, 0) × (0, 0, 1) = (h, −h, 0)
        assert_abs_diff_eq!(f.column(0), Vector3::new(h, -h, 0.0), epsilon = 1e-15);
        RotationMatrix::try_new(*f.matrix()).unwrap();
    }

    #[test]
    fn frame_rejects_parallel_and_zero() {
        assert!(matches!(
            frame_from_bone_and_forward(&Vector3::y(), &(Vector3::y() * 3.0), false),
            Err(Error::DegenerateFrame(_))
        ));
        assert!(matches!(
            frame_from_bone_and_forward(&Vector3::zeros(), &Vector3::z(), false),
            Err(Error::DegenerateFrame(_))
        ));
    }

    #[test]
    fn try_new_rejects_reflection_and_skew() {
        assert!(RotationMatrix::try_new(Matrix3::from_diagonal(&Vector3::new(-1.0, 1.0, 1.0))).is_err());
        let mut m = Matrix3::identity();
        m[(0, 1)] = 1e-3;
        assert!(RotationMatrix::try_new(m).is_err());
        assert!(RotationMatrix::from_row_slice(&[1.0; 8]).is_err());
    }
}
