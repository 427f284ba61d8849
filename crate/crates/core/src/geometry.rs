//! Rigid transforms, rotation helpers and the pinhole camera model.
//!
//! Rotations are stored as unit quaternions inside [`Pose3`]. Anything the
//! optimizer touches is expressed as an axis-angle vector, and the
//! [`exp_so3_with_jacobian`] helper provides the exact derivatives needed to
//! backpropagate through those parameters.

use nalgebra::{Matrix3, Matrix4, UnitQuaternion, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::GeometryError;

pub type Vec2 = Vector2<f64>;
pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// Minimum depth (camera z) for a point to count as in front of the camera.
pub const MIN_DEPTH: f64 = 1e-6;

/// Below this rotation angle the Rodrigues terms are replaced by their Taylor
/// expansion.
const SMALL_ANGLE: f64 = 1e-5;

/// A rigid transform `x -> R x + t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose3 {
    pub rotation: UnitQuaternion<f64>,
    pub translation: Vec3,
}

impl Default for Pose3 {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose3 {
    pub fn identity() -> Self {
        Self {
            rotation: UnitQuaternion::identity(),
            translation: Vec3::zeros(),
        }
    }

    pub fn new(rotation: UnitQuaternion<f64>, translation: Vec3) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn from_translation(translation: Vec3) -> Self {
        Self::new(UnitQuaternion::identity(), translation)
    }

    /// Builds a pose from an axis-angle rotation vector and a translation.
    pub fn from_axis_angle(axis_angle: Vec3, translation: Vec3) -> Self {
        Self::new(UnitQuaternion::from_scaled_axis(axis_angle), translation)
    }

    /// Composition `self ∘ other`: applying the result equals applying
    /// `other` first, then `self`.
    pub fn compose(&self, other: &Pose3) -> Pose3 {
        Pose3 {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> Pose3 {
        let rotation = self.rotation.inverse();
        Pose3 {
            rotation,
            translation: -(rotation * self.translation),
        }
    }

    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    pub fn rotation_matrix(&self) -> Mat3 {
        self.rotation.to_rotation_matrix().into_inner()
    }

    pub fn to_homogeneous(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0)
            .copy_from(&self.rotation_matrix());
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    /// Right-multiplies by an axis-angle/translation increment:
    /// `R <- R Exp(dr)`, `t <- t + dt`.
    pub fn perturbed(&self, rotation_increment: &Vec3, translation_increment: &Vec3) -> Pose3 {
        Pose3 {
            rotation: self.rotation * UnitQuaternion::from_scaled_axis(*rotation_increment),
            translation: self.translation + translation_increment,
        }
    }
}

/// Pinhole intrinsics without distortion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub focal: [f64; 2],
    pub principal_point: [f64; 2],
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self, GeometryError> {
        if !(fx > 0.0 && fy > 0.0) || !fx.is_finite() || !fy.is_finite() {
            return Err(GeometryError::InvalidIntrinsics);
        }
        Ok(Self {
            focal: [fx, fy],
            principal_point: [cx, cy],
        })
    }

    /// Projects a camera-frame point to pixels.
    pub fn project(&self, p_cam: &Vec3) -> Result<Vec2, GeometryError> {
        if p_cam.z <= MIN_DEPTH {
            return Err(GeometryError::BehindCamera { depth: p_cam.z });
        }
        Ok(self.project_unchecked(p_cam))
    }

    #[inline]
    pub(crate) fn project_unchecked(&self, p: &Vec3) -> Vec2 {
        Vec2::new(
            self.focal[0] * p.x / p.z + self.principal_point[0],
            self.focal[1] * p.y / p.z + self.principal_point[1],
        )
    }

    /// Pixel-space vector `g` pulled back to a camera-frame adjoint at `p`.
    #[inline]
    pub(crate) fn project_adjoint(&self, p: &Vec3, g: &Vec2) -> Vec3 {
        let iz = 1.0 / p.z;
        let gx = g.x * self.focal[0];
        let gy = g.y * self.focal[1];
        Vec3::new(gx * iz, gy * iz, -(gx * p.x + gy * p.y) * iz * iz)
    }

    /// Back-projects a pixel to the camera-frame ray through it at depth `z`.
    pub fn unproject(&self, pixel: &Vec2, z: f64) -> Vec3 {
        Vec3::new(
            (pixel.x - self.principal_point[0]) / self.focal[0] * z,
            (pixel.y - self.principal_point[1]) / self.focal[1] * z,
            z,
        )
    }
}

#[inline]
pub fn skew(w: &Vec3) -> Mat3 {
    Mat3::new(0.0, -w.z, w.y, w.z, 0.0, -w.x, -w.y, w.x, 0.0)
}

/// Rotation matrix of an axis-angle vector (Rodrigues).
pub fn exp_so3(w: &Vec3) -> Mat3 {
    let theta2 = w.norm_squared();
    let k = skew(w);
    if theta2 < SMALL_ANGLE * SMALL_ANGLE {
        return Mat3::identity() + k + 0.5 * k * k;
    }
    let theta = theta2.sqrt();
    Mat3::identity() + (theta.sin() / theta) * k + ((1.0 - theta.cos()) / theta2) * (k * k)
}

/// Rotation matrix together with `∂R/∂w_k` for `k = 0..3`.
///
/// Uses the closed form `∂R/∂w_k = (w_k [w] + [w × (I - R) e_k]) R / |w|²`,
/// switching to the second order expansion near the identity.
pub fn exp_so3_with_jacobian(w: &Vec3) -> (Mat3, [Mat3; 3]) {
    let theta2 = w.norm_squared();
    let k = skew(w);
    if theta2 < SMALL_ANGLE * SMALL_ANGLE {
        let r = Mat3::identity() + k + 0.5 * k * k;
        let d = std::array::from_fn(|i| {
            let e = skew(&Vec3::ith(i, 1.0));
            e + 0.5 * (e * k + k * e)
        });
        return (r, d);
    }
    let theta = theta2.sqrt();
    let r = Mat3::identity() + (theta.sin() / theta) * k + ((1.0 - theta.cos()) / theta2) * (k * k);
    let i_minus_r = Mat3::identity() - r;
    let d = std::array::from_fn(|i| {
        let col = i_minus_r.column(i).into_owned();
        (w[i] * k + skew(&w.cross(&col))) * r / theta2
    });
    (r, d)
}

/// Contracts a matrix adjoint against the three rotation derivatives.
#[inline]
pub(crate) fn contract_jacobian(adjoint: &Mat3, d: &[Mat3; 3]) -> Vec3 {
    Vec3::new(
        adjoint.component_mul(&d[0]).sum(),
        adjoint.component_mul(&d[1]).sum(),
        adjoint.component_mul(&d[2]).sum(),
    )
}

/// Maps an axis-angle vector to the equivalent one with angle in `[0, π]`.
pub fn canonical_axis_angle(w: &Vec3) -> Vec3 {
    let theta = w.norm();
    if theta <= std::f64::consts::PI {
        return *w;
    }
    UnitQuaternion::from_scaled_axis(*w).scaled_axis()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::FRAC_PI_2;

    fn homogeneous_apply(m: &Matrix4<f64>, p: &Vec3) -> Vec3 {
        let h = m * nalgebra::Vector4::new(p.x, p.y, p.z, 1.0);
        Vec3::new(h.x / h.w, h.y / h.w, h.z / h.w)
    }

    fn arb_vec3(scale: f64) -> impl Strategy<Value = Vec3> {
        (-scale..scale, -scale..scale, -scale..scale).prop_map(|(x, y, z)| Vec3::new(x, y, z))
    }

    fn arb_pose() -> impl Strategy<Value = Pose3> {
        (arb_vec3(3.0), arb_vec3(10.0)).prop_map(|(w, t)| Pose3::from_axis_angle(w, t))
    }

    #[test]
    fn compose_with_identity() {
        let t = Pose3::from_axis_angle(Vec3::new(0.3, -0.2, 0.9), Vec3::new(1.0, 2.0, -3.0));
        let c = Pose3::identity().compose(&t);
        assert!((c.translation - t.translation).norm() < 1e-15);
        assert!(c.rotation.angle_to(&t.rotation) < 1e-15);
    }

    #[test]
    fn compose_pure_translations() {
        let a = Pose3::from_translation(Vec3::new(1.0, 0.0, 0.0));
        let b = Pose3::from_translation(Vec3::new(0.0, 1.0, 0.0));
        assert_eq!(a.compose(&b).translation, Vec3::new(1.0, 1.0, 0.0));
    }

    #[test]
    fn apply_cases() {
        let p = Vec3::new(1.0, 2.0, 3.0);
        assert_eq!(Pose3::identity().apply(&p), p);
        let rz = Pose3::from_axis_angle(Vec3::new(0.0, 0.0, FRAC_PI_2), Vec3::zeros());
        let q = rz.apply(&Vec3::new(1.0, 0.0, 0.0));
        assert!((q - Vec3::new(0.0, 1.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn project_cases() {
        let unit = CameraIntrinsics::new(1.0, 1.0, 0.0, 0.0).unwrap();
        assert_eq!(unit.project(&Vec3::new(0.0, 0.0, 1.0)).unwrap(), Vec2::zeros());
        let k = CameraIntrinsics::new(500.0, 500.0, 320.0, 240.0).unwrap();
        assert_eq!(k.project(&Vec3::new(1.0, 2.0, 2.0)).unwrap(), Vec2::new(570.0, 740.0));
        assert!(matches!(
            k.project(&Vec3::new(0.0, 0.0, -1.0)),
            Err(GeometryError::BehindCamera { .. })
        ));
        assert!(k.project(&Vec3::new(0.0, 0.0, 1e-7)).is_err());
    }

    #[test]
    fn intrinsics_reject_nonpositive_focal() {
        assert!(CameraIntrinsics::new(0.0, 1.0, 0.0, 0.0).is_err());
        assert!(CameraIntrinsics::new(1.0, -1.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn exp_matches_quaternion() {
        for w in [
            Vec3::new(0.1, -0.4, 0.7),
            Vec3::new(2.5, 0.1, -0.3),
            Vec3::new(1e-7, 2e-7, -1e-7),
            Vec3::zeros(),
        ] {
            let r = exp_so3(&w);
            let q = UnitQuaternion::from_scaled_axis(w).to_rotation_matrix().into_inner();
            assert!((r - q).norm() < 1e-14, "{w:?}");
        }
    }

    #[test]
    fn exp_jacobian_matches_finite_differences() {
        let h = 1e-6;
        for w in [
            Vec3::new(0.1, -0.4, 0.7),
            Vec3::new(2.9, 0.1, -0.3),
            Vec3::new(3e-6, -1e-6, 2e-6),
            Vec3::zeros(),
        ] {
            let (_, d) = exp_so3_with_jacobian(&w);
            for k in 0..3 {
                let e = Vec3::ith(k, h);
                let fd = (exp_so3(&(w + e)) - exp_so3(&(w - e))) / (2.0 * h);
                assert!((fd - d[k]).norm() < 1e-8, "w={w:?} k={k}");
            }
        }
    }

    #[test]
    fn canonical_axis_angle_keeps_rotation() {
        let w = Vec3::new(0.0, 0.0, 4.0);
        let c = canonical_axis_angle(&w);
        assert!(c.norm() <= std::f64::consts::PI + 1e-12);
        assert!((exp_so3(&w) - exp_so3(&c)).norm() < 1e-12);
    }

    proptest! {
        #[test]
        fn compose_matches_matrix_product(a in arb_pose(), b in arb_pose(), p in arb_vec3(5.0)) {
            let c = a.compose(&b);
            let m = a.to_homogeneous() * b.to_homogeneous();
            prop_assert!((c.to_homogeneous() - m).norm() < 1e-9);
            prop_assert!((c.apply(&p) - homogeneous_apply(&m, &p)).norm() < 1e-9);
            prop_assert!((c.apply(&p) - a.apply(&b.apply(&p))).norm() < 1e-9);
        }

        #[test]
        fn apply_matches_homogeneous(a in arb_pose(), p in arb_vec3(5.0)) {
            prop_assert!((a.apply(&p) - homogeneous_apply(&a.to_homogeneous(), &p)).norm() < 1e-9);
        }

        #[test]
        fn projection_is_ray_invariant(
            x in -2.0..2.0f64, y in -2.0..2.0f64, z in 0.1..10.0f64, lambda in 0.01..100.0f64
        ) {
            let k = CameraIntrinsics::new(700.0, 650.0, 640.0, 360.0).unwrap();
            let p = Vec3::new(x, y, z);
            let a = k.project(&p).unwrap();
            let b = k.project(&(lambda * p)).unwrap();
            prop_assert!((a - b).norm() < 1e-9);
        }
    }

    #[test]
    fn inverse_composes_to_identity() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..10_000 {
            let w = Vec3::new(
                rng.random_range(-3.0..3.0),
                rng.random_range(-3.0..3.0),
                rng.random_range(-3.0..3.0),
            );
            let t = Vec3::new(
                rng.random_range(-10.0..10.0),
                rng.random_range(-10.0..10.0),
                rng.random_range(-10.0..10.0),
            );
            let pose = Pose3::from_axis_angle(w, t);
            let id = pose.compose(&pose.inverse());
            assert!(id.translation.norm() < 1e-9);
            assert!(id.rotation.angle() < 1e-9);
            assert!((pose.rotation.norm() - 1.0).abs() < 1e-9);
        }
    }
}
