//! Value-only definitions of the individual energy terms.

use crate::body::{contact_points, forward_kinematics, BodyState, SkeletonDef};
use crate::error::EnergyError;
use crate::geometry::{CameraIntrinsics, Pose3, Vec2, Vec3};
use crate::scene::SpatialIndex;

use super::{world_point, Observation2D, RobustKernel, ScaleMode};

pub fn rho(e: f64, kernel: &RobustKernel) -> f64 {
    kernel.rho(e)
}

/// `Σ_i k_i w_i ρ_J(‖Π_K(J_i) − Ĵ_i‖)`; joints behind the camera are skipped.
pub fn e_joint(
    skel: &SkeletonDef,
    body: &BodyState,
    intrinsics: &CameraIntrinsics,
    obs: &Observation2D,
    kernel: &RobustKernel,
    joint_weights: &[f64],
) -> Result<f64, EnergyError> {
    let joints = forward_kinematics(skel, body)?;
    if obs.keypoints.len() != joints.len() {
        return Err(EnergyError::DimensionMismatch {
            what: "keypoints",
            expected: joints.len(),
            found: obs.keypoints.len(),
        });
    }
    let mut total = 0.0;
    for ((p, kp), k) in joints.iter().zip(&obs.keypoints).zip(joint_weights) {
        if kp.w == 0.0 || *k == 0.0 {
            continue;
        }
        let Ok(uv) = intrinsics.project(p) else {
            continue;
        };
        let e = (uv - Vec2::new(kp.u, kp.v)).norm();
        total += k * kp.w * kernel.rho(e);
    }
    Ok(total)
}

/// `‖β‖²`.
pub fn e_shape_prior(betas: &[f64]) -> f64 {
    betas.iter().map(|b| b * b).sum()
}

/// `Σ_j Σ_c weight_jc (θ_jc − θ₀_jc)²`.
pub fn e_pose_prior(axis_angles: &[f64], rest: &[f64], weights: &[[f64; 3]]) -> f64 {
    let mut total = 0.0;
    for (j, w) in weights.iter().enumerate() {
        for c in 0..3 {
            let k = 3 * j + c;
            let d = axis_angles[k] - rest[k];
            total += w[c] * d * d;
        }
    }
    total
}

/// Contact energy with nearest vertices looked up at the current state.
pub fn e_contact(
    skel: &SkeletonDef,
    bodies: &[BodyState],
    cameras: &[Pose3],
    index: &SpatialIndex,
    scale: f64,
    mode: ScaleMode,
    kernel: &RobustKernel,
) -> Result<f64, EnergyError> {
    if !(scale > 0.0) {
        return Err(EnergyError::NonPositiveScale(scale));
    }
    let mut total = 0.0;
    for (body, cam) in bodies.iter().zip(cameras) {
        for q in contact_points(skel, body)? {
            let x = world_point(cam, scale, mode, &body.root.translation, &q);
            total += kernel.rho(index.nearest(&x).distance);
        }
    }
    Ok(total)
}

/// Zero-acceleration prior over world joints, gated by `1 − w` with `w` the
/// lowest confidence across the three-frame stencil.
pub fn e_temporal(
    world_joints: &[Vec<Vec3>],
    confidences: &[Vec<f64>],
    kernel: &RobustKernel,
) -> Result<f64, EnergyError> {
    let frames = world_joints.len();
    if frames < 3 {
        return Err(EnergyError::SequenceTooShort { frames });
    }
    let mut total = 0.0;
    for t in 1..frames - 1 {
        for j in 0..world_joints[t].len() {
            let w = confidences[t - 1][j].min(confidences[t][j]).min(confidences[t + 1][j]);
            let acc = (world_joints[t + 1][j] - world_joints[t][j]) - (world_joints[t][j] - world_joints[t - 1][j]);
            total += (1.0 - w) * kernel.rho(acc.norm());
        }
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::body::SkeletonDef;
    use crate::energy::Keypoint;
    use crate::scene::SceneMesh;

    fn standing(skel: &SkeletonDef) -> BodyState {
        let mut s = BodyState::rest(skel);
        // Upright, facing the camera, 4 m away.
        s.root.orientation = Vec3::new(std::f64::consts::PI, 0.0, 0.0);
        s.root.translation = Vec3::new(0.1, 0.2, 4.0);
        s
    }

    fn exact_obs(skel: &SkeletonDef, s: &BodyState, k: &CameraIntrinsics) -> Observation2D {
        let joints = forward_kinematics(skel, s).unwrap();
        Observation2D {
            keypoints: joints
                .iter()
                .map(|p| {
                    let uv = k.project(p).unwrap();
                    Keypoint { u: uv.x, v: uv.y, w: 1.0 }
                })
                .collect(),
        }
    }

    #[test]
    fn joint_term_cases() {
        let skel = SkeletonDef::standard();
        let k = CameraIntrinsics::new(700.0, 700.0, 640.0, 360.0).unwrap();
        let kernel = RobustKernel::new(100.0).unwrap();
        let s = standing(&skel);
        let ones = vec![1.0; 17];
        let mut obs = exact_obs(&skel, &s, &k);
        assert_eq!(e_joint(&skel, &s, &k, &obs, &kernel, &ones).unwrap(), 0.0);

        let mut zero = obs.clone();
        for kp in &mut zero.keypoints {
            kp.w = 0.0;
            kp.u += 50.0;
        }
        assert_eq!(e_joint(&skel, &s, &k, &zero, &kernel, &ones).unwrap(), 0.0);

        let only_first: Vec<f64> = (0..17).map(|i| (i == 0) as u8 as f64).collect();
        obs.keypoints[0].u += 1.0;
        let e = e_joint(&skel, &s, &k, &obs, &kernel, &only_first).unwrap();
        assert!((e - 1.0 / (100.0f64.powi(2) + 1.0)).abs() < 1e-15);
    }

    #[test]
    fn prior_cases() {
        assert_eq!(e_shape_prior(&[0.0; 8]), 0.0);
        let mut b = [0.0; 8];
        b[0] = 1.0;
        assert_eq!(e_shape_prior(&b), 1.0);
        let rest = vec![0.2; 51];
        assert_eq!(e_pose_prior(&rest, &rest, &[[1.0, 4.0, 1.0]; 17]), 0.0);
    }

    #[test]
    fn contact_cases() {
        let skel = SkeletonDef::standard();
        let s = BodyState::rest(&skel);
        let contacts = contact_points(&skel, &s).unwrap();
        let kernel = RobustKernel::new(0.2).unwrap();
        let cams = [Pose3::identity()];
        let on = SpatialIndex::build(&SceneMesh::new(contacts.clone(), vec![]).unwrap()).unwrap();
        let e = e_contact(&skel, std::slice::from_ref(&s), &cams, &on, 1.0, ScaleMode::Camera, &kernel).unwrap();
        assert_eq!(e, 0.0);

        // One candidate, one vertex at distance d.
        let mut single = skel.clone();
        single.contact_candidates.truncate(1);
        let d = 0.3;
        let v = contacts[0] + Vec3::new(0.0, -d, 0.0);
        let index = SpatialIndex::build(&SceneMesh::new(vec![v], vec![]).unwrap()).unwrap();
        let e = e_contact(&single, std::slice::from_ref(&s), &cams, &index, 1.0, ScaleMode::Camera, &kernel).unwrap();
        assert!((e - kernel.rho(d)).abs() < 1e-15);

        assert_eq!(
            e_contact(&single, std::slice::from_ref(&s), &cams, &index, 0.0, ScaleMode::Camera, &kernel),
            Err(EnergyError::NonPositiveScale(0.0))
        );
    }

    #[test]
    fn temporal_cases() {
        let kernel = RobustKernel::new(0.1).unwrap();
        let linear: Vec<Vec<Vec3>> = (0..6)
            .map(|t| vec![Vec3::new(0.25 * t as f64, -0.125 * t as f64, 2.0), Vec3::new(1.0, 0.5 * t as f64, 0.0)])
            .collect();
        let zero_conf = vec![vec![0.0; 2]; 6];
        assert_eq!(e_temporal(&linear, &zero_conf, &kernel).unwrap(), 0.0);

        let wild: Vec<Vec<Vec3>> = (0..6).map(|t| vec![Vec3::new((t * t) as f64, 0.0, 0.0); 2]).collect();
        assert_eq!(e_temporal(&wild, &vec![vec![1.0; 2]; 6], &kernel).unwrap(), 0.0);

        let a = 0.25;
        let single = vec![vec![Vec3::zeros()], vec![Vec3::zeros()], vec![Vec3::new(0.0, a, 0.0)]];
        let e = e_temporal(&single, &vec![vec![0.0]; 3], &kernel).unwrap();
        assert!((e - kernel.rho(a)).abs() < 1e-15);

        assert_eq!(
            e_temporal(&single[..2], &zero_conf[..2], &kernel),
            Err(EnergyError::SequenceTooShort { frames: 2 })
        );
    }

    #[test]
    fn temporal_gate_uses_stencil_minimum() {
        let kernel = RobustKernel::new(0.1).unwrap();
        let joints = vec![vec![Vec3::zeros()], vec![Vec3::zeros()], vec![Vec3::new(0.1, 0.0, 0.0)]];
        let conf = vec![vec![0.9], vec![0.8], vec![0.25]];
        let e = e_temporal(&joints, &conf, &kernel).unwrap();
        assert!((e - 0.75 * kernel.rho(0.1)).abs() < 1e-15);
    }
}
