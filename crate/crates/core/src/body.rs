//! Point-based articulated body: a 17-joint kinematic tree with log-scale bone
//! length groups, axis-angle joint rotations and a set of contact points
//! attached to the feet.
//!
//! Body coordinates are `x` = body left, `y` = up, `z` = forward. A joint's
//! rotation acts on its child bones and on contact points attached to it:
//!
//! ```text
//! G_root = Exp(root.orientation) · Exp(θ_root),   p_root = root.translation
//! p_i    = p_parent + G_parent · (exp(β_group(i)) · offset_i)
//! G_i    = G_parent · Exp(θ_i)
//! q_c    = p_joint(c) + G_joint(c) · offset_c
//! ```

use serde::{Deserialize, Serialize};

use crate::error::BodyError;
use crate::geometry::{contract_jacobian, exp_so3, exp_so3_with_jacobian, Mat3, Pose3, Vec3};

/// Version tag of the built-in joint table.
pub const SKELETON_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JointDef {
    pub name: String,
    pub parent: Option<usize>,
    /// Rest offset from the parent joint, body coordinates (meters).
    pub offset: [f64; 3],
    /// Index of the shape parameter scaling this bone.
    pub shape_group: usize,
    /// Limb joints are switched off during the first annealing phase.
    pub limb: bool,
    /// Diagonal pose prior weights for this joint's axis-angle components.
    pub prior_weight: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContactCandidate {
    pub joint: usize,
    /// Offset in the joint's frame (meters).
    pub offset: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SkeletonDef {
    pub version: u32,
    pub shape_groups: Vec<String>,
    pub joints: Vec<JointDef>,
    pub contact_candidates: Vec<ContactCandidate>,
}

impl Default for SkeletonDef {
    fn default() -> Self {
        Self::standard()
    }
}

impl SkeletonDef {
    /// The built-in 17-joint table (pelvis-rooted, common 17-keypoint order).
    pub fn standard() -> Self {
        const TWIST: [f64; 3] = [1.0, 4.0, 1.0];
        const UNIT: [f64; 3] = [1.0, 1.0, 1.0];
        let j = |name: &str, parent: Option<usize>, offset: [f64; 3], group: usize, limb: bool| {
            let prior_weight = if name.ends_with("knee") || name.ends_with("elbow") {
                TWIST
            } else {
                UNIT
            };
            JointDef {
                name: name.to_string(),
                parent,
                offset,
                shape_group: group,
                limb,
                prior_weight,
            }
        };
        let joints = vec![
            j("pelvis", None, [0.0, 0.0, 0.0], 0, false),
            j("r_hip", Some(0), [-0.10, 0.0, 0.0], 6, false),
            j("r_knee", Some(1), [0.0, -0.44, 0.0], 5, true),
            j("r_ankle", Some(2), [0.0, -0.42, 0.0], 5, true),
            j("l_hip", Some(0), [0.10, 0.0, 0.0], 6, false),
            j("l_knee", Some(4), [0.0, -0.44, 0.0], 4, true),
            j("l_ankle", Some(5), [0.0, -0.42, 0.0], 4, true),
            j("spine", Some(0), [0.0, 0.24, 0.0], 0, false),
            j("thorax", Some(7), [0.0, 0.26, 0.0], 0, false),
            j("nose", Some(8), [0.0, 0.12, 0.08], 1, false),
            j("head", Some(9), [0.0, 0.12, -0.05], 1, false),
            j("l_shoulder", Some(8), [0.17, 0.0, 0.0], 7, false),
            j("l_elbow", Some(11), [0.0, -0.28, 0.0], 2, true),
            j("l_wrist", Some(12), [0.0, -0.25, 0.0], 2, true),
            j("r_shoulder", Some(8), [-0.17, 0.0, 0.0], 7, false),
            j("r_elbow", Some(14), [0.0, -0.28, 0.0], 3, true),
            j("r_wrist", Some(15), [0.0, -0.25, 0.0], 3, true),
        ];
        let c = |joint: usize, offset: [f64; 3]| ContactCandidate { joint, offset };
        Self {
            version: SKELETON_VERSION,
            shape_groups: [
                "torso",
                "head",
                "left_arm",
                "right_arm",
                "left_leg",
                "right_leg",
                "hips",
                "shoulders",
            ]
            .iter()
            .map(|s| s.to_string())
            .collect(),
            joints,
            contact_candidates: vec![
                c(6, [0.0, -0.08, -0.05]),
                c(6, [0.0, -0.08, 0.15]),
                c(3, [0.0, -0.08, -0.05]),
                c(3, [0.0, -0.08, 0.15]),
            ],
        }
    }

    /// Adds two seat points under the pelvis for scenarios with sitting.
    pub fn with_seat_points(mut self) -> Self {
        self.contact_candidates.push(ContactCandidate {
            joint: 0,
            offset: [0.09, -0.08, -0.10],
        });
        self.contact_candidates.push(ContactCandidate {
            joint: 0,
            offset: [-0.09, -0.08, -0.10],
        });
        self
    }

    pub fn joint_count(&self) -> usize {
        self.joints.len()
    }

    pub fn shape_dim(&self) -> usize {
        self.shape_groups.len()
    }

    pub fn pose_dim(&self) -> usize {
        3 * self.joints.len()
    }

    pub fn joint_index(&self, name: &str) -> Option<usize> {
        self.joints.iter().position(|j| j.name == name)
    }

    pub fn validate(&self) -> Result<(), BodyError> {
        let invalid = |m: String| Err(BodyError::InvalidSkeleton(m));
        if self.joints.is_empty() {
            return invalid("no joints".into());
        }
        if self.joints[0].parent.is_some() {
            return invalid("joint 0 must be the root".into());
        }
        for (i, joint) in self.joints.iter().enumerate().skip(1) {
            match joint.parent {
                None => return invalid(format!("joint {i} ({}) has no parent", joint.name)),
                Some(p) if p >= i => {
                    return invalid(format!("joint {i} ({}) has parent {p} not preceding it", joint.name))
                }
                _ => {}
            }
            let len = Vec3::from(joint.offset).norm();
            if !(len > 0.0) || !len.is_finite() {
                return invalid(format!("joint {i} ({}) has non-positive rest length", joint.name));
            }
        }
        for (i, joint) in self.joints.iter().enumerate() {
            if joint.shape_group >= self.shape_dim() {
                return invalid(format!("joint {i} uses unknown shape group {}", joint.shape_group));
            }
            if joint.prior_weight.iter().any(|w| !(*w >= 0.0)) {
                return invalid(format!("joint {i} has a negative prior weight"));
            }
        }
        if self.contact_candidates.is_empty() {
            return invalid("no contact candidates".into());
        }
        if let Some(c) = self.contact_candidates.iter().find(|c| c.joint >= self.joints.len()) {
            return invalid(format!("contact candidate on unknown joint {}", c.joint));
        }
        Ok(())
    }

    /// Head-to-ankle distance in the rest pose under `shape`, averaged over
    /// both ankles. Used to normalize motion metrics.
    pub fn rest_height(&self, shape: &ShapeParams) -> Result<f64, BodyError> {
        let rest = BodyState::rest(self);
        let state = BodyState {
            shape: shape.clone(),
            ..rest
        };
        let joints = forward_kinematics(self, &state)?;
        let head = self
            .joint_index("head")
            .ok_or_else(|| BodyError::InvalidSkeleton("missing `head` joint".into()))?;
        let ankles: Vec<usize> = ["l_ankle", "r_ankle"]
            .iter()
            .filter_map(|n| self.joint_index(n))
            .collect();
        if ankles.is_empty() {
            return Err(BodyError::InvalidSkeleton("missing ankle joints".into()));
        }
        let sum: f64 = ankles.iter().map(|&a| (joints[head] - joints[a]).norm()).sum();
        Ok(sum / ankles.len() as f64)
    }
}

/// Log bone-length multipliers, one per shape group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapeParams {
    pub betas: Vec<f64>,
}

impl ShapeParams {
    pub fn zeros(dim: usize) -> Self {
        Self {
            betas: vec![0.0; dim],
        }
    }
}

/// Per-joint axis-angle rotations, flattened `[x0, y0, z0, x1, ...]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseParams {
    pub axis_angles: Vec<f64>,
}

impl PoseParams {
    pub fn zeros(joints: usize) -> Self {
        Self {
            axis_angles: vec![0.0; 3 * joints],
        }
    }

    pub fn joint(&self, i: usize) -> Vec3 {
        Vec3::new(
            self.axis_angles[3 * i],
            self.axis_angles[3 * i + 1],
            self.axis_angles[3 * i + 2],
        )
    }

    pub fn set_joint(&mut self, i: usize, w: Vec3) {
        self.axis_angles[3 * i..3 * i + 3].copy_from_slice(w.as_slice());
    }

    /// Rewrites every joint rotation with angle in `[0, π]`.
    pub fn canonicalized(&self) -> Self {
        let mut out = self.clone();
        for i in 0..self.axis_angles.len() / 3 {
            out.set_joint(i, crate::geometry::canonical_axis_angle(&self.joint(i)));
        }
        out
    }
}

/// Root placement in the camera frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RootTransform {
    /// Axis-angle rotation from body to camera coordinates.
    pub orientation: Vec3,
    /// Pelvis position in the camera frame (meters).
    pub translation: Vec3,
}

impl RootTransform {
    pub fn pose(&self) -> Pose3 {
        Pose3::from_axis_angle(self.orientation, self.translation)
    }
}

/// Full per-frame body parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BodyState {
    pub shape: ShapeParams,
    pub pose: PoseParams,
    pub root: RootTransform,
}

impl BodyState {
    pub fn rest(skel: &SkeletonDef) -> Self {
        Self {
            shape: ShapeParams::zeros(skel.shape_dim()),
            pose: PoseParams::zeros(skel.joint_count()),
            root: RootTransform {
                orientation: Vec3::zeros(),
                translation: Vec3::zeros(),
            },
        }
    }

    pub fn check_dims(&self, skel: &SkeletonDef) -> Result<(), BodyError> {
        if self.shape.betas.len() != skel.shape_dim() {
            return Err(BodyError::DimensionMismatch {
                what: "shape",
                expected: skel.shape_dim(),
                found: self.shape.betas.len(),
            });
        }
        if self.pose.axis_angles.len() != skel.pose_dim() {
            return Err(BodyError::DimensionMismatch {
                what: "pose",
                expected: skel.pose_dim(),
                found: self.pose.axis_angles.len(),
            });
        }
        Ok(())
    }
}

/// Gradient of a scalar with respect to one frame's body parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct BodyGradient {
    pub shape: Vec<f64>,
    pub pose: Vec<f64>,
    pub root_orientation: Vec3,
    pub root_translation: Vec3,
}

impl BodyGradient {
    pub fn zeros(skel: &SkeletonDef) -> Self {
        Self {
            shape: vec![0.0; skel.shape_dim()],
            pose: vec![0.0; skel.pose_dim()],
            root_orientation: Vec3::zeros(),
            root_translation: Vec3::zeros(),
        }
    }
}

/// Forward kinematics with every intermediate needed for backpropagation.
#[derive(Debug, Clone)]
pub struct Kinematics {
    pub positions: Vec<Vec3>,
    pub globals: Vec<Mat3>,
    pub contacts: Vec<Vec3>,
    offsets: Vec<Vec3>,
    locals: Vec<Mat3>,
    local_jac: Vec<[Mat3; 3]>,
    root_rot: Mat3,
    root_jac: [Mat3; 3],
}

impl Kinematics {
    pub fn compute(skel: &SkeletonDef, state: &BodyState) -> Result<Self, BodyError> {
        state.check_dims(skel)?;
        let n = skel.joint_count();
        let mut positions = Vec::with_capacity(n);
        let mut globals = Vec::with_capacity(n);
        let mut offsets = Vec::with_capacity(n);
        let mut locals = Vec::with_capacity(n);
        let mut local_jac = Vec::with_capacity(n);
        let (root_rot, root_jac) = exp_so3_with_jacobian(&state.root.orientation);
        for (i, joint) in skel.joints.iter().enumerate() {
            let (r, d) = exp_so3_with_jacobian(&state.pose.joint(i));
            let offset = Vec3::from(joint.offset) * state.shape.betas[joint.shape_group].exp();
            match joint.parent {
                None => {
                    positions.push(state.root.translation);
                    globals.push(root_rot * r);
                }
                Some(p) => {
                    let gp = globals[p];
                    positions.push(positions[p] + gp * offset);
                    globals.push(gp * r);
                }
            }
            offsets.push(offset);
            locals.push(r);
            local_jac.push(d);
        }
        let contacts = skel
            .contact_candidates
            .iter()
            .map(|c| positions[c.joint] + globals[c.joint] * Vec3::from(c.offset))
            .collect();
        Ok(Self {
            positions,
            globals,
            contacts,
            offsets,
            locals,
            local_jac,
            root_rot,
            root_jac,
        })
    }

    /// Pulls adjoints of joint and contact positions back to body parameters.
    pub fn backprop(
        &self,
        skel: &SkeletonDef,
        joint_adj: &[Vec3],
        contact_adj: &[Vec3],
    ) -> BodyGradient {
        let n = skel.joint_count();
        let mut p_adj = joint_adj.to_vec();
        p_adj.resize(n, Vec3::zeros());
        let mut g_adj = vec![Mat3::zeros(); n];
        for (c, adj) in skel.contact_candidates.iter().zip(contact_adj) {
            p_adj[c.joint] += adj;
            g_adj[c.joint] += adj * Vec3::from(c.offset).transpose();
        }
        let mut grad = BodyGradient::zeros(skel);
        for i in (0..n).rev() {
            let joint = &skel.joints[i];
            match joint.parent {
                Some(p) => {
                    let gp = self.globals[p];
                    let pa = p_adj[i];
                    p_adj[p] += pa;
                    let gi = g_adj[i];
                    g_adj[p] += pa * self.offsets[i].transpose() + gi * self.locals[i].transpose();
                    let offset_adj = gp.transpose() * pa;
                    grad.shape[joint.shape_group] += offset_adj.dot(&self.offsets[i]);
                    let r_adj = gp.transpose() * g_adj[i];
                    let w = contract_jacobian(&r_adj, &self.local_jac[i]);
                    grad.pose[3 * i..3 * i + 3].copy_from_slice(w.as_slice());
                }
                None => {
                    let e_adj = g_adj[i] * self.locals[i].transpose();
                    grad.root_orientation = contract_jacobian(&e_adj, &self.root_jac);
                    let r_adj = self.root_rot.transpose() * g_adj[i];
                    let w = contract_jacobian(&r_adj, &self.local_jac[i]);
                    grad.pose[3 * i..3 * i + 3].copy_from_slice(w.as_slice());
                    grad.root_translation = p_adj[i];
                }
            }
        }
        grad
    }
}

/// Camera-frame joint positions.
pub fn forward_kinematics(skel: &SkeletonDef, state: &BodyState) -> Result<Vec<Vec3>, BodyError> {
    state.check_dims(skel)?;
    let root_rot = exp_so3(&state.root.orientation);
    let mut positions: Vec<Vec3> = Vec::with_capacity(skel.joint_count());
    let mut globals: Vec<Mat3> = Vec::with_capacity(skel.joint_count());
    for (i, joint) in skel.joints.iter().enumerate() {
        let r = exp_so3(&state.pose.joint(i));
        match joint.parent {
            None => {
                positions.push(state.root.translation);
                globals.push(root_rot * r);
            }
            Some(p) => {
                let offset = Vec3::from(joint.offset) * state.shape.betas[joint.shape_group].exp();
                positions.push(positions[p] + globals[p] * offset);
                globals.push(globals[p] * r);
            }
        }
    }
    Ok(positions)
}

/// Camera-frame contact candidate positions.
pub fn contact_points(skel: &SkeletonDef, state: &BodyState) -> Result<Vec<Vec3>, BodyError> {
    Ok(Kinematics::compute(skel, state)?.contacts)
}

/// Component-wise median of per-frame shapes; even counts take the midpoint
/// of the two middle values.
pub fn consolidate_shape(shapes: &[ShapeParams]) -> Result<ShapeParams, BodyError> {
    let first = shapes.first().ok_or(BodyError::EmptyInput)?;
    let dim = first.betas.len();
    if let Some(bad) = shapes.iter().find(|s| s.betas.len() != dim) {
        return Err(BodyError::DimensionMismatch {
            what: "shape",
            expected: dim,
            found: bad.betas.len(),
        });
    }
    let betas = (0..dim)
        .map(|k| {
            let mut column: Vec<f64> = shapes.iter().map(|s| s.betas[k]).collect();
            column.sort_by(f64::total_cmp);
            let n = column.len();
            if n % 2 == 1 {
                column[n / 2]
            } else {
                0.5 * (column[n / 2 - 1] + column[n / 2])
            }
        })
        .collect();
    Ok(ShapeParams { betas })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Pose3;
    use nalgebra::UnitQuaternion;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use std::f64::consts::FRAC_PI_2;

    fn random_state(skel: &SkeletonDef, rng: &mut impl Rng) -> BodyState {
        let mut s = BodyState::rest(skel);
        for b in &mut s.shape.betas {
            *b = rng.random_range(-0.3..0.3);
        }
        for a in &mut s.pose.axis_angles {
            *a = rng.random_range(-1.0..1.0);
        }
        s.root.orientation = Vec3::new(
            rng.random_range(-2.0..2.0),
            rng.random_range(-2.0..2.0),
            rng.random_range(-2.0..2.0),
        );
        s.root.translation = Vec3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(2.0..6.0),
        );
        s
    }

    /// Independent re-derivation: chain of 4x4 homogeneous transforms, one
    /// per joint, with the bone offset folded into each child's transform.
    fn chain_oracle(skel: &SkeletonDef, s: &BodyState) -> (Vec<Vec3>, Vec<Vec3>) {
        let root = Pose3::from_axis_angle(s.root.orientation, s.root.translation);
        let mut frames: Vec<Pose3> = Vec::new();
        for (i, j) in skel.joints.iter().enumerate() {
            let local_rot = Pose3::new(UnitQuaternion::from_scaled_axis(s.pose.joint(i)), Vec3::zeros());
            let frame = match j.parent {
                None => root.compose(&local_rot),
                Some(p) => {
                    let bone = Pose3::from_translation(Vec3::from(j.offset) * s.shape.betas[j.shape_group].exp());
                    frames[p].compose(&bone).compose(&local_rot)
                }
            };
            frames.push(frame);
        }
        let joints = frames.iter().map(|f| f.translation).collect();
        let contacts = skel
            .contact_candidates
            .iter()
            .map(|c| frames[c.joint].apply(&Vec3::from(c.offset)))
            .collect();
        (joints, contacts)
    }

    #[test]
    fn standard_skeleton_is_valid() {
        let skel = SkeletonDef::standard();
        skel.validate().unwrap();
        assert_eq!(skel.joint_count(), 17);
        assert_eq!(skel.shape_dim(), 8);
        skel.clone().with_seat_points().validate().unwrap();
    }

    #[test]
    fn validation_rejects_bad_tables() {
        let mut s = SkeletonDef::standard();
        s.joints[3].parent = Some(5);
        assert!(s.validate().is_err());
        let mut s = SkeletonDef::standard();
        s.joints[2].offset = [0.0; 3];
        assert!(s.validate().is_err());
        let mut s = SkeletonDef::standard();
        s.contact_candidates.clear();
        assert!(s.validate().is_err());
    }

    #[test]
    fn zero_state_gives_rest_offsets() {
        let skel = SkeletonDef::standard();
        let joints = forward_kinematics(&skel, &BodyState::rest(&skel)).unwrap();
        for (i, j) in skel.joints.iter().enumerate() {
            let mut expected = Vec3::from(j.offset);
            let mut p = j.parent;
            while let Some(pi) = p {
                expected += Vec3::from(skel.joints[pi].offset);
                p = skel.joints[pi].parent;
            }
            assert!((joints[i] - expected).norm() < 1e-15);
        }
    }

    #[test]
    fn planar_two_link_chain() {
        // shoulder -> elbow -> wrist along -y, elbow bent 90 degrees about x.
        let skel = SkeletonDef {
            version: 1,
            shape_groups: vec!["arm".into()],
            joints: vec![
                JointDef {
                    name: "shoulder".into(),
                    parent: None,
                    offset: [0.0; 3],
                    shape_group: 0,
                    limb: false,
                    prior_weight: [1.0; 3],
                },
                JointDef {
                    name: "elbow".into(),
                    parent: Some(0),
                    offset: [0.0, -0.3, 0.0],
                    shape_group: 0,
                    limb: true,
                    prior_weight: [1.0; 3],
                },
                JointDef {
                    name: "wrist".into(),
                    parent: Some(1),
                    offset: [0.0, -0.25, 0.0],
                    shape_group: 0,
                    limb: true,
                    prior_weight: [1.0; 3],
                },
            ],
            contact_candidates: vec![ContactCandidate {
                joint: 2,
                offset: [0.0; 3],
            }],
        };
        skel.validate().unwrap();
        let mut s = BodyState::rest(&skel);
        s.pose.set_joint(1, Vec3::new(FRAC_PI_2, 0.0, 0.0));
        let joints = forward_kinematics(&skel, &s).unwrap();
        // Rx(90°) maps -y to -z.
        assert!((joints[1] - Vec3::new(0.0, -0.3, 0.0)).norm() < 1e-12);
        assert!((joints[2] - Vec3::new(0.0, -0.3, -0.25)).norm() < 1e-12);
        // Contact with zero offset sits on its joint.
        let contacts = contact_points(&skel, &s).unwrap();
        assert!((contacts[0] - joints[2]).norm() < 1e-15);
    }

    #[test]
    fn log_two_doubles_leg_bones() {
        let skel = SkeletonDef::standard();
        let rest = BodyState::rest(&skel);
        let mut s = rest.clone();
        s.shape.betas[4] = 2f64.ln();
        let a = forward_kinematics(&skel, &rest).unwrap();
        let b = forward_kinematics(&skel, &s).unwrap();
        for (parent, child) in [(4, 5), (5, 6)] {
            let la = (a[child] - a[parent]).norm();
            let lb = (b[child] - b[parent]).norm();
            assert!((lb - 2.0 * la).abs() < 1e-12);
        }
        // The right leg is untouched.
        assert!(((b[3] - b[2]).norm() - (a[3] - a[2]).norm()).abs() < 1e-15);
    }

    #[test]
    fn zero_pose_contacts_are_rest_plus_offset() {
        let skel = SkeletonDef::standard();
        let s = BodyState::rest(&skel);
        let joints = forward_kinematics(&skel, &s).unwrap();
        let contacts = contact_points(&skel, &s).unwrap();
        for (c, q) in skel.contact_candidates.iter().zip(&contacts) {
            assert!((q - (joints[c.joint] + Vec3::from(c.offset))).norm() < 1e-15);
        }
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let skel = SkeletonDef::standard();
        let mut s = BodyState::rest(&skel);
        s.pose.axis_angles.pop();
        assert!(matches!(
            forward_kinematics(&skel, &s),
            Err(BodyError::DimensionMismatch { what: "pose", .. })
        ));
        let mut s = BodyState::rest(&skel);
        s.shape.betas.push(0.0);
        assert!(contact_points(&skel, &s).is_err());
    }

    #[test]
    fn fk_matches_transform_chain_oracle() {
        let skel = SkeletonDef::standard();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let s = random_state(&skel, &mut rng);
            let (oj, oc) = chain_oracle(&skel, &s);
            let joints = forward_kinematics(&skel, &s).unwrap();
            let kin = Kinematics::compute(&skel, &s).unwrap();
            for i in 0..skel.joint_count() {
                assert!((joints[i] - oj[i]).norm() < 1e-9);
                assert!((kin.positions[i] - oj[i]).norm() < 1e-9);
            }
            for (a, b) in kin.contacts.iter().zip(&oc) {
                assert!((a - b).norm() < 1e-9);
            }
        }
    }

    #[test]
    fn backprop_matches_finite_differences() {
        let skel = SkeletonDef::standard();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let s = random_state(&skel, &mut rng);
        let ja: Vec<Vec3> = (0..skel.joint_count())
            .map(|_| Vec3::new(rng.random(), rng.random(), rng.random()))
            .collect();
        let ca: Vec<Vec3> = (0..skel.contact_candidates.len())
            .map(|_| Vec3::new(rng.random(), rng.random(), rng.random()))
            .collect();
        let f = |s: &BodyState| {
            let k = Kinematics::compute(&skel, s).unwrap();
            k.positions.iter().zip(&ja).map(|(p, a)| p.dot(a)).sum::<f64>()
                + k.contacts.iter().zip(&ca).map(|(p, a)| p.dot(a)).sum::<f64>()
        };
        let g = Kinematics::compute(&skel, &s).unwrap().backprop(&skel, &ja, &ca);
        let h = 1e-6;
        let check = |analytic: f64, plus: BodyState, minus: BodyState| {
            let fd = (f(&plus) - f(&minus)) / (2.0 * h);
            assert!((fd - analytic).abs() <= 1e-6 * fd.abs().max(1.0), "{fd} vs {analytic}");
        };
        for k in 0..skel.pose_dim() {
            let (mut p, mut m) = (s.clone(), s.clone());
            p.pose.axis_angles[k] += h;
            m.pose.axis_angles[k] -= h;
            check(g.pose[k], p, m);
        }
        for k in 0..skel.shape_dim() {
            let (mut p, mut m) = (s.clone(), s.clone());
            p.shape.betas[k] += h;
            m.shape.betas[k] -= h;
            check(g.shape[k], p, m);
        }
        for k in 0..3 {
            let (mut p, mut m) = (s.clone(), s.clone());
            p.root.orientation[k] += h;
            m.root.orientation[k] -= h;
            check(g.root_orientation[k], p, m);
            let (mut p, mut m) = (s.clone(), s.clone());
            p.root.translation[k] += h;
            m.root.translation[k] -= h;
            check(g.root_translation[k], p, m);
        }
    }

    #[test]
    fn fk_is_equivariant_under_root_transform() {
        let skel = SkeletonDef::standard();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let s = random_state(&skel, &mut rng);
            let t = Pose3::from_axis_angle(
                Vec3::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), 0.4),
                Vec3::new(rng.random(), rng.random(), rng.random()),
            );
            let moved_root = t.compose(&s.root.pose());
            let mut moved = s.clone();
            moved.root.orientation = moved_root.rotation.scaled_axis();
            moved.root.translation = moved_root.translation;
            let a = forward_kinematics(&skel, &moved).unwrap();
            let b = forward_kinematics(&skel, &s).unwrap();
            for (x, y) in a.iter().zip(&b) {
                assert!((x - t.apply(y)).norm() < 1e-9);
            }
        }
    }

    #[test]
    fn zero_shape_reproduces_rest_lengths() {
        let skel = SkeletonDef::standard();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let mut s = random_state(&skel, &mut rng);
        s.shape = ShapeParams::zeros(8);
        let joints = forward_kinematics(&skel, &s).unwrap();
        for (i, j) in skel.joints.iter().enumerate().skip(1) {
            let len = (joints[i] - joints[j.parent.unwrap()]).norm();
            assert!((len - Vec3::from(j.offset).norm()).abs() < 1e-12);
        }
    }

    #[test]
    fn median_cases() {
        let sh = |v: &[f64]| ShapeParams { betas: v.to_vec() };
        assert_eq!(consolidate_shape(&vec![sh(&[0.5, 1.0]); 3]).unwrap(), sh(&[0.5, 1.0]));
        assert_eq!(
            consolidate_shape(&[sh(&[1.0]), sh(&[2.0]), sh(&[100.0])]).unwrap(),
            sh(&[2.0])
        );
        assert_eq!(consolidate_shape(&[sh(&[1.0]), sh(&[3.0])]).unwrap(), sh(&[2.0]));
        assert_eq!(consolidate_shape(&[]), Err(BodyError::EmptyInput));
        assert!(consolidate_shape(&[sh(&[1.0]), sh(&[1.0, 2.0])]).is_err());
    }

    #[test]
    fn rest_height_of_standard_body() {
        let skel = SkeletonDef::standard();
        let h = skel.rest_height(&ShapeParams::zeros(8)).unwrap();
        assert!(h > 1.5 && h < 1.7, "{h}");
    }

    proptest! {
        #[test]
        fn median_is_permutation_invariant(
            values in proptest::collection::vec(proptest::collection::vec(-5.0..5.0f64, 3), 1..12),
            seed in any::<u64>()
        ) {
            use rand::seq::SliceRandom;
            let shapes: Vec<ShapeParams> = values.into_iter().map(|betas| ShapeParams { betas }).collect();
            let mut shuffled = shapes.clone();
            shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            prop_assert_eq!(consolidate_shape(&shapes).unwrap(), consolidate_shape(&shuffled).unwrap());
        }
    }
}
