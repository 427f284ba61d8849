use rayon::prelude::*;

use crate::body::{BodyGradient, Kinematics, SkeletonDef};
use crate::error::EnergyError;
use crate::geometry::{CameraIntrinsics, Mat3, Vec2, Vec3, MIN_DEPTH};
use crate::scene::SpatialIndex;

use super::{outer, scaled_camera_point, EnergyModel, Observation2D, ScaleMode, SequenceState, Weights};

/// Selects which terms enter the objective. A term with zero weight is never
/// evaluated, whatever this says.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TermSet {
    pub joint: bool,
    pub shape: bool,
    pub pose: bool,
    pub contact: bool,
    pub temporal: bool,
}

impl TermSet {
    pub const ALL: TermSet = TermSet {
        joint: true,
        shape: true,
        pose: true,
        contact: true,
        temporal: true,
    };
    pub const NONE: TermSet = TermSet {
        joint: false,
        shape: false,
        pose: false,
        contact: false,
        temporal: false,
    };
}

impl Default for TermSet {
    fn default() -> Self {
        Self::ALL
    }
}

/// Raw (unweighted) term sums and the weighted total.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EnergyBreakdown {
    pub joint: f64,
    pub shape: f64,
    pub pose: f64,
    pub contact: f64,
    pub temporal: f64,
    pub total: f64,
}

/// Gradient with respect to a camera-to-world pose, as the adjoint of its
/// rotation matrix and translation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraAdjoint {
    pub rotation: Mat3,
    pub translation: Vec3,
}

impl Default for CameraAdjoint {
    fn default() -> Self {
        Self {
            rotation: Mat3::zeros(),
            translation: Vec3::zeros(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StateGradient {
    pub bodies: Vec<BodyGradient>,
    pub cameras: Vec<CameraAdjoint>,
    pub scale: f64,
}

/// Scene vertices matched to each contact candidate, held fixed while the
/// optimizer takes gradient steps.
#[derive(Debug, Clone, PartialEq)]
pub struct Correspondences {
    pub targets: Vec<Vec<Vec3>>,
}

impl Correspondences {
    pub fn nearest(
        skel: &SkeletonDef,
        state: &SequenceState,
        mode: ScaleMode,
        index: &SpatialIndex,
    ) -> Result<Self, EnergyError> {
        if !(state.scale > 0.0) {
            return Err(EnergyError::NonPositiveScale(state.scale));
        }
        let targets = state
            .bodies
            .iter()
            .zip(&state.cameras)
            .map(|(b, cam)| {
                let contacts = crate::body::contact_points(skel, b)?;
                Ok(contacts
                    .iter()
                    .map(|q| {
                        let x = cam.apply(&scaled_camera_point(state.scale, mode, &b.root.translation, q));
                        index.nearest(&x).vertex
                    })
                    .collect())
            })
            .collect::<Result<_, EnergyError>>()?;
        Ok(Self { targets })
    }
}

/// The weighted sequence objective
/// `Σ_t (E_J + λ_β E_β + λ_θ E_θ) + λ_C E_C + λ_T E_T`.
#[derive(Debug, Clone, Copy)]
pub struct Objective<'a> {
    pub skeleton: &'a SkeletonDef,
    pub intrinsics: &'a CameraIntrinsics,
    pub observations: &'a [Observation2D],
    pub model: &'a EnergyModel,
    pub weights: &'a Weights,
    pub terms: TermSet,
}

struct FramePass {
    kin: Kinematics,
    joint: f64,
    shape: f64,
    pose: f64,
    contact: f64,
    world_joints: Vec<Vec3>,
    scaled_joints: Vec<Vec3>,
    joint_adj: Vec<Vec3>,
    contact_adj: Vec<Vec3>,
    camera_adj: CameraAdjoint,
    scale_adj: f64,
    root_adj: Vec3,
}

struct WorldAdjoint<'a> {
    rotation: &'a Mat3,
    scale: f64,
    mode: ScaleMode,
    root: Vec3,
}

impl WorldAdjoint<'_> {
    /// Accumulates the adjoint of `x = R y(p) + t` and returns `∂/∂p`.
    fn pull(&self, x_adj: &Vec3, y: &Vec3, p: &Vec3, pass: &mut FramePass) -> Vec3 {
        pass.camera_adj.rotation += outer(x_adj, y);
        pass.camera_adj.translation += x_adj;
        let y_adj = self.rotation.transpose() * x_adj;
        match self.mode {
            ScaleMode::Camera => pass.scale_adj += y_adj.dot(p),
            ScaleMode::Body => {
                pass.scale_adj += y_adj.dot(&(p - self.root));
                pass.root_adj += (1.0 - self.scale) * y_adj;
            }
        }
        self.scale * y_adj
    }
}

impl<'a> Objective<'a> {
    fn contact_active(&self) -> bool {
        self.terms.contact && self.weights.lambda_contact > 0.0
    }

    fn temporal_active(&self) -> bool {
        self.terms.temporal && self.weights.lambda_temporal > 0.0
    }

    fn validate(&self, state: &SequenceState, corr: Option<&Correspondences>) -> Result<(), EnergyError> {
        state.check(self.skeleton)?;
        let frames = state.frames();
        if self.observations.len() != frames {
            return Err(EnergyError::DimensionMismatch {
                what: "observations",
                expected: frames,
                found: self.observations.len(),
            });
        }
        let joints = self.skeleton.joint_count();
        if self.weights.joint_weights.len() != joints {
            return Err(EnergyError::DimensionMismatch {
                what: "joint weights",
                expected: joints,
                found: self.weights.joint_weights.len(),
            });
        }
        if let Some(obs) = self.observations.iter().find(|o| o.keypoints.len() != joints) {
            return Err(EnergyError::DimensionMismatch {
                what: "keypoints",
                expected: joints,
                found: obs.keypoints.len(),
            });
        }
        if self.contact_active() {
            if !(state.scale > 0.0) {
                return Err(EnergyError::NonPositiveScale(state.scale));
            }
            let candidates = self.skeleton.contact_candidates.len();
            match corr {
                Some(c) if c.targets.len() == frames && c.targets.iter().all(|t| t.len() == candidates) => {}
                _ => {
                    return Err(EnergyError::DimensionMismatch {
                        what: "contact correspondences",
                        expected: frames,
                        found: corr.map_or(0, |c| c.targets.len()),
                    })
                }
            }
        }
        if self.temporal_active() {
            if frames < 3 {
                return Err(EnergyError::SequenceTooShort { frames });
            }
            if !(state.scale > 0.0) {
                return Err(EnergyError::NonPositiveScale(state.scale));
            }
        }
        Ok(())
    }

    pub fn evaluate(&self, state: &SequenceState, corr: Option<&Correspondences>) -> Result<EnergyBreakdown, EnergyError> {
        Ok(self.run(state, corr, false)?.0)
    }

    pub fn evaluate_with_gradient(
        &self,
        state: &SequenceState,
        corr: Option<&Correspondences>,
    ) -> Result<(EnergyBreakdown, StateGradient), EnergyError> {
        let (e, g) = self.run(state, corr, true)?;
        Ok((e, g.expect("gradient requested")))
    }

    fn frame_pass(
        &self,
        t: usize,
        state: &SequenceState,
        corr: Option<&Correspondences>,
        want_grad: bool,
    ) -> Result<FramePass, EnergyError> {
        let skel = self.skeleton;
        let body = &state.bodies[t];
        let cam = &state.cameras[t];
        let kin = Kinematics::compute(skel, body)?;
        let n = skel.joint_count();
        let mut pass = FramePass {
            joint: 0.0,
            shape: 0.0,
            pose: 0.0,
            contact: 0.0,
            world_joints: Vec::new(),
            scaled_joints: Vec::new(),
            joint_adj: vec![Vec3::zeros(); n],
            contact_adj: vec![Vec3::zeros(); skel.contact_candidates.len()],
            camera_adj: CameraAdjoint::default(),
            scale_adj: 0.0,
            root_adj: Vec3::zeros(),
            kin,
        };

        if self.terms.joint {
            let kernel = &self.model.kernels.joint;
            for (i, kp) in self.observations[t].keypoints.iter().enumerate() {
                let k = self.weights.joint_weights[i];
                let p = pass.kin.positions[i];
                if kp.w == 0.0 || k == 0.0 || p.z <= MIN_DEPTH {
                    continue;
                }
                let residual = self.intrinsics.project_unchecked(&p) - Vec2::new(kp.u, kp.v);
                let (rho, drho) = kernel.rho_squared_with_derivative(residual.norm_squared());
                pass.joint += k * kp.w * rho;
                if want_grad {
                    let pixel_adj = (2.0 * k * kp.w * drho) * residual;
                    pass.joint_adj[i] += self.intrinsics.project_adjoint(&p, &pixel_adj);
                }
            }
        }
        if self.terms.shape && self.weights.lambda_beta > 0.0 {
            pass.shape = super::terms::e_shape_prior(&body.shape.betas);
        }
        if self.terms.pose && self.weights.lambda_theta > 0.0 {
            let mut total = 0.0;
            for (j, joint) in skel.joints.iter().enumerate() {
                for c in 0..3 {
                    let k = 3 * j + c;
                    let d = body.pose.axis_angles[k] - self.model.prior_mean(k);
                    total += joint.prior_weight[c] * d * d;
                }
            }
            pass.pose = total;
        }

        let rotation = cam.rotation_matrix();
        let world = WorldAdjoint {
            rotation: &rotation,
            scale: state.scale,
            mode: self.model.scale_mode,
            root: body.root.translation,
        };
        if self.contact_active() {
            let kernel = &self.model.kernels.contact;
            let targets = &corr.expect("validated").targets[t];
            let lambda = self.weights.lambda_contact;
            for c in 0..pass.kin.contacts.len() {
                let q = pass.kin.contacts[c];
                let y = scaled_camera_point(state.scale, world.mode, &world.root, &q);
                let d = rotation * y + cam.translation - targets[c];
                let (rho, drho) = kernel.rho_squared_with_derivative(d.norm_squared());
                pass.contact += rho;
                if want_grad {
                    let x_adj = (2.0 * lambda * drho) * d;
                    let q_adj = world.pull(&x_adj, &y, &q, &mut pass);
                    pass.contact_adj[c] += q_adj;
                }
            }
        }
        if self.temporal_active() {
            pass.scaled_joints = pass
                .kin
                .positions
                .iter()
                .map(|p| scaled_camera_point(state.scale, world.mode, &world.root, p))
                .collect();
            pass.world_joints = pass
                .scaled_joints
                .iter()
                .map(|y| rotation * y + cam.translation)
                .collect();
        }
        Ok(pass)
    }

    fn run(
        &self,
        state: &SequenceState,
        corr: Option<&Correspondences>,
        want_grad: bool,
    ) -> Result<(EnergyBreakdown, Option<StateGradient>), EnergyError> {
        self.validate(state, corr)?;
        let frames = state.frames();
        let mut passes: Vec<FramePass> = if frames > 1 {
            (0..frames)
                .into_par_iter()
                .map(|t| self.frame_pass(t, state, corr, want_grad))
                .collect::<Result<_, _>>()?
        } else {
            (0..frames)
                .map(|t| self.frame_pass(t, state, corr, want_grad))
                .collect::<Result<_, _>>()?
        };

        let w = self.weights;
        let mut e = EnergyBreakdown::default();
        let mut total = 0.0;
        for (t, p) in passes.iter().enumerate() {
            for (term, value) in [("joint", p.joint), ("shape_prior", p.shape), ("pose_prior", p.pose), ("contact", p.contact)] {
                if !value.is_finite() {
                    return Err(EnergyError::NonFiniteEnergy { term, frame: Some(t) });
                }
            }
            e.joint += p.joint;
            e.shape += p.shape;
            e.pose += p.pose;
            e.contact += p.contact;
            total += p.joint + w.lambda_beta * p.shape + w.lambda_theta * p.pose;
        }
        if self.contact_active() {
            total += w.lambda_contact * e.contact;
        }

        let mut world_adj: Vec<Vec<Vec3>> = Vec::new();
        if self.temporal_active() {
            let kernel = &self.model.kernels.temporal;
            let n = self.skeleton.joint_count();
            if want_grad {
                world_adj = vec![vec![Vec3::zeros(); n]; frames];
            }
            let mut temporal = 0.0;
            for t in 1..frames - 1 {
                let (prev, cur, next) = (&passes[t - 1].world_joints, &passes[t].world_joints, &passes[t + 1].world_joints);
                for j in 0..n {
                    let conf = self.observations[t - 1].keypoints[j]
                        .w
                        .min(self.observations[t].keypoints[j].w)
                        .min(self.observations[t + 1].keypoints[j].w);
                    let gate = 1.0 - conf;
                    let acc = (next[j] - cur[j]) - (cur[j] - prev[j]);
                    let (rho, drho) = kernel.rho_squared_with_derivative(acc.norm_squared());
                    let term = gate * rho;
                    if !term.is_finite() {
                        return Err(EnergyError::NonFiniteEnergy {
                            term: "temporal",
                            frame: Some(t),
                        });
                    }
                    temporal += term;
                    if want_grad {
                        let a_adj = (2.0 * w.lambda_temporal * gate * drho) * acc;
                        world_adj[t + 1][j] += a_adj;
                        world_adj[t][j] -= 2.0 * a_adj;
                        world_adj[t - 1][j] += a_adj;
                    }
                }
            }
            e.temporal = temporal;
            total += w.lambda_temporal * temporal;
        }
        if !total.is_finite() {
            return Err(EnergyError::NonFiniteEnergy { term: "total", frame: None });
        }
        e.total = total;
        if !want_grad {
            return Ok((e, None));
        }

        let finish = |(t, pass): (usize, &mut FramePass)| -> (BodyGradient, CameraAdjoint, f64) {
            let body = &state.bodies[t];
            if !world_adj.is_empty() {
                let rotation = state.cameras[t].rotation_matrix();
                let world = WorldAdjoint {
                    rotation: &rotation,
                    scale: state.scale,
                    mode: self.model.scale_mode,
                    root: body.root.translation,
                };
                for j in 0..world_adj[t].len() {
                    let y = pass.scaled_joints[j];
                    let p = pass.kin.positions[j];
                    let p_adj = world.pull(&world_adj[t][j], &y, &p, pass);
                    pass.joint_adj[j] += p_adj;
                }
            }
            let mut g = pass.kin.backprop(self.skeleton, &pass.joint_adj, &pass.contact_adj);
            g.root_translation += pass.root_adj;
            if self.terms.shape && w.lambda_beta > 0.0 {
                for (gk, b) in g.shape.iter_mut().zip(&body.shape.betas) {
                    *gk += 2.0 * w.lambda_beta * b;
                }
            }
            if self.terms.pose && w.lambda_theta > 0.0 {
                for (j, joint) in self.skeleton.joints.iter().enumerate() {
                    for c in 0..3 {
                        let k = 3 * j + c;
                        let d = body.pose.axis_angles[k] - self.model.prior_mean(k);
                        g.pose[k] += 2.0 * w.lambda_theta * joint.prior_weight[c] * d;
                    }
                }
            }
            (g, pass.camera_adj, pass.scale_adj)
        };
        let per_frame: Vec<(BodyGradient, CameraAdjoint, f64)> = if frames > 1 {
            passes.par_iter_mut().enumerate().map(finish).collect()
        } else {
            passes.iter_mut().enumerate().map(finish).collect()
        };
        let mut grad = StateGradient {
            bodies: Vec::with_capacity(frames),
            cameras: Vec::with_capacity(frames),
            scale: 0.0,
        };
        for (b, c, s) in per_frame {
            grad.bodies.push(b);
            grad.cameras.push(c);
            grad.scale += s;
        }
        Ok((e, Some(grad)))
    }
}
