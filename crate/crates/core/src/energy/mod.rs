//! Energy terms and their exact gradients.
//!
//! [`terms`] holds the value-only definitions of each term: plain loops over
//! forward kinematics with no gradient machinery, usable as an independent
//! check. [`Objective`] evaluates the weighted total and its gradient in one
//! pass. [`ParamLayout`] maps free parameter blocks to the flat vector the
//! optimizer works on.

mod objective;
mod params;
pub mod terms;

use serde::{Deserialize, Serialize};

use crate::body::SkeletonDef;
use crate::error::EnergyError;
use crate::geometry::{Mat3, Pose3, Vec3};

pub use objective::{CameraAdjoint, Correspondences, EnergyBreakdown, Objective, StateGradient, TermSet};
pub use params::ParamLayout;

/// One detected 2D keypoint. `w == 0` marks an undetected joint whose
/// position is ignored.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Keypoint {
    pub u: f64,
    pub v: f64,
    pub w: f64,
}

impl Keypoint {
    pub fn missing() -> Self {
        Self { u: 0.0, v: 0.0, w: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation2D {
    pub keypoints: Vec<Keypoint>,
}

impl Observation2D {
    pub fn confidences(&self) -> Vec<f64> {
        self.keypoints.iter().map(|k| k.w).collect()
    }

    /// Fraction of joints with zero confidence.
    pub fn missing_fraction(&self) -> f64 {
        if self.keypoints.is_empty() {
            return 0.0;
        }
        self.keypoints.iter().filter(|k| k.w == 0.0).count() as f64 / self.keypoints.len() as f64
    }
}

/// Geman-McClure robustifier `ρ(e) = e² / (σ² + e²)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobustKernel {
    pub sigma: f64,
}

impl RobustKernel {
    pub fn new(sigma: f64) -> Option<Self> {
        (sigma > 0.0 && sigma.is_finite()).then_some(Self { sigma })
    }

    #[inline]
    pub fn rho(&self, e: f64) -> f64 {
        self.rho_squared(e * e)
    }

    /// `dρ/de = 2σ²e / (σ² + e²)²`.
    pub fn derivative(&self, e: f64) -> f64 {
        let s2 = self.sigma * self.sigma;
        let d = s2 + e * e;
        2.0 * s2 * e / (d * d)
    }

    /// ρ as a function of the squared residual.
    #[inline]
    pub fn rho_squared(&self, sq: f64) -> f64 {
        sq / (self.sigma * self.sigma + sq)
    }

    /// `(ρ, dρ/d(e²))`, which stays smooth at `e = 0`.
    #[inline]
    pub fn rho_squared_with_derivative(&self, sq: f64) -> (f64, f64) {
        let s2 = self.sigma * self.sigma;
        let d = s2 + sq;
        (sq / d, s2 / (d * d))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Kernels {
    /// Pixels.
    pub joint: RobustKernel,
    /// Scene units.
    pub contact: RobustKernel,
    /// Scene units per frame².
    pub temporal: RobustKernel,
}

impl Default for Kernels {
    fn default() -> Self {
        Self {
            joint: RobustKernel { sigma: 100.0 },
            contact: RobustKernel { sigma: 0.2 },
            temporal: RobustKernel { sigma: 0.1 },
        }
    }
}

/// Where the global scale acts when mapping body points to the world.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ScaleMode {
    /// `x_w = T_wc (S · p_cam)`: scales body size and camera distance together.
    #[default]
    Camera,
    /// `x_w = T_wc (γ + S · (p_cam − γ))`: scales the body about its root only.
    Body,
}

/// Maps a camera-frame body point to world coordinates.
#[inline]
pub fn world_point(camera: &Pose3, scale: f64, mode: ScaleMode, root_translation: &Vec3, p_cam: &Vec3) -> Vec3 {
    camera.apply(&scaled_camera_point(scale, mode, root_translation, p_cam))
}

#[inline]
pub(crate) fn scaled_camera_point(scale: f64, mode: ScaleMode, root_translation: &Vec3, p: &Vec3) -> Vec3 {
    match mode {
        ScaleMode::Camera => scale * p,
        ScaleMode::Body => root_translation + scale * (p - root_translation),
    }
}

/// Term weights plus the per-joint annealing weights `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct Weights {
    pub lambda_beta: f64,
    pub lambda_theta: f64,
    pub lambda_contact: f64,
    pub lambda_temporal: f64,
    pub joint_weights: Vec<f64>,
}

impl Weights {
    pub fn new(joints: usize) -> Self {
        Self {
            lambda_beta: 0.01,
            lambda_theta: 0.1,
            lambda_contact: 0.0,
            lambda_temporal: 0.0,
            joint_weights: vec![1.0; joints],
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        let all = [self.lambda_beta, self.lambda_theta, self.lambda_contact, self.lambda_temporal];
        if all.iter().chain(&self.joint_weights).any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err("weights must be finite and non-negative".into());
        }
        Ok(())
    }
}

/// Model-level settings shared by all stages.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergyModel {
    pub kernels: Kernels,
    pub scale_mode: ScaleMode,
    /// Pose prior mean, flattened axis-angles; `None` means the rest pose.
    pub rest_pose: Option<Vec<f64>>,
}

impl Default for EnergyModel {
    fn default() -> Self {
        Self {
            kernels: Kernels::default(),
            scale_mode: ScaleMode::Camera,
            rest_pose: None,
        }
    }
}

impl EnergyModel {
    /// Prior mean of the `k`-th flattened pose component.
    pub fn prior_mean(&self, k: usize) -> f64 {
        self.rest_pose.as_ref().map_or(0.0, |r| r[k])
    }
}

/// Which parameter blocks the optimizer may change.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct FreeSet {
    pub shape: bool,
    pub pose: bool,
    /// Root orientation and translation.
    pub root: bool,
    pub camera: bool,
    pub scale: bool,
}

impl FreeSet {
    pub const NONE: FreeSet = FreeSet {
        shape: false,
        pose: false,
        root: false,
        camera: false,
        scale: false,
    };

    pub fn any(&self) -> bool {
        self.shape || self.pose || self.root || self.camera || self.scale
    }
}

/// Body states, camera-to-world poses and the shared scale for a sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceState {
    pub bodies: Vec<crate::body::BodyState>,
    pub cameras: Vec<Pose3>,
    pub scale: f64,
}

impl SequenceState {
    pub fn frames(&self) -> usize {
        self.bodies.len()
    }

    pub fn check(&self, skel: &SkeletonDef) -> Result<(), EnergyError> {
        if self.cameras.len() != self.bodies.len() {
            return Err(EnergyError::DimensionMismatch {
                what: "cameras",
                expected: self.bodies.len(),
                found: self.cameras.len(),
            });
        }
        for b in &self.bodies {
            b.check_dims(skel)?;
        }
        Ok(())
    }

    /// World-frame joints for every frame.
    pub fn world_joints(&self, skel: &SkeletonDef, mode: ScaleMode) -> Result<Vec<Vec<Vec3>>, EnergyError> {
        self.bodies
            .iter()
            .zip(&self.cameras)
            .map(|(b, cam)| {
                let joints = crate::body::forward_kinematics(skel, b)?;
                Ok(joints
                    .iter()
                    .map(|p| world_point(cam, self.scale, mode, &b.root.translation, p))
                    .collect())
            })
            .collect()
    }
}

#[inline]
pub(crate) fn outer(a: &Vec3, b: &Vec3) -> Mat3 {
    a * b.transpose()
}
