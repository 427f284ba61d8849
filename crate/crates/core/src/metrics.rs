//! Evaluation metrics: 2D projection error, motion smoothness, contact
//! distance and, with synthetic truth, scale and 3D joint errors.

use serde::{Deserialize, Serialize};

use crate::body::{contact_points, forward_kinematics, BodyState, SkeletonDef};
use crate::energy::{world_point, Observation2D, ScaleMode, SequenceState};
use crate::error::{EnergyError, MetricsError};
use crate::geometry::{CameraIntrinsics, Vec2, Vec3};
use crate::scene::SpatialIndex;
use crate::synth::{GroundTruth, LOWER_BODY};

/// Fraction of zero-confidence joints at which a frame counts as partially
/// observable.
pub const PARTIAL_THRESHOLD: f64 = 0.25;

/// Annotated 2D joints per frame; `None` marks an unannotated joint.
pub type Annotations = Vec<Vec<Option<Vec2>>>;

/// Mean 2D error over annotated joints of the selected frames.
pub fn pje(
    skel: &SkeletonDef,
    bodies: &[BodyState],
    intrinsics: &CameraIntrinsics,
    annotations: &Annotations,
    frames: &[usize],
) -> Result<f64, MetricsError> {
    let mut sum = 0.0;
    let mut count = 0usize;
    for &t in frames {
        let joints = forward_kinematics(skel, &bodies[t]).map_err(|_| MetricsError::EmptySubset)?;
        for (p, ann) in joints.iter().zip(&annotations[t]) {
            let Some(a) = ann else { continue };
            // Depth is clamped so joints behind the camera stay finite.
            let z = p.z.max(1e-6);
            let uv = Vec2::new(
                intrinsics.focal[0] * p.x / z + intrinsics.principal_point[0],
                intrinsics.focal[1] * p.y / z + intrinsics.principal_point[1],
            );
            sum += (uv - a).norm();
            count += 1;
        }
    }
    if count == 0 {
        return Err(MetricsError::EmptySubset);
    }
    Ok(sum / count as f64)
}

/// Frames with at least [`PARTIAL_THRESHOLD`] of joints at zero confidence.
pub fn partial_frames(observations: &[Observation2D]) -> Vec<usize> {
    observations
        .iter()
        .enumerate()
        .filter(|(_, o)| o.missing_fraction() >= PARTIAL_THRESHOLD)
        .map(|(t, _)| t)
        .collect()
}

/// Ground-truth annotations: projections of joints inside the image and not
/// truncated.
pub fn annotations_from_truth(
    skel: &SkeletonDef,
    truth: &GroundTruth,
    intrinsics: &CameraIntrinsics,
    image_size: (f64, f64),
) -> Annotations {
    truth
        .bodies
        .iter()
        .zip(&truth.truncated)
        .map(|(b, &trunc)| {
            let joints = forward_kinematics(skel, b).expect("truth matches skeleton");
            joints
                .iter()
                .enumerate()
                .map(|(j, p)| {
                    if trunc && LOWER_BODY.contains(&j) {
                        return None;
                    }
                    intrinsics
                        .project(p)
                        .ok()
                        .filter(|uv| uv.x >= 0.0 && uv.y >= 0.0 && uv.x < image_size.0 && uv.y < image_size.1)
                })
                .collect()
        })
        .collect()
}

/// Mean second-difference magnitude of world joints after dividing positions
/// by `scale · height`.
pub fn smoothness(world_joints: &[Vec<Vec3>], scale: f64, height: f64) -> Result<f64, MetricsError> {
    let frames = world_joints.len();
    if frames < 3 {
        return Err(MetricsError::SequenceTooShort { frames });
    }
    let norm = 1.0 / (scale * height);
    let mut sum = 0.0;
    let mut count = 0usize;
    for t in 1..frames - 1 {
        let (prev, cur, next) = (&world_joints[t - 1], &world_joints[t], &world_joints[t + 1]);
        for ((a, b), c) in prev.iter().zip(cur).zip(next) {
            sum += (((c - b) - (b - a)) * norm).norm();
            count += 1;
        }
    }
    Ok(if count == 0 { 0.0 } else { sum / count as f64 })
}

/// Mean over `frames` of the mean distance from contact candidates to their
/// nearest scene vertex, in scene units.
pub fn contact_distance(
    skel: &SkeletonDef,
    state: &SequenceState,
    mode: ScaleMode,
    index: &SpatialIndex,
    frames: &[usize],
) -> Result<f64, MetricsError> {
    if frames.is_empty() || skel.contact_candidates.is_empty() {
        return Err(MetricsError::EmptySubset);
    }
    let mut total = 0.0;
    for &t in frames {
        let b = &state.bodies[t];
        let contacts = contact_points(skel, b).map_err(|_| MetricsError::EmptySubset)?;
        let mean = contacts
            .iter()
            .map(|q| {
                let x = world_point(&state.cameras[t], state.scale, mode, &b.root.translation, q);
                index.nearest(&x).distance
            })
            .sum::<f64>()
            / contacts.len() as f64;
        total += mean;
    }
    Ok(total / frames.len() as f64)
}

/// Mean camera-frame 3D joint error in body units, split by whether the joint
/// was unobserved (`w = 0`) in the input.
pub fn joint3d_error(
    skel: &SkeletonDef,
    estimate: &[BodyState],
    truth: &[BodyState],
    observations: &[Observation2D],
) -> Result<(f64, f64), MetricsError> {
    let (mut occ, mut n_occ, mut vis, mut n_vis) = (0.0, 0usize, 0.0, 0usize);
    for ((e, g), obs) in estimate.iter().zip(truth).zip(observations) {
        let pe = forward_kinematics(skel, e).map_err(|_| MetricsError::EmptySubset)?;
        let pg = forward_kinematics(skel, g).map_err(|_| MetricsError::EmptySubset)?;
        for ((a, b), kp) in pe.iter().zip(&pg).zip(&obs.keypoints) {
            let d = (a - b).norm();
            if kp.w == 0.0 {
                occ += d;
                n_occ += 1;
            } else {
                vis += d;
                n_vis += 1;
            }
        }
    }
    let mean = |s: f64, n: usize| if n == 0 { 0.0 } else { s / n as f64 };
    Ok((mean(occ, n_occ), mean(vis, n_vis)))
}

/// One evaluated run. `pje_p` is absent when no frame is partially observable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub label: String,
    pub pje_u: f64,
    pub pje_p: Option<f64>,
    pub smoothness: f64,
    pub contact_distance: f64,
    /// Contact distance as a fraction of the recovered body height `S · h`.
    pub contact_distance_rel: f64,
    pub scale: f64,
    pub scale_rel_error: f64,
    pub joint3d_occluded: f64,
    pub joint3d_visible: f64,
}

impl MetricsReport {
    pub const CSV_HEADER: &'static str = "label,pje_u,pje_p,smoothness,contact_distance,contact_distance_rel,scale,scale_rel_error,joint3d_occluded,joint3d_visible";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            self.label,
            self.pje_u,
            self.pje_p.map_or(String::new(), |v| v.to_string()),
            self.smoothness,
            self.contact_distance,
            self.contact_distance_rel,
            self.scale,
            self.scale_rel_error,
            self.joint3d_occluded,
            self.joint3d_visible
        )
    }

    pub fn to_csv(reports: &[MetricsReport]) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for r in reports {
            out.push_str(&r.csv_row());
            out.push('\n');
        }
        out
    }
}

/// Inputs shared by every evaluation of one scenario.
pub struct EvalContext<'a> {
    pub skeleton: &'a SkeletonDef,
    pub intrinsics: &'a CameraIntrinsics,
    pub image_size: (f64, f64),
    pub observations: &'a [Observation2D],
    pub truth: &'a GroundTruth,
    pub scene: &'a SpatialIndex,
    pub scale_mode: ScaleMode,
}

impl EvalContext<'_> {
    pub fn evaluate(&self, label: &str, estimate: &SequenceState) -> Result<MetricsReport, MetricsError> {
        let frames = self.truth.bodies.len();
        if estimate.frames() != frames || self.observations.len() != frames {
            return Err(MetricsError::FrameCountMismatch {
                bundle: frames,
                estimate: estimate.frames(),
            });
        }
        let skel = self.skeleton;
        let annotations = annotations_from_truth(skel, self.truth, self.intrinsics, self.image_size);
        let all: Vec<usize> = (0..frames).collect();
        let pje_u = pje(skel, &estimate.bodies, self.intrinsics, &annotations, &all)?;
        let partial = partial_frames(self.observations);
        let pje_p = match pje(skel, &estimate.bodies, self.intrinsics, &annotations, &partial) {
            Ok(v) => Some(v),
            Err(MetricsError::EmptySubset) => None,
            Err(e) => return Err(e),
        };
        let height = skel
            .rest_height(&estimate.bodies[0].shape)
            .map_err(|_| MetricsError::EmptySubset)?;
        let world = estimate
            .world_joints(skel, self.scale_mode)
            .map_err(|_: EnergyError| MetricsError::EmptySubset)?;
        let smooth = smoothness(&world, estimate.scale, height)?;
        let stance: Vec<usize> = (0..frames).filter(|&t| self.truth.stance[t]).collect();
        let contact = contact_distance(skel, estimate, self.scale_mode, self.scene, &stance)?;
        let (occ, vis) = joint3d_error(skel, &estimate.bodies, &self.truth.bodies, self.observations)?;
        Ok(MetricsReport {
            label: label.to_string(),
            pje_u,
            pje_p,
            smoothness: smooth,
            contact_distance: contact,
            contact_distance_rel: contact / (estimate.scale * height),
            scale: estimate.scale,
            scale_rel_error: (estimate.scale - self.truth.scale).abs() / self.truth.scale,
            joint3d_occluded: occ,
            joint3d_visible: vis,
        })
    }
}
