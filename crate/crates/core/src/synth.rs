//! Synthetic egocentric captures: a partner performing a gait primitive on a
//! flat ground, filmed by a moving head-height camera walking alongside.
//!
//! The world is z-up with the ground at `z = 0`, in metres. The fitter sees a
//! copy of the scene and camera translations multiplied by `scene_scale`, so
//! the true body-to-scene scale is `S = scene_scale`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::body::{contact_points, forward_kinematics, BodyState, SkeletonDef};
use crate::energy::{Keypoint, Observation2D};
use crate::error::SynthError;
use crate::geometry::{exp_so3, CameraIntrinsics, Mat3, Pose3, Vec2, Vec3, MIN_DEPTH};
use crate::scene::SceneMesh;

/// Joints hidden in truncated frames.
pub const LOWER_BODY: [usize; 7] = [0, 1, 2, 3, 4, 5, 6];

const STREAM_SCENE: u64 = 0;
const STREAM_CAMERA: u64 = 1;
const STREAM_DETECT: u64 = 2;
const STREAM_SFM: u64 = 3;
const STREAM_SHAPE: u64 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MotionKind {
    #[default]
    Walk,
    Jog,
    /// Standing in place with large arm swings, as in throwing and catching.
    ArmSwing,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub frames: usize,
    pub motion: MotionKind,
    pub fps: f64,
    /// Pixel noise standard deviation.
    pub noise_std: f64,
    pub dropout: f64,
    /// Fraction of frames, as one contiguous block in the middle of the
    /// sequence, with the lower body out of frame.
    pub truncation: f64,
    /// Scale applied to the scene and camera translations given to the fitter.
    pub scene_scale: f64,
    pub seed: u64,
    /// Bound on the per-axis camera orientation jitter, in degrees.
    pub camera_jitter_deg: f64,
    /// Standard deviation of the rotation error added to fitter cameras.
    pub camera_rotation_noise_deg: f64,
    /// Standard deviation of the translation error added to fitter cameras,
    /// in metres before scaling.
    pub camera_translation_noise: f64,
    /// Scene vertex spacing in scene units.
    pub grid_spacing: f64,
    pub boxes: usize,
    /// Standard deviation of the true shape coefficients.
    pub shape_std: f64,
    pub image_width: u32,
    pub image_height: u32,
    pub focal: f64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            frames: 20,
            motion: MotionKind::Walk,
            fps: 30.0,
            noise_std: 2.0,
            dropout: 0.05,
            truncation: 0.3,
            scene_scale: 2.0,
            seed: 0,
            camera_jitter_deg: 3.0,
            camera_rotation_noise_deg: 0.2,
            camera_translation_noise: 0.01,
            grid_spacing: 0.02,
            boxes: 2,
            shape_std: 0.0,
            image_width: 1280,
            image_height: 720,
            focal: 700.0,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::InvalidConfig(m.to_string()));
        if self.frames < 3 {
            return bad("frames must be at least 3");
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return bad("noise_std must be non-negative");
        }
        if !(self.scene_scale > 0.0 && self.scene_scale.is_finite()) {
            return bad("scene_scale must be positive");
        }
        if !(0.0..=1.0).contains(&self.dropout) || !(0.0..=1.0).contains(&self.truncation) {
            return bad("dropout and truncation must lie in [0, 1]");
        }
        if !(self.fps > 0.0) || !(self.focal > 0.0) || self.image_width == 0 || self.image_height == 0 {
            return bad("fps, focal and image size must be positive");
        }
        if !(self.grid_spacing > 0.0) {
            return bad("grid_spacing must be positive");
        }
        for v in [self.camera_jitter_deg, self.camera_rotation_noise_deg, self.camera_translation_noise, self.shape_std] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad("noise magnitudes must be non-negative");
            }
        }
        Ok(())
    }

    pub fn intrinsics(&self) -> CameraIntrinsics {
        CameraIntrinsics {
            focal: [self.focal, self.focal],
            principal_point: [self.image_width as f64 / 2.0, self.image_height as f64 / 2.0],
        }
    }

    /// Frames covered by the truncation block.
    pub fn truncated_frames(&self) -> std::ops::Range<usize> {
        let n = (self.truncation * self.frames as f64).round() as usize;
        let start = (self.frames - n) / 2;
        start..start + n
    }
}

/// Pixel noise and confidence model of the stand-in keypoint detector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectorModel {
    pub noise_std: f64,
    pub dropout: f64,
    pub confidence: (f64, f64),
    pub image_size: (f64, f64),
}

/// Simulated detections for camera-frame joints. Every joint consumes the
/// same number of random draws whatever its outcome.
pub fn detect<R: Rng>(joints: &[Vec3], intrinsics: &CameraIntrinsics, model: &DetectorModel, rng: &mut R) -> Observation2D {
    let noise = Normal::new(0.0, model.noise_std.max(0.0)).expect("finite std");
    Observation2D {
        keypoints: joints
            .iter()
            .map(|p| {
                let (nu, nv): (f64, f64) = (noise.sample(rng), noise.sample(rng));
                let conf = rng.random_range(model.confidence.0..=model.confidence.1);
                let dropped = rng.random::<f64>() < model.dropout;
                if p.z <= MIN_DEPTH || dropped {
                    return Keypoint::missing();
                }
                let uv = intrinsics.project(p).expect("in front of camera");
                let inside = uv.x >= 0.0 && uv.y >= 0.0 && uv.x < model.image_size.0 && uv.y < model.image_size.1;
                if !inside {
                    return Keypoint::missing();
                }
                Keypoint {
                    u: uv.x + nu,
                    v: uv.y + nv,
                    w: conf,
                }
            })
            .collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    /// Camera-frame body states in metres.
    pub bodies: Vec<BodyState>,
    /// True camera-to-world poses in scene units.
    pub cameras: Vec<Pose3>,
    pub scale: f64,
    /// Frames with a foot on the ground.
    pub stance: Vec<bool>,
    pub truncated: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioBundle {
    pub config: ScenarioConfig,
    pub truth: GroundTruth,
    /// Scene in scene units.
    pub scene: SceneMesh,
    /// Camera poses as seen by the fitter, including simulated SfM error.
    pub cameras: Vec<Pose3>,
    pub observations: Vec<Observation2D>,
    pub intrinsics: CameraIntrinsics,
}

struct Gait {
    speed: f64,
    frequency: f64,
    hip: f64,
    knee: f64,
    shoulder: f64,
    elbow: f64,
}

impl Gait {
    fn of(kind: MotionKind) -> Self {
        match kind {
            MotionKind::Walk => Gait {
                speed: 1.2,
                frequency: 0.9,
                hip: 0.3,
                knee: 0.4,
                shoulder: 0.25,
                elbow: 0.25,
            },
            MotionKind::Jog => Gait {
                speed: 2.6,
                frequency: 1.4,
                hip: 0.45,
                knee: 0.8,
                shoulder: 0.4,
                elbow: 1.1,
            },
            MotionKind::ArmSwing => Gait {
                speed: 0.0,
                frequency: 0.7,
                hip: 0.0,
                knee: 0.0,
                shoulder: 0.9,
                elbow: 0.6,
            },
        }
    }

    /// Local joint rotations at gait phase `phi`. All rotations are about the
    /// body left axis; feet stay parallel to the ground.
    fn pose(&self, skel: &SkeletonDef, phi: f64) -> Vec<f64> {
        let mut pose = vec![0.0; skel.pose_dim()];
        let mut set = |name: &str, angle: f64| {
            let j = skel.joint_index(name).expect("standard joint");
            pose[3 * j] = angle;
        };
        let knee = |p: f64| {
            let c = 0.5 + 0.5 * p.cos();
            self.knee * c * c
        };
        let (lh, rh) = (-self.hip * phi.sin(), self.hip * phi.sin());
        let (lk, rk) = (knee(phi), knee(phi + std::f64::consts::PI));
        set("l_hip", lh);
        set("r_hip", rh);
        set("l_knee", lk);
        set("r_knee", rk);
        set("l_ankle", -(lh + lk));
        set("r_ankle", -(rh + rk));
        set("l_shoulder", self.shoulder * phi.sin());
        set("r_shoulder", -self.shoulder * phi.sin());
        set("l_elbow", -self.elbow * (1.0 + 0.3 * phi.cos()));
        set("r_elbow", -self.elbow * (1.0 - 0.3 * phi.cos()));
        pose
    }
}

/// Body frame (x left, y up, z forward) to world for a partner facing +x.
fn body_to_world() -> Mat3 {
    Mat3::from_columns(&[Vec3::y(), Vec3::z(), Vec3::x()])
}

/// Camera-to-world rotation looking from `eye` to `target` (z forward,
/// y down).
pub fn look_at(eye: &Vec3, target: &Vec3) -> Mat3 {
    let z = (target - eye).normalize();
    let x = z.cross(&Vec3::z()).normalize();
    let y = z.cross(&x);
    Mat3::from_columns(&[x, y, z])
}

fn rotation_to_quat(r: &Mat3) -> nalgebra::UnitQuaternion<f64> {
    nalgebra::UnitQuaternion::from_rotation_matrix(&nalgebra::Rotation3::from_matrix_unchecked(*r))
}

fn rotation_to_axis_angle(r: &Mat3) -> Vec3 {
    rotation_to_quat(r).scaled_axis()
}

/// Grid patch `origin + i·du + j·dv` for `i ≤ nu`, `j ≤ nv`, triangulated.
fn patch(origin: Vec3, du: Vec3, dv: Vec3, nu: usize, nv: usize) -> SceneMesh {
    let mut vertices = Vec::with_capacity((nu + 1) * (nv + 1));
    for j in 0..=nv {
        for i in 0..=nu {
            vertices.push(origin + du * i as f64 + dv * j as f64);
        }
    }
    let id = |i: usize, j: usize| j * (nu + 1) + i;
    let mut faces = Vec::with_capacity(2 * nu * nv);
    for j in 0..nv {
        for i in 0..nu {
            faces.push([id(i, j), id(i + 1, j), id(i + 1, j + 1)]);
            faces.push([id(i, j), id(i + 1, j + 1), id(i, j + 1)]);
        }
    }
    SceneMesh { vertices, faces }
}

fn divisions(length: f64, spacing: f64) -> usize {
    ((length / spacing).ceil() as usize).max(1)
}

/// Ground rectangle `[x0, x1] × [y0, y1]` plus axis-aligned boxes, all in
/// scene units.
fn build_scene(ground: [f64; 4], boxes: &[(Vec3, Vec3)], spacing: f64) -> SceneMesh {
    let [x0, x1, y0, y1] = ground;
    let (nx, ny) = (divisions(x1 - x0, spacing), divisions(y1 - y0, spacing));
    let mut mesh = patch(
        Vec3::new(x0, y0, 0.0),
        Vec3::new((x1 - x0) / nx as f64, 0.0, 0.0),
        Vec3::new(0.0, (y1 - y0) / ny as f64, 0.0),
        nx,
        ny,
    );
    for (lo, hi) in boxes {
        let size = hi - lo;
        let n = [divisions(size.x, spacing), divisions(size.y, spacing), divisions(size.z, spacing)];
        let step = Vec3::new(size.x / n[0] as f64, size.y / n[1] as f64, size.z / n[2] as f64);
        let (ex, ey, ez) = (Vec3::x() * step.x, Vec3::y() * step.y, Vec3::z() * step.z);
        mesh.append(&patch(Vec3::new(lo.x, lo.y, hi.z), ex, ey, n[0], n[1]));
        mesh.append(&patch(*lo, ex, ez, n[0], n[2]));
        mesh.append(&patch(Vec3::new(lo.x, hi.y, lo.z), ex, ez, n[0], n[2]));
        mesh.append(&patch(*lo, ey, ez, n[1], n[2]));
        mesh.append(&patch(Vec3::new(hi.x, lo.y, lo.z), ey, ez, n[1], n[2]));
    }
    mesh
}

/// Generates a scenario; identical configs give bit-identical bundles.
pub fn generate(config: &ScenarioConfig) -> Result<ScenarioBundle, SynthError> {
    config.validate()?;
    let skel = SkeletonDef::standard();
    let gait = Gait::of(config.motion);
    let s = config.scene_scale;
    let rng = |stream: u64| {
        let mut r = ChaCha8Rng::seed_from_u64(config.seed);
        r.set_stream(stream);
        r
    };

    let mut shape_rng = rng(STREAM_SHAPE);
    let mut shape = crate::body::ShapeParams::zeros(skel.shape_dim());
    if config.shape_std > 0.0 {
        let n = Normal::new(0.0, config.shape_std).expect("finite std");
        for b in &mut shape.betas {
            *b = n.sample(&mut shape_rng);
        }
    }

    // World-frame partner motion with the lowest sole on the ground.
    let r_wb = body_to_world();
    let mut world_roots = Vec::with_capacity(config.frames);
    let mut poses = Vec::with_capacity(config.frames);
    for t in 0..config.frames {
        let time = t as f64 / config.fps;
        let phi = 2.0 * std::f64::consts::PI * gait.frequency * time;
        let pose = gait.pose(&skel, phi);
        let mut body = BodyState::rest(&skel);
        body.shape = shape.clone();
        body.pose.axis_angles = pose.clone();
        body.root.orientation = rotation_to_axis_angle(&r_wb);
        let lowest = contact_points(&skel, &body)
            .expect("standard skeleton")
            .iter()
            .map(|q| q.z)
            .fold(f64::INFINITY, f64::min);
        world_roots.push(Vec3::new(gait.speed * time, 0.0, -lowest));
        poses.push(pose);
    }

    // Camera wearer walking alongside at head height.
    let mut cam_rng = rng(STREAM_CAMERA);
    let jitter = config.camera_jitter_deg.to_radians();
    let phases: [f64; 3] = std::array::from_fn(|_| cam_rng.random_range(0.0..std::f64::consts::TAU));
    let mut true_cameras = Vec::with_capacity(config.frames);
    let mut metric_cameras = Vec::with_capacity(config.frames);
    for (t, root) in world_roots.iter().enumerate() {
        let eye = Vec3::new(root.x - 1.5, 3.5, 1.6);
        let target = Vec3::new(root.x, 0.0, 0.9);
        let slow = 2.0 * std::f64::consts::PI * t as f64 / config.frames as f64;
        let wobble = Vec3::from_fn(|k, _| {
            let u: f64 = cam_rng.random_range(-1.0..=1.0);
            jitter * (0.6 * (slow + phases[k]).sin() + 0.4 * u)
        });
        let r_wc = look_at(&eye, &target) * exp_so3(&wobble);
        metric_cameras.push(Pose3::new(rotation_to_quat(&r_wc), eye));
        true_cameras.push(Pose3::new(rotation_to_quat(&r_wc), eye * s));
    }

    // Camera-frame ground truth.
    let bodies: Vec<BodyState> = (0..config.frames)
        .map(|t| {
            let cam = &metric_cameras[t];
            let r_cw = cam.rotation_matrix().transpose();
            let mut b = BodyState::rest(&skel);
            b.shape = shape.clone();
            b.pose.axis_angles = poses[t].clone();
            b.root.orientation = rotation_to_axis_angle(&(r_cw * r_wb));
            b.root.translation = r_cw * (world_roots[t] - cam.translation);
            b
        })
        .collect();

    let truncated: Vec<bool> = {
        let block = config.truncated_frames();
        (0..config.frames).map(|t| block.contains(&t)).collect()
    };
    let intrinsics = config.intrinsics();
    let detector = DetectorModel {
        noise_std: config.noise_std,
        dropout: config.dropout,
        confidence: (0.6, 1.0),
        image_size: (config.image_width as f64, config.image_height as f64),
    };
    let mut det_rng = rng(STREAM_DETECT);
    let observations: Vec<Observation2D> = bodies
        .iter()
        .zip(&truncated)
        .map(|(b, &trunc)| {
            let joints = forward_kinematics(&skel, b).expect("standard skeleton");
            let mut obs = detect(&joints, &intrinsics, &detector, &mut det_rng);
            if trunc {
                for &j in &LOWER_BODY {
                    obs.keypoints[j] = Keypoint::missing();
                }
            }
            obs
        })
        .collect();

    let mut sfm_rng = rng(STREAM_SFM);
    let rot_noise = Normal::new(0.0, config.camera_rotation_noise_deg.to_radians()).expect("finite std");
    let trans_noise = Normal::new(0.0, config.camera_translation_noise * s).expect("finite std");
    let cameras = true_cameras
        .iter()
        .map(|c| {
            let dr = Vec3::from_fn(|_, _| rot_noise.sample(&mut sfm_rng));
            let dt = Vec3::from_fn(|_, _| trans_noise.sample(&mut sfm_rng));
            c.perturbed(&dr, &dt)
        })
        .collect();

    let stance = bodies
        .iter()
        .zip(&true_cameras)
        .map(|(b, cam)| {
            contact_points(&skel, b)
                .expect("standard skeleton")
                .iter()
                .any(|q| cam.apply(&(s * q)).z.abs() <= 0.02 * s)
        })
        .collect();

    // Ground under the walking path, boxes well ahead of it.
    let x_end = world_roots.last().map_or(0.0, |r| r.x);
    let margin = 3.0;
    let ground = [-margin * s, (x_end + margin) * s, -margin * s, margin * s];
    let mut scene_rng = rng(STREAM_SCENE);
    let boxes: Vec<(Vec3, Vec3)> = (0..config.boxes.clamp(1, 3))
        .map(|i| {
            let size = Vec3::new(
                scene_rng.random_range(0.3..0.8),
                scene_rng.random_range(0.3..0.8),
                scene_rng.random_range(0.3..0.8),
            );
            let lo = Vec3::new(
                x_end + 3.0 + 1.2 * i as f64 + scene_rng.random_range(0.0..0.5),
                scene_rng.random_range(-1.5..1.0),
                0.0,
            );
            (lo * s, (lo + size) * s)
        })
        .collect();
    let scene = build_scene(ground, &boxes, config.grid_spacing);

    Ok(ScenarioBundle {
        config: config.clone(),
        truth: GroundTruth {
            bodies,
            cameras: true_cameras,
            scale: s,
            stance,
            truncated,
        },
        scene,
        cameras,
        observations,
        intrinsics,
    })
}

/// Exact projections of camera-frame joints, `None` when behind the camera.
pub fn project_all(joints: &[Vec3], intrinsics: &CameraIntrinsics) -> Vec<Option<Vec2>> {
    joints.iter().map(|p| intrinsics.project(p).ok()).collect()
}
