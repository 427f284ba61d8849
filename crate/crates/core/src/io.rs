//! On-disk artifacts.
//!
//! A scenario bundle is a directory with `scene.obj`, `camera.jsonl` (one
//! camera-to-world pose per line, quaternion `[w, x, y, z]` plus translation),
//! `observations.jsonl` (per frame, `[u, v, w]` per joint), `truth.jsonl` and
//! `config.toml`. A fit writes `estimate.jsonl`, `scale.json`, `trace.csv`
//! and a copy of the resolved config.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use nalgebra::{Quaternion, UnitQuaternion};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::body::{forward_kinematics, BodyState, PoseParams, RootTransform, ShapeParams, SkeletonDef};
use crate::config::RunConfig;
use crate::energy::{world_point, Keypoint, Observation2D, ScaleMode, SequenceState};
use crate::error::IoError;
use crate::geometry::{CameraIntrinsics, Pose3, Vec3};
use crate::optimizer::{SequenceEstimate, StageReport, TraceRow};
use crate::scene::SceneMesh;
use crate::synth::{GroundTruth, ScenarioBundle};

pub const SCENE_FILE: &str = "scene.obj";
pub const CAMERA_FILE: &str = "camera.jsonl";
pub const OBSERVATIONS_FILE: &str = "observations.jsonl";
pub const TRUTH_FILE: &str = "truth.jsonl";
pub const CONFIG_FILE: &str = "config.toml";
pub const ESTIMATE_FILE: &str = "estimate.jsonl";
pub const SCALE_FILE: &str = "scale.json";
pub const TRACE_FILE: &str = "trace.csv";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoseRecord {
    /// `[w, x, y, z]`.
    pub quaternion: [f64; 4],
    pub translation: [f64; 3],
}

impl From<&Pose3> for PoseRecord {
    fn from(p: &Pose3) -> Self {
        let q = p.rotation.quaternion();
        Self {
            quaternion: [q.w, q.i, q.j, q.k],
            translation: [p.translation.x, p.translation.y, p.translation.z],
        }
    }
}

impl PoseRecord {
    pub fn to_pose(&self) -> Result<Pose3, String> {
        let [w, x, y, z] = self.quaternion;
        let q = Quaternion::new(w, x, y, z);
        let n = q.norm();
        if !(n > 0.0) || !n.is_finite() || !self.translation.iter().all(|v| v.is_finite()) {
            return Err("pose must be finite with a non-zero quaternion".into());
        }
        // Unit input is kept bit-exact; anything else is normalized.
        let rotation = if (n - 1.0).abs() < 1e-12 {
            UnitQuaternion::new_unchecked(q)
        } else {
            UnitQuaternion::new_normalize(q)
        };
        Ok(Pose3::new(rotation, Vec3::from(self.translation)))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CameraLine {
    frame: usize,
    quaternion: [f64; 4],
    translation: [f64; 3],
}

impl CameraLine {
    fn new(frame: usize, pose: &Pose3) -> Self {
        let r = PoseRecord::from(pose);
        Self {
            frame,
            quaternion: r.quaternion,
            translation: r.translation,
        }
    }

    fn to_pose(&self) -> Result<Pose3, String> {
        PoseRecord {
            quaternion: self.quaternion,
            translation: self.translation,
        }
        .to_pose()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ObservationLine {
    frame: usize,
    keypoints: Vec<[f64; 3]>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TruthLine {
    frame: usize,
    /// Camera-frame body in metres.
    body: BodyState,
    camera: PoseRecord,
    scale: f64,
    stance: bool,
    truncated: bool,
}

/// One frame of a fitted sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimateLine {
    pub frame: usize,
    pub betas: Vec<f64>,
    pub pose: Vec<f64>,
    pub root_orientation: [f64; 3],
    pub root_translation: [f64; 3],
    pub camera: PoseRecord,
}

/// Contents of `scale.json`: the shared scale plus run provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScaleRecord {
    pub scale: f64,
    pub frames: usize,
    /// Some stage ended above its starting energy.
    pub flagged: bool,
    pub stages: Vec<StageReport>,
    pub seed: u64,
    pub config: RunConfig,
}

/// A bundle as read back from disk. Truth is optional so real captures can
/// use the same layout.
#[derive(Debug, Clone)]
pub struct Bundle {
    pub config: RunConfig,
    pub scene: SceneMesh,
    pub cameras: Vec<Pose3>,
    pub observations: Vec<Observation2D>,
    pub truth: Option<GroundTruth>,
}

impl Bundle {
    pub fn intrinsics(&self) -> CameraIntrinsics {
        self.config.scenario.intrinsics()
    }

    pub fn image_size(&self) -> (f64, f64) {
        (self.config.scenario.image_width as f64, self.config.scenario.image_height as f64)
    }

    pub fn frames(&self) -> usize {
        self.observations.len()
    }
}

fn file_err(path: &Path) -> impl Fn(std::io::Error) -> IoError + '_ {
    move |source| IoError::File {
        path: path.to_path_buf(),
        source,
    }
}

fn format_err(path: &Path, line: usize, message: impl Into<String>) -> IoError {
    IoError::Format {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn create(path: &Path) -> Result<BufWriter<fs::File>, IoError> {
    fs::File::create(path).map(BufWriter::new).map_err(file_err(path))
}

fn write_text(path: &Path, text: &str) -> Result<(), IoError> {
    fs::write(path, text).map_err(file_err(path))
}

fn write_jsonl<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<(), IoError> {
    let mut out = create(path)?;
    for row in rows {
        let line = serde_json::to_string(&row).expect("records serialize");
        writeln!(out, "{line}").map_err(file_err(path))?;
    }
    out.flush().map_err(file_err(path))
}

fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, IoError> {
    let file = fs::File::open(path).map_err(file_err(path))?;
    let mut rows = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(file_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        rows.push(serde_json::from_str(&line).map_err(|e| format_err(path, i + 1, e.to_string()))?);
    }
    Ok(rows)
}

/// Checks that `frame` fields count up from 0.
fn check_frames(path: &Path, frames: impl Iterator<Item = usize>) -> Result<(), IoError> {
    for (i, f) in frames.enumerate() {
        if f != i {
            return Err(format_err(path, i + 1, format!("expected frame {i}, found {f}")));
        }
    }
    Ok(())
}

pub fn read_config(path: &Path, overrides: &[String]) -> Result<RunConfig, IoError> {
    let text = fs::read_to_string(path).map_err(file_err(path))?;
    Ok(RunConfig::parse(&text, &path.display().to_string(), overrides)?)
}

pub fn write_bundle(dir: &Path, bundle: &ScenarioBundle, config: &RunConfig) -> Result<(), IoError> {
    fs::create_dir_all(dir).map_err(file_err(dir))?;
    let path = dir.join(SCENE_FILE);
    let mut out = create(&path)?;
    bundle.scene.write_obj(&mut out).and_then(|_| out.flush()).map_err(file_err(&path))?;
    write_jsonl(
        &dir.join(CAMERA_FILE),
        bundle.cameras.iter().enumerate().map(|(frame, c)| CameraLine::new(frame, c)),
    )?;
    write_jsonl(
        &dir.join(OBSERVATIONS_FILE),
        bundle.observations.iter().enumerate().map(|(frame, o)| ObservationLine {
            frame,
            keypoints: o.keypoints.iter().map(|k| [k.u, k.v, k.w]).collect(),
        }),
    )?;
    let t = &bundle.truth;
    write_jsonl(
        &dir.join(TRUTH_FILE),
        (0..t.bodies.len()).map(|frame| TruthLine {
            frame,
            body: t.bodies[frame].clone(),
            camera: (&t.cameras[frame]).into(),
            scale: t.scale,
            stance: t.stance[frame],
            truncated: t.truncated[frame],
        }),
    )?;
    write_text(&dir.join(CONFIG_FILE), &config.to_toml())
}

pub fn read_bundle(dir: &Path) -> Result<Bundle, IoError> {
    let config = read_config(&dir.join(CONFIG_FILE), &[])?;
    let path = dir.join(SCENE_FILE);
    let file = fs::File::open(&path).map_err(file_err(&path))?;
    let scene = SceneMesh::read_obj(BufReader::new(file))?;

    let path = dir.join(CAMERA_FILE);
    let lines: Vec<CameraLine> = read_jsonl(&path)?;
    check_frames(&path, lines.iter().map(|l| l.frame))?;
    let cameras = lines
        .iter()
        .enumerate()
        .map(|(i, l)| l.to_pose().map_err(|m| format_err(&path, i + 1, m)))
        .collect::<Result<Vec<_>, _>>()?;

    let path = dir.join(OBSERVATIONS_FILE);
    let lines: Vec<ObservationLine> = read_jsonl(&path)?;
    check_frames(&path, lines.iter().map(|l| l.frame))?;
    let observations = lines
        .into_iter()
        .map(|l| Observation2D {
            keypoints: l.keypoints.iter().map(|&[u, v, w]| Keypoint { u, v, w }).collect(),
        })
        .collect::<Vec<_>>();

    let path = dir.join(TRUTH_FILE);
    let truth = if path.exists() {
        let lines: Vec<TruthLine> = read_jsonl(&path)?;
        check_frames(&path, lines.iter().map(|l| l.frame))?;
        let cameras = lines
            .iter()
            .enumerate()
            .map(|(i, l)| l.camera.to_pose().map_err(|m| format_err(&path, i + 1, m)))
            .collect::<Result<Vec<_>, _>>()?;
        Some(GroundTruth {
            scale: lines.first().map_or(1.0, |l| l.scale),
            stance: lines.iter().map(|l| l.stance).collect(),
            truncated: lines.iter().map(|l| l.truncated).collect(),
            bodies: lines.into_iter().map(|l| l.body).collect(),
            cameras,
        })
    } else {
        None
    };
    Ok(Bundle {
        config,
        scene,
        cameras,
        observations,
        truth,
    })
}

pub fn estimate_lines(state: &SequenceState) -> Vec<EstimateLine> {
    state
        .bodies
        .iter()
        .zip(&state.cameras)
        .enumerate()
        .map(|(frame, (b, c))| EstimateLine {
            frame,
            betas: b.shape.betas.clone(),
            pose: b.pose.axis_angles.clone(),
            root_orientation: b.root.orientation.into(),
            root_translation: b.root.translation.into(),
            camera: c.into(),
        })
        .collect()
}

/// Writes `estimate.jsonl`, `scale.json`, `trace.csv` and `config.toml`.
pub fn write_estimate(dir: &Path, estimate: &SequenceEstimate, config: &RunConfig) -> Result<(), IoError> {
    fs::create_dir_all(dir).map_err(file_err(dir))?;
    write_jsonl(&dir.join(ESTIMATE_FILE), estimate_lines(&estimate.state))?;
    let scale = ScaleRecord {
        scale: estimate.state.scale,
        frames: estimate.state.frames(),
        flagged: estimate.flagged(),
        stages: estimate.stages.clone(),
        seed: config.scenario.seed,
        config: config.clone(),
    };
    let json = serde_json::to_string_pretty(&scale).expect("records serialize");
    write_text(&dir.join(SCALE_FILE), &(json + "\n"))?;
    write_text(&dir.join(TRACE_FILE), &trace_csv(&estimate.trace))?;
    write_text(&dir.join(CONFIG_FILE), &config.to_toml())
}

pub const TRACE_HEADER: &str = "stage,name,iteration,scale,joint,shape,pose,contact,temporal,total";

pub fn trace_csv(rows: &[TraceRow]) -> String {
    let mut out = String::from(TRACE_HEADER);
    out.push('\n');
    for r in rows {
        let e = &r.energy;
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            r.stage, r.name, r.iteration, r.scale, e.joint, e.shape, e.pose, e.contact, e.temporal, e.total
        ));
    }
    out
}

pub fn read_estimate(dir: &Path) -> Result<(SequenceState, ScaleRecord), IoError> {
    let path = dir.join(SCALE_FILE);
    let text = fs::read_to_string(&path).map_err(file_err(&path))?;
    let scale: ScaleRecord = serde_json::from_str(&text).map_err(|e| format_err(&path, e.line(), e.to_string()))?;
    let path = dir.join(ESTIMATE_FILE);
    let lines: Vec<EstimateLine> = read_jsonl(&path)?;
    check_frames(&path, lines.iter().map(|l| l.frame))?;
    let mut bodies = Vec::with_capacity(lines.len());
    let mut cameras = Vec::with_capacity(lines.len());
    for (i, l) in lines.into_iter().enumerate() {
        cameras.push(l.camera.to_pose().map_err(|m| format_err(&path, i + 1, m))?);
        bodies.push(BodyState {
            shape: ShapeParams { betas: l.betas },
            pose: PoseParams { axis_angles: l.pose },
            root: RootTransform {
                orientation: Vec3::from(l.root_orientation),
                translation: Vec3::from(l.root_translation),
            },
        });
    }
    Ok((SequenceState { bodies, cameras, scale: scale.scale }, scale))
}

/// World-space body mesh: each bone becomes a thin triangular prism.
pub fn body_mesh(skel: &SkeletonDef, body: &BodyState, camera: &Pose3, scale: f64, mode: ScaleMode) -> SceneMesh {
    let joints = forward_kinematics(skel, body).expect("state matches skeleton");
    let world: Vec<Vec3> = joints
        .iter()
        .map(|p| world_point(camera, scale, mode, &body.root.translation, p))
        .collect();
    let radius = 0.02 * scale;
    let mut mesh = SceneMesh::default();
    for (i, j) in skel.joints.iter().enumerate() {
        let Some(p) = j.parent else { continue };
        let (a, b) = (world[p], world[i]);
        let axis = b - a;
        if axis.norm() < 1e-12 {
            continue;
        }
        let helper = if axis.x.abs() < 0.9 * axis.norm() { Vec3::x() } else { Vec3::y() };
        let u = axis.cross(&helper).normalize() * radius;
        let v = axis.cross(&u).normalize() * radius;
        let ring = [u, -0.5 * u + 0.866 * v, -0.5 * u - 0.866 * v];
        let base = mesh.vertices.len();
        mesh.vertices.extend(ring.iter().map(|r| a + r));
        mesh.vertices.extend(ring.iter().map(|r| b + r));
        for k in 0..3 {
            let n = (k + 1) % 3;
            mesh.faces.push([base + k, base + n, base + 3 + k]);
            mesh.faces.push([base + n, base + 3 + n, base + 3 + k]);
        }
    }
    mesh
}

/// Writes `body_NNNN.obj` per frame and `combined.obj` with the scene and
/// every frame's body. Returns the written paths.
pub fn write_body_objs(
    dir: &Path,
    skel: &SkeletonDef,
    state: &SequenceState,
    mode: ScaleMode,
    scene: &SceneMesh,
) -> Result<Vec<PathBuf>, IoError> {
    fs::create_dir_all(dir).map_err(file_err(dir))?;
    let mut combined = scene.clone();
    let mut paths = Vec::new();
    for (t, (b, c)) in state.bodies.iter().zip(&state.cameras).enumerate() {
        let mesh = body_mesh(skel, b, c, state.scale, mode);
        let path = dir.join(format!("body_{t:04}.obj"));
        let mut out = create(&path)?;
        mesh.write_obj(&mut out).and_then(|_| out.flush()).map_err(file_err(&path))?;
        combined.append(&mesh);
        paths.push(path);
    }
    let path = dir.join("combined.obj");
    let mut out = create(&path)?;
    combined.write_obj(&mut out).and_then(|_| out.flush()).map_err(file_err(&path))?;
    paths.push(path);
    Ok(paths)
}
