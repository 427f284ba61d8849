//! Adam over masked parameter blocks and the staged fitting schedule.
//!
//! A schedule is a list of stages. A `per_frame` stage fits every frame on its
//! own (no cross-frame terms) with annealed limb weights; a `sequence` stage
//! optimizes all frames jointly, refreshing contact correspondences at the
//! start of every outer iteration. β is consolidated to the per-component
//! median after the first stage when a later stage follows.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::body::{consolidate_shape, BodyState, SkeletonDef};
use crate::energy::{
    Correspondences, EnergyBreakdown, EnergyModel, FreeSet, Objective, Observation2D, ParamLayout, SequenceState,
    TermSet, Weights,
};
use crate::error::{EnergyError, OptimError};
use crate::geometry::{exp_so3, CameraIntrinsics, Pose3, Vec2, Vec3};
use crate::scene::SpatialIndex;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamParams {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
        }
    }
}

/// `b^n` by repeated squaring. `powi` lowers differently across
/// optimization levels, which would make results build-dependent.
fn pow_int(mut b: f64, mut n: u64) -> f64 {
    let mut acc = 1.0;
    while n > 0 {
        if n & 1 == 1 {
            acc *= b;
        }
        b *= b;
        n >>= 1;
    }
    acc
}

/// One bias-corrected Adam update with the default moments.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState, lr: f64) -> Result<(), OptimError> {
    adam_step_with(params, grads, state, lr, &AdamParams::default())
}

pub fn adam_step_with(
    params: &mut [f64],
    grads: &[f64],
    state: &mut AdamState,
    lr: f64,
    hyper: &AdamParams,
) -> Result<(), OptimError> {
    let n = params.len();
    if grads.len() != n || state.m.len() != n || state.v.len() != n {
        return Err(OptimError::LengthMismatch {
            params: n,
            grads: grads.len(),
            moments: state.m.len().min(state.v.len()),
        });
    }
    state.step += 1;
    let c1 = 1.0 - pow_int(hyper.beta1, state.step);
    let c2 = 1.0 - pow_int(hyper.beta2, state.step);
    for i in 0..n {
        let g = grads[i];
        state.m[i] = hyper.beta1 * state.m[i] + (1.0 - hyper.beta1) * g;
        state.v[i] = hyper.beta2 * state.v[i] + (1.0 - hyper.beta2) * g * g;
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + hyper.epsilon);
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageMode {
    PerFrame,
    Sequence,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Block {
    Shape,
    Pose,
    /// Root orientation and translation.
    Root,
    Camera,
    Scale,
}

pub fn free_set(blocks: &[Block]) -> FreeSet {
    let mut f = FreeSet::NONE;
    for b in blocks {
        match b {
            Block::Shape => f.shape = true,
            Block::Pose => f.pose = true,
            Block::Root => f.root = true,
            Block::Camera => f.camera = true,
            Block::Scale => f.scale = true,
        }
    }
    f
}

/// A run of `steps` Adam steps with limb joints weighted by `limb_weight`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnealPhase {
    pub limb_weight: f64,
    pub steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageConfig {
    pub name: String,
    pub mode: StageMode,
    pub lambda_contact: f64,
    pub lambda_temporal: f64,
    pub free: Vec<Block>,
    pub learning_rate: f64,
    /// Inner steps between nearest-vertex refreshes; correspondences are
    /// always refreshed at the start of an outer iteration.
    #[serde(default = "one")]
    pub contact_refresh_interval: usize,
    /// Used by `per_frame` stages.
    #[serde(default)]
    pub annealing: Vec<AnnealPhase>,
    /// Used by `sequence` stages.
    #[serde(default)]
    pub outer_iterations: usize,
    #[serde(default)]
    pub inner_steps: usize,
}

fn one() -> usize {
    1
}

impl StageConfig {
    pub fn per_frame_default() -> Self {
        Self {
            name: "per_frame".into(),
            mode: StageMode::PerFrame,
            lambda_contact: 0.0,
            lambda_temporal: 0.0,
            free: vec![Block::Shape, Block::Pose, Block::Root],
            learning_rate: 0.01,
            contact_refresh_interval: 1,
            annealing: vec![
                AnnealPhase { limb_weight: 0.0, steps: 100 },
                AnnealPhase { limb_weight: 0.5, steps: 100 },
                AnnealPhase { limb_weight: 1.0, steps: 100 },
            ],
            outer_iterations: 0,
            inner_steps: 0,
        }
    }

    pub fn contact_default() -> Self {
        Self {
            name: "contact".into(),
            mode: StageMode::Sequence,
            lambda_contact: 0.1,
            lambda_temporal: 0.0,
            free: vec![Block::Scale, Block::Pose, Block::Root],
            learning_rate: 0.005,
            contact_refresh_interval: 1,
            annealing: Vec::new(),
            outer_iterations: 8,
            inner_steps: 25,
        }
    }

    pub fn temporal_default() -> Self {
        Self {
            name: "temporal".into(),
            lambda_temporal: 0.1,
            free: vec![Block::Scale, Block::Pose, Block::Root, Block::Camera],
            ..Self::contact_default()
        }
    }

    pub fn free_set(&self) -> FreeSet {
        free_set(&self.free)
    }

    pub fn iterations(&self) -> usize {
        match self.mode {
            StageMode::PerFrame => self.annealing.iter().map(|p| p.steps).sum(),
            StageMode::Sequence => self.outer_iterations * self.inner_steps,
        }
    }

    pub fn validate(&self) -> Result<(), OptimError> {
        let bad = |m: &str| Err(OptimError::InvalidSchedule(format!("stage '{}': {m}", self.name)));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        for l in [self.lambda_contact, self.lambda_temporal] {
            if !(l >= 0.0 && l.is_finite()) {
                return bad("lambdas must be finite and non-negative");
            }
        }
        if self.contact_refresh_interval == 0 {
            return bad("contact_refresh_interval must be at least 1");
        }
        if self.mode == StageMode::PerFrame {
            if self.lambda_temporal > 0.0 {
                return bad("per_frame stages cannot use the temporal term");
            }
            if self.free.contains(&Block::Scale) || self.free.contains(&Block::Camera) {
                return bad("per_frame stages cannot free the shared scale or cameras");
            }
            if self.annealing.iter().any(|p| !(p.limb_weight >= 0.0 && p.limb_weight.is_finite())) {
                return bad("limb_weight must be finite and non-negative");
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StageSchedule {
    pub stages: Vec<StageConfig>,
    /// Root yaw initializations tried per frame in the first per-frame stage;
    /// the lowest final energy wins.
    pub yaw_hypotheses: usize,
    pub consolidate_shape: bool,
}

impl Default for StageSchedule {
    fn default() -> Self {
        Self {
            stages: vec![
                StageConfig::per_frame_default(),
                StageConfig::contact_default(),
                StageConfig::temporal_default(),
            ],
            yaw_hypotheses: 4,
            consolidate_shape: true,
        }
    }
}

impl StageSchedule {
    pub fn stage1_only() -> Self {
        let mut s = Self::default();
        s.stages.truncate(1);
        s
    }

    pub fn validate(&self) -> Result<(), OptimError> {
        if self.yaw_hypotheses == 0 {
            return Err(OptimError::InvalidSchedule("yaw_hypotheses must be at least 1".into()));
        }
        self.stages.iter().try_for_each(StageConfig::validate)
    }
}

/// Everything fixed during fitting.
#[derive(Debug, Clone)]
pub struct Problem {
    pub skeleton: SkeletonDef,
    pub intrinsics: CameraIntrinsics,
    pub observations: Vec<Observation2D>,
    pub scene: Option<SpatialIndex>,
    pub model: EnergyModel,
    pub lambda_beta: f64,
    pub lambda_theta: f64,
}

impl Problem {
    pub fn new(skeleton: SkeletonDef, intrinsics: CameraIntrinsics, observations: Vec<Observation2D>) -> Self {
        Self {
            skeleton,
            intrinsics,
            observations,
            scene: None,
            model: EnergyModel::default(),
            lambda_beta: 0.01,
            lambda_theta: 0.1,
        }
    }

    pub fn weights(&self, stage: &StageConfig, limb_weight: f64) -> Weights {
        Weights {
            lambda_beta: self.lambda_beta,
            lambda_theta: self.lambda_theta,
            lambda_contact: stage.lambda_contact,
            lambda_temporal: stage.lambda_temporal,
            joint_weights: self
                .skeleton
                .joints
                .iter()
                .map(|j| if j.limb { limb_weight } else { 1.0 })
                .collect(),
        }
    }

    pub fn objective<'a>(&'a self, observations: &'a [Observation2D], weights: &'a Weights) -> Objective<'a> {
        Objective {
            skeleton: &self.skeleton,
            intrinsics: &self.intrinsics,
            observations,
            model: &self.model,
            weights,
            terms: TermSet::ALL,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageOutcome {
    pub state: SequenceState,
    /// Stage energy after each step, starting with the initial state.
    pub trace: Vec<EnergyBreakdown>,
    /// Scale at each trace entry.
    pub scales: Vec<f64>,
    /// Per-frame traces for `per_frame` stages.
    pub frame_traces: Vec<Vec<EnergyBreakdown>>,
}

fn add(a: &mut EnergyBreakdown, b: &EnergyBreakdown) {
    a.joint += b.joint;
    a.shape += b.shape;
    a.pose += b.pose;
    a.contact += b.contact;
    a.temporal += b.temporal;
    a.total += b.total;
}

fn sum_traces(frame_traces: &[Vec<EnergyBreakdown>]) -> Vec<EnergyBreakdown> {
    let len = frame_traces.first().map_or(0, Vec::len);
    (0..len)
        .map(|i| {
            let mut e = EnergyBreakdown::default();
            for t in frame_traces {
                add(&mut e, &t[i]);
            }
            e
        })
        .collect()
}

fn with_frame(err: EnergyError, t: usize) -> EnergyError {
    match err {
        EnergyError::NonFiniteEnergy { term, frame: Some(_) } => EnergyError::NonFiniteEnergy { term, frame: Some(t) },
        e => e,
    }
}

fn check_scene(problem: &Problem, stage: &StageConfig) -> Result<(), OptimError> {
    if stage.lambda_contact > 0.0 && problem.scene.is_none() {
        return Err(OptimError::InvalidSchedule(format!(
            "stage '{}' uses the contact term but no scene was given",
            stage.name
        )));
    }
    Ok(())
}

fn refresh(problem: &Problem, stage: &StageConfig, state: &SequenceState) -> Result<Option<Correspondences>, EnergyError> {
    match (&problem.scene, stage.lambda_contact > 0.0) {
        (Some(index), true) => Ok(Some(Correspondences::nearest(
            &problem.skeleton,
            state,
            problem.model.scale_mode,
            index,
        )?)),
        _ => Ok(None),
    }
}

fn fit_frame(
    problem: &Problem,
    stage: &StageConfig,
    t: usize,
    body: &BodyState,
    camera: &Pose3,
    scale: f64,
) -> Result<(BodyState, Vec<EnergyBreakdown>), EnergyError> {
    let obs = std::slice::from_ref(&problem.observations[t]);
    let mut st = SequenceState {
        bodies: vec![body.clone()],
        cameras: vec![*camera],
        scale,
    };
    let layout = ParamLayout::new(&problem.skeleton, stage.free_set(), &st);
    let mut x = layout.pack(&st)?;
    let mut adam = AdamState::new(x.len());
    let full_weights = problem.weights(stage, 1.0);
    let full = problem.objective(obs, &full_weights);
    let mut corr = refresh(problem, stage, &st)?;
    let mut trace = Vec::with_capacity(stage.iterations() + 1);
    for phase in &stage.annealing {
        let weights = problem.weights(stage, phase.limb_weight);
        let obj = problem.objective(obs, &weights);
        let annealed = weights.joint_weights != full_weights.joint_weights;
        for _ in 0..phase.steps {
            let (e, g) = obj.evaluate_with_gradient(&st, corr.as_ref())?;
            trace.push(if annealed { full.evaluate(&st, corr.as_ref())? } else { e });
            let gx = layout.flatten_gradient(&g, &x)?;
            adam_step(&mut x, &gx, &mut adam, stage.learning_rate).expect("aligned by layout");
            layout.unpack_into(&x, &mut st)?;
        }
        corr = refresh(problem, stage, &st)?;
    }
    trace.push(full.evaluate(&st, corr.as_ref())?);
    Ok((st.bodies.pop().expect("one frame"), trace))
}

/// Runs one stage from `state`. Blocks outside the stage's free set are left
/// bit-identical.
pub fn run_stage(problem: &Problem, state: &SequenceState, stage: &StageConfig) -> Result<StageOutcome, OptimError> {
    stage.validate()?;
    check_scene(problem, stage)?;
    state.check(&problem.skeleton)?;
    let frames = state.frames();
    if problem.observations.len() != frames {
        return Err(EnergyError::DimensionMismatch {
            what: "observations",
            expected: frames,
            found: problem.observations.len(),
        }
        .into());
    }
    match stage.mode {
        StageMode::PerFrame => {
            let results: Vec<_> = (0..frames)
                .into_par_iter()
                .map(|t| fit_frame(problem, stage, t, &state.bodies[t], &state.cameras[t], state.scale))
                .collect();
            let mut out = state.clone();
            let mut frame_traces = Vec::with_capacity(frames);
            for (t, r) in results.into_iter().enumerate() {
                let (body, trace) = r.map_err(|e| with_frame(e, t))?;
                out.bodies[t] = body;
                frame_traces.push(trace);
            }
            let trace = sum_traces(&frame_traces);
            Ok(StageOutcome {
                scales: vec![state.scale; trace.len()],
                state: out,
                trace,
                frame_traces,
            })
        }
        StageMode::Sequence => {
            let weights = problem.weights(stage, 1.0);
            let obj = problem.objective(&problem.observations, &weights);
            let mut st = state.clone();
            let layout = ParamLayout::new(&problem.skeleton, stage.free_set(), &st);
            let mut x = layout.pack(&st)?;
            let mut adam = AdamState::new(x.len());
            let mut trace = Vec::with_capacity(stage.iterations() + 1);
            let mut scales = Vec::with_capacity(stage.iterations() + 1);
            for _ in 0..stage.outer_iterations {
                let mut corr = refresh(problem, stage, &st)?;
                for k in 0..stage.inner_steps {
                    if k > 0 && k % stage.contact_refresh_interval == 0 {
                        corr = refresh(problem, stage, &st)?;
                    }
                    let (e, g) = obj.evaluate_with_gradient(&st, corr.as_ref())?;
                    trace.push(e);
                    scales.push(st.scale);
                    let gx = layout.flatten_gradient(&g, &x)?;
                    adam_step(&mut x, &gx, &mut adam, stage.learning_rate)?;
                    layout.unpack_into(&x, &mut st)?;
                }
            }
            let corr = refresh(problem, stage, &st)?;
            trace.push(obj.evaluate(&st, corr.as_ref())?);
            scales.push(st.scale);
            Ok(StageOutcome {
                state: st,
                trace,
                scales,
                frame_traces: Vec::new(),
            })
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    /// 1-based stage index.
    pub stage: usize,
    pub name: String,
    pub iteration: usize,
    pub scale: f64,
    pub energy: EnergyBreakdownRecord,
}

/// Serializable mirror of [`EnergyBreakdown`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyBreakdownRecord {
    pub joint: f64,
    pub shape: f64,
    pub pose: f64,
    pub contact: f64,
    pub temporal: f64,
    pub total: f64,
}

impl From<EnergyBreakdown> for EnergyBreakdownRecord {
    fn from(e: EnergyBreakdown) -> Self {
        Self {
            joint: e.joint,
            shape: e.shape,
            pose: e.pose,
            contact: e.contact,
            temporal: e.temporal,
            total: e.total,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub name: String,
    pub iterations: usize,
    pub initial_energy: f64,
    pub final_energy: f64,
    /// `final_energy <= initial_energy`.
    pub monotone: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SequenceEstimate {
    pub state: SequenceState,
    pub stages: Vec<StageReport>,
    pub trace: Vec<TraceRow>,
}

impl SequenceEstimate {
    /// True when some stage ended above its starting energy.
    pub fn flagged(&self) -> bool {
        self.stages.iter().any(|s| !s.monotone)
    }
}

/// Rotation taking the body frame (y up, z forward) to a camera frame
/// (y down) with the body facing the camera, after a yaw `psi` about the body
/// up axis.
pub fn upright_orientation(psi: f64) -> Vec3 {
    let r = exp_so3(&Vec3::new(std::f64::consts::PI, 0.0, 0.0)) * exp_so3(&Vec3::new(0.0, psi, 0.0));
    let rot = nalgebra::Rotation3::from_matrix_unchecked(r);
    nalgebra::UnitQuaternion::from_rotation_matrix(&rot).scaled_axis()
}

/// Rest pose with the given root orientation, placed so that it roughly
/// covers the detected keypoints. Depth comes from the ratio of rest bone
/// lengths to their pixel spans.
pub fn initial_body(skel: &SkeletonDef, intrinsics: &CameraIntrinsics, obs: &Observation2D, orientation: Vec3) -> BodyState {
    let mut body = BodyState::rest(skel);
    body.root.orientation = orientation;
    let rest = crate::body::forward_kinematics(skel, &body).expect("rest state matches skeleton");
    let visible = |i: usize| obs.keypoints.get(i).is_some_and(|k| k.w > 0.0);
    let pixel = |i: usize| Vec2::new(obs.keypoints[i].u, obs.keypoints[i].v);

    // Long bones foreshorten less often than they are seen at full length, so
    // a low quantile of the per-bone depth estimates is used.
    let focal = 0.5 * (intrinsics.focal[0] + intrinsics.focal[1]);
    let mut depths: Vec<f64> = skel
        .joints
        .iter()
        .enumerate()
        .filter_map(|(i, j)| {
            let p = j.parent?;
            let len3 = Vec3::from(j.offset).norm();
            let len2 = if visible(i) && visible(p) { (pixel(i) - pixel(p)).norm() } else { 0.0 };
            (len3 >= 0.2 && len2 > 1e-9).then(|| focal * len3 / len2)
        })
        .collect();
    depths.sort_by(f64::total_cmp);
    let depth = if depths.is_empty() { 5.0 } else { depths[depths.len() / 4].clamp(0.5, 50.0) };

    // Root placement averaged over visible joints.
    let mut sum = Vec3::zeros();
    let mut count = 0usize;
    for i in 0..skel.joint_count() {
        if visible(i) {
            let rel = rest[i] - rest[0];
            let z = (depth + rel.z).max(0.1);
            sum += intrinsics.unproject(&pixel(i), z) - rel;
            count += 1;
        }
    }
    body.root.translation = if count > 0 {
        sum / count as f64
    } else {
        Vec3::new(0.0, 0.0, depth)
    };
    body
}

fn yaw(h: usize, count: usize) -> f64 {
    2.0 * std::f64::consts::PI * h as f64 / count as f64
}

/// Initial sequence state for yaw hypothesis `h` of `count`.
pub fn initial_state(problem: &Problem, cameras: &[Pose3], h: usize, count: usize) -> SequenceState {
    let orientation = upright_orientation(yaw(h, count));
    SequenceState {
        bodies: problem
            .observations
            .iter()
            .map(|o| initial_body(&problem.skeleton, &problem.intrinsics, o, orientation))
            .collect(),
        cameras: cameras.to_vec(),
        scale: 1.0,
    }
}

fn report(stage: &StageConfig, trace: &[EnergyBreakdown]) -> StageReport {
    let initial = trace.first().map_or(0.0, |e| e.total);
    let last = trace.last().map_or(0.0, |e| e.total);
    StageReport {
        name: stage.name.clone(),
        iterations: stage.iterations(),
        initial_energy: initial,
        final_energy: last,
        monotone: last <= initial,
    }
}

/// Runs the whole schedule from the standard initialization.
pub fn run_pipeline(problem: &Problem, cameras: &[Pose3], schedule: &StageSchedule) -> Result<SequenceEstimate, OptimError> {
    schedule.validate()?;
    let frames = problem.observations.len();
    if frames < 3 {
        return Err(EnergyError::SequenceTooShort { frames }.into());
    }
    if cameras.len() != frames {
        return Err(EnergyError::DimensionMismatch {
            what: "cameras",
            expected: frames,
            found: cameras.len(),
        }
        .into());
    }
    let mut state = initial_state(problem, cameras, 0, schedule.yaw_hypotheses);
    let mut stages = Vec::new();
    let mut rows = Vec::new();
    for (si, stage) in schedule.stages.iter().enumerate() {
        let outcome = if si == 0 && stage.mode == StageMode::PerFrame && schedule.yaw_hypotheses > 1 {
            best_of_hypotheses(problem, cameras, stage, schedule.yaw_hypotheses)?
        } else {
            run_stage(problem, &state, stage)?
        };
        stages.push(report(stage, &outcome.trace));
        rows.extend(outcome.trace.iter().enumerate().map(|(i, e)| TraceRow {
            stage: si + 1,
            name: stage.name.clone(),
            iteration: i,
            scale: outcome.scales[i],
            energy: (*e).into(),
        }));
        state = outcome.state;
        if si == 0 && schedule.consolidate_shape && schedule.stages.len() > 1 {
            let shapes: Vec<_> = state.bodies.iter().map(|b| b.shape.clone()).collect();
            let median = consolidate_shape(&shapes).map_err(EnergyError::from)?;
            for b in &mut state.bodies {
                b.shape = median.clone();
            }
        }
    }
    Ok(SequenceEstimate {
        state,
        stages,
        trace: rows,
    })
}

fn best_of_hypotheses(
    problem: &Problem,
    cameras: &[Pose3],
    stage: &StageConfig,
    count: usize,
) -> Result<StageOutcome, OptimError> {
    let mut best: Option<StageOutcome> = None;
    for h in 0..count {
        let init = initial_state(problem, cameras, h, count);
        let outcome = run_stage(problem, &init, stage)?;
        best = Some(match best {
            None => outcome,
            Some(mut b) => {
                for t in 0..init.frames() {
                    let cur = b.frame_traces[t].last().map_or(f64::INFINITY, |e| e.total);
                    let new = outcome.frame_traces[t].last().map_or(f64::INFINITY, |e| e.total);
                    if new < cur {
                        b.state.bodies[t] = outcome.state.bodies[t].clone();
                        b.frame_traces[t] = outcome.frame_traces[t].clone();
                    }
                }
                b
            }
        });
    }
    let mut b = best.expect("at least one hypothesis");
    b.trace = sum_traces(&b.frame_traces);
    Ok(b)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut x = vec![1.0, -2.0];
        let mut s = AdamState::new(2);
        adam_step(&mut x, &[0.0, 0.0], &mut s, 0.1).unwrap();
        assert_eq!(x, vec![1.0, -2.0]);
        assert_eq!(s.step, 1);
    }

    #[test]
    fn first_step_is_signed_lr() {
        let mut x = vec![0.0, 0.0, 0.0];
        let mut s = AdamState::new(3);
        adam_step(&mut x, &[3.0, -0.5, 1e3], &mut s, 0.01).unwrap();
        for (xi, sign) in x.iter().zip([-1.0, 1.0, -1.0]) {
            assert!((xi - sign * 0.01).abs() < 1e-9);
        }
    }

    #[test]
    fn scalar_quadratic_converges() {
        let mut x = vec![0.0];
        let mut s = AdamState::new(1);
        for _ in 0..500 {
            let g = 2.0 * (x[0] - 3.0);
            adam_step(&mut x, &[g], &mut s, 0.1).unwrap();
        }
        assert!((x[0] - 3.0).abs() < 1e-3, "{}", x[0]);
    }

    #[test]
    fn length_mismatch() {
        let mut x = vec![0.0; 2];
        let mut s = AdamState::new(3);
        assert!(matches!(
            adam_step(&mut x, &[0.0; 2], &mut s, 0.1),
            Err(OptimError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn default_schedule_shape() {
        let s = StageSchedule::default();
        assert_eq!(s.stages.len(), 3);
        let f: Vec<_> = s.stages.iter().map(StageConfig::free_set).collect();
        assert!(f[0].shape && f[0].pose && f[0].root && !f[0].scale && !f[0].camera);
        assert!(!f[1].shape && f[1].pose && f[1].root && f[1].scale && !f[1].camera);
        assert!(!f[2].shape && f[2].scale && f[2].camera);
        assert_eq!((s.stages[0].lambda_contact, s.stages[0].lambda_temporal), (0.0, 0.0));
        assert_eq!((s.stages[1].lambda_contact, s.stages[1].lambda_temporal), (0.1, 0.0));
        assert_eq!((s.stages[2].lambda_contact, s.stages[2].lambda_temporal), (0.1, 0.1));
        assert_eq!(s.stages[0].iterations(), 300);
        assert_eq!(s.stages[1].iterations(), 200);
        s.validate().unwrap();
    }

    #[test]
    fn upright_maps_up_to_image_up() {
        let r = exp_so3(&upright_orientation(0.0));
        let up = r * Vec3::y();
        assert!((up - Vec3::new(0.0, -1.0, 0.0)).norm() < 1e-12);
        let fwd = r * Vec3::z();
        assert!((fwd - Vec3::new(0.0, 0.0, -1.0)).norm() < 1e-12);
    }
}
