//! Shared fixtures for the integration tests.
#![allow(dead_code)]

use groundfit_core::body::{BodyState, SkeletonDef};
use groundfit_core::energy::{
    Correspondences, EnergyModel, FreeSet, Keypoint, Objective, Observation2D, ParamLayout, ScaleMode, SequenceState,
    TermSet, Weights,
};
use groundfit_core::geometry::{CameraIntrinsics, Pose3, Vec3};
use groundfit_core::metrics::{EvalContext, MetricsReport};
use groundfit_core::optimizer::{run_pipeline, Problem, SequenceEstimate, StageSchedule};
use groundfit_core::scene::SpatialIndex;
use groundfit_core::synth::{generate, ScenarioBundle, ScenarioConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const ALL_FREE: FreeSet = FreeSet {
    shape: true,
    pose: true,
    root: true,
    camera: true,
    scale: true,
};

pub struct Case {
    pub skel: SkeletonDef,
    pub intrinsics: CameraIntrinsics,
    pub obs: Vec<Observation2D>,
    pub state: SequenceState,
    pub corr: Correspondences,
    pub weights: Weights,
}

pub fn random_case(seed: u64, frames: usize) -> Case {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let skel = SkeletonDef::standard();
    let intrinsics = CameraIntrinsics::new(700.0, 690.0, 640.0, 360.0).unwrap();
    let mut bodies = Vec::new();
    let mut cameras = Vec::new();
    let mut obs = Vec::new();
    for _ in 0..frames {
        let mut b = BodyState::rest(&skel);
        for v in &mut b.shape.betas {
            *v = rng.random_range(-0.2..0.2);
        }
        for v in &mut b.pose.axis_angles {
            *v = rng.random_range(-0.5..0.5);
        }
        b.root.orientation = Vec3::new(std::f64::consts::PI + rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3), 0.1);
        b.root.translation = Vec3::new(rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3), rng.random_range(3.0..5.0));
        bodies.push(b);
        cameras.push(Pose3::from_axis_angle(
            Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)),
            Vec3::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(0.0..2.0)),
        ));
        obs.push(Observation2D {
            keypoints: (0..17)
                .map(|_| Keypoint {
                    u: rng.random_range(300.0..900.0),
                    v: rng.random_range(100.0..600.0),
                    w: if rng.random::<f64>() < 0.2 { 0.0 } else { rng.random_range(0.6..1.0) },
                })
                .collect(),
        });
    }
    let state = SequenceState {
        bodies,
        cameras,
        scale: rng.random_range(0.5..2.0),
    };
    let corr = Correspondences {
        targets: (0..frames)
            .map(|_| {
                (0..skel.contact_candidates.len())
                    .map(|_| Vec3::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0), rng.random_range(-1.0..1.0)))
                    .collect()
            })
            .collect(),
    };
    let mut weights = Weights::new(17);
    weights.lambda_contact = 0.1;
    weights.lambda_temporal = 0.1;
    for w in &mut weights.joint_weights {
        *w = rng.random_range(0.5..1.0);
    }
    Case {
        skel,
        intrinsics,
        obs,
        state,
        corr,
        weights,
    }
}

pub fn fd_check(case: &Case, model: &EnergyModel, terms: TermSet) -> Result<(), String> {
    let obj = Objective {
        skeleton: &case.skel,
        intrinsics: &case.intrinsics,
        observations: &case.obs,
        model,
        weights: &case.weights,
        terms,
    };
    let layout = ParamLayout::new(&case.skel, ALL_FREE, &case.state);
    let x = layout.pack(&case.state).unwrap();
    let (_, g) = obj.evaluate_with_gradient(&case.state, Some(&case.corr)).unwrap();
    let ga = layout.flatten_gradient(&g, &x).unwrap();
    let f = |x: &[f64]| {
        let s = layout.unpack(x, &case.state).unwrap();
        obj.evaluate(&s, Some(&case.corr)).unwrap().total
    };
    let h = 1e-6;
    let mut xp = x.clone();
    for i in 0..x.len() {
        xp[i] = x[i] + h;
        let fp = f(&xp);
        xp[i] = x[i] - h;
        let fm = f(&xp);
        xp[i] = x[i];
        let fd = (fp - fm) / (2.0 * h);
        let tol = 1e-4 * ga[i].abs().max(fd.abs()).max(1e-3);
        if (ga[i] - fd).abs() > tol {
            return Err(format!("component {i}: analytic {} vs fd {fd}", ga[i]));
        }
    }
    Ok(())
}

pub fn only(f: impl Fn(&mut TermSet)) -> TermSet {
    let mut t = TermSet::NONE;
    f(&mut t);
    t
}

/// Every single term on its own, then the weighted total.
pub fn term_sets() -> [(&'static str, TermSet); 6] {
    [
        ("joint", only(|t| t.joint = true)),
        ("shape", only(|t| t.shape = true)),
        ("pose", only(|t| t.pose = true)),
        ("contact", only(|t| t.contact = true)),
        ("temporal", only(|t| t.temporal = true)),
        ("total", TermSet::ALL),
    ]
}

pub fn model(mode: ScaleMode) -> EnergyModel {
    EnergyModel {
        scale_mode: mode,
        ..EnergyModel::default()
    }
}

/// A generated scenario with its fitting problem.
pub struct Scenario {
    pub config: ScenarioConfig,
    pub bundle: ScenarioBundle,
    pub index: SpatialIndex,
    pub problem: Problem,
}

impl Scenario {
    pub fn standard(scene_scale: f64, seed: u64) -> Self {
        Self::new(ScenarioConfig {
            scene_scale,
            seed,
            ..ScenarioConfig::default()
        })
    }

    pub fn new(config: ScenarioConfig) -> Self {
        let bundle = generate(&config).expect("valid scenario");
        let index = SpatialIndex::build(&bundle.scene).expect("non-empty scene");
        let mut problem = Problem::new(SkeletonDef::standard(), bundle.intrinsics, bundle.observations.clone());
        problem.scene = Some(index.clone());
        Self {
            config,
            bundle,
            index,
            problem,
        }
    }

    pub fn fit(&self, schedule: &StageSchedule) -> SequenceEstimate {
        run_pipeline(&self.problem, &self.bundle.cameras, schedule).expect("fit succeeds")
    }

    pub fn evaluate(&self, label: &str, state: &SequenceState) -> MetricsReport {
        let ctx = EvalContext {
            skeleton: &self.problem.skeleton,
            intrinsics: &self.bundle.intrinsics,
            image_size: (self.config.image_width as f64, self.config.image_height as f64),
            observations: &self.bundle.observations,
            truth: &self.bundle.truth,
            scene: &self.index,
            scale_mode: self.problem.model.scale_mode,
        };
        ctx.evaluate(label, state).expect("metrics defined")
    }
}

/// Forward kinematics as an explicit chain of rigid transforms, one per
/// joint, with the scaled bone offset folded into each child's transform.
pub fn chain_oracle(skel: &SkeletonDef, s: &BodyState) -> (Vec<Vec3>, Vec<Vec3>) {
    use nalgebra::UnitQuaternion;
    let root = Pose3::from_axis_angle(s.root.orientation, s.root.translation);
    let mut frames: Vec<Pose3> = Vec::new();
    for (i, j) in skel.joints.iter().enumerate() {
        let local = Pose3::new(UnitQuaternion::from_scaled_axis(s.pose.joint(i)), Vec3::zeros());
        let frame = match j.parent {
            None => root.compose(&local),
            Some(p) => {
                let bone = Pose3::from_translation(Vec3::from(j.offset) * s.shape.betas[j.shape_group].exp());
                frames[p].compose(&bone).compose(&local)
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

pub fn random_body(skel: &SkeletonDef, rng: &mut impl Rng) -> BodyState {
    let mut s = BodyState::rest(skel);
    for b in &mut s.shape.betas {
        *b = rng.random_range(-0.3..0.3);
    }
    for a in &mut s.pose.axis_angles {
        *a = rng.random_range(-1.0..1.0);
    }
    s.root.orientation = Vec3::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
    s.root.translation = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(2.0..6.0));
    s
}

/// Weighted total assembled from the value-only term definitions.
pub fn term_sum_oracle(case: &Case, model: &EnergyModel, index: &SpatialIndex) -> f64 {
    use groundfit_core::energy::terms;
    let skel = &case.skel;
    let w = &case.weights;
    let st = &case.state;
    let mut total = 0.0;
    for (b, o) in st.bodies.iter().zip(&case.obs) {
        total += terms::e_joint(skel, b, &case.intrinsics, o, &model.kernels.joint, &w.joint_weights).unwrap();
        total += w.lambda_beta * terms::e_shape_prior(&b.shape.betas);
        let rest: Vec<f64> = (0..skel.pose_dim()).map(|k| model.prior_mean(k)).collect();
        let pw: Vec<[f64; 3]> = skel.joints.iter().map(|j| j.prior_weight).collect();
        total += w.lambda_theta * terms::e_pose_prior(&b.pose.axis_angles, &rest, &pw);
    }
    total += w.lambda_contact
        * terms::e_contact(skel, &st.bodies, &st.cameras, index, st.scale, model.scale_mode, &model.kernels.contact).unwrap();
    let world = st.world_joints(skel, model.scale_mode).unwrap();
    let conf: Vec<Vec<f64>> = case.obs.iter().map(|o| o.confidences()).collect();
    total += w.lambda_temporal * terms::e_temporal(&world, &conf, &model.kernels.temporal).unwrap();
    total
}

/// Random scene vertices around the bodies of `case`, in world coordinates.
pub fn random_scene(seed: u64, count: usize) -> groundfit_core::scene::SceneMesh {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let v = (0..count)
        .map(|_| Vec3::new(rng.random_range(-6.0..6.0), rng.random_range(-6.0..6.0), rng.random_range(-4.0..8.0)))
        .collect();
    groundfit_core::scene::SceneMesh::new(v, vec![]).unwrap()
}
