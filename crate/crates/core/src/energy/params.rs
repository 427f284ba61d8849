use crate::body::SkeletonDef;
use crate::error::EnergyError;
use crate::geometry::{contract_jacobian, exp_so3_with_jacobian, Pose3, Vec3};

use super::{FreeSet, SequenceState, StateGradient};

/// Flat parameter vector layout over the free blocks of a sequence.
///
/// Per frame, in order: shape, pose, root orientation and translation, then a
/// camera increment `(δr, δt)` applied as `R_ref Exp(δr)`, `t_ref + δt`. The
/// shared scale comes last as `ln S`. Frozen blocks have no entries.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamLayout {
    free: FreeSet,
    frames: usize,
    shape_dim: usize,
    pose_dim: usize,
    camera_refs: Vec<Pose3>,
}

impl ParamLayout {
    /// Camera references are taken from `state`, so `pack` of the same state
    /// gives zero camera increments.
    pub fn new(skel: &SkeletonDef, free: FreeSet, state: &SequenceState) -> Self {
        Self {
            free,
            frames: state.frames(),
            shape_dim: skel.shape_dim(),
            pose_dim: skel.pose_dim(),
            camera_refs: if free.camera { state.cameras.clone() } else { Vec::new() },
        }
    }

    pub fn free(&self) -> FreeSet {
        self.free
    }

    fn frame_block(&self) -> usize {
        let f = self.free;
        (f.shape as usize) * self.shape_dim + (f.pose as usize) * self.pose_dim + (f.root as usize) * 6 + (f.camera as usize) * 6
    }

    pub fn len(&self) -> usize {
        self.frames * self.frame_block() + self.free.scale as usize
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn check(&self, state: &SequenceState) -> Result<(), EnergyError> {
        if state.frames() != self.frames {
            return Err(EnergyError::DimensionMismatch {
                what: "frames",
                expected: self.frames,
                found: state.frames(),
            });
        }
        Ok(())
    }

    pub fn pack(&self, state: &SequenceState) -> Result<Vec<f64>, EnergyError> {
        self.check(state)?;
        if self.free.scale && !(state.scale > 0.0) {
            return Err(EnergyError::NonPositiveScale(state.scale));
        }
        let mut x = Vec::with_capacity(self.len());
        for (t, b) in state.bodies.iter().enumerate() {
            if self.free.shape {
                x.extend_from_slice(&b.shape.betas);
            }
            if self.free.pose {
                x.extend_from_slice(&b.pose.axis_angles);
            }
            if self.free.root {
                x.extend_from_slice(b.root.orientation.as_slice());
                x.extend_from_slice(b.root.translation.as_slice());
            }
            if self.free.camera {
                let r = &self.camera_refs[t];
                let c = &state.cameras[t];
                let dr = (r.rotation.inverse() * c.rotation).scaled_axis();
                let dt = c.translation - r.translation;
                x.extend_from_slice(dr.as_slice());
                x.extend_from_slice(dt.as_slice());
            }
        }
        if self.free.scale {
            x.push(state.scale.ln());
        }
        Ok(x)
    }

    /// Overwrites the free blocks of `state` from `x`; frozen blocks are left
    /// untouched.
    pub fn unpack_into(&self, x: &[f64], state: &mut SequenceState) -> Result<(), EnergyError> {
        self.check(state)?;
        if x.len() != self.len() {
            return Err(EnergyError::DimensionMismatch {
                what: "parameter vector",
                expected: self.len(),
                found: x.len(),
            });
        }
        let mut o = 0;
        let mut take = |n: usize| {
            let s = &x[o..o + n];
            o += n;
            s
        };
        for t in 0..self.frames {
            let b = &mut state.bodies[t];
            if self.free.shape {
                b.shape.betas.copy_from_slice(take(self.shape_dim));
            }
            if self.free.pose {
                b.pose.axis_angles.copy_from_slice(take(self.pose_dim));
            }
            if self.free.root {
                b.root.orientation = Vec3::from_column_slice(take(3));
                b.root.translation = Vec3::from_column_slice(take(3));
            }
            if self.free.camera {
                let dr = Vec3::from_column_slice(take(3));
                let dt = Vec3::from_column_slice(take(3));
                state.cameras[t] = self.camera_refs[t].perturbed(&dr, &dt);
            }
        }
        if self.free.scale {
            state.scale = take(1)[0].exp();
        }
        Ok(())
    }

    pub fn unpack(&self, x: &[f64], base: &SequenceState) -> Result<SequenceState, EnergyError> {
        let mut s = base.clone();
        self.unpack_into(x, &mut s)?;
        Ok(s)
    }

    /// Chain rule from a state gradient to the flat vector at `x`.
    pub fn flatten_gradient(&self, grad: &StateGradient, x: &[f64]) -> Result<Vec<f64>, EnergyError> {
        if grad.bodies.len() != self.frames || grad.cameras.len() != self.frames {
            return Err(EnergyError::DimensionMismatch {
                what: "gradient frames",
                expected: self.frames,
                found: grad.bodies.len(),
            });
        }
        if x.len() != self.len() {
            return Err(EnergyError::DimensionMismatch {
                what: "parameter vector",
                expected: self.len(),
                found: x.len(),
            });
        }
        let mut g = Vec::with_capacity(self.len());
        let block = self.frame_block();
        for t in 0..self.frames {
            let b = &grad.bodies[t];
            if self.free.shape {
                g.extend_from_slice(&b.shape);
            }
            if self.free.pose {
                g.extend_from_slice(&b.pose);
            }
            if self.free.root {
                g.extend_from_slice(b.root_orientation.as_slice());
                g.extend_from_slice(b.root_translation.as_slice());
            }
            if self.free.camera {
                let off = t * block + block - 6;
                let dr = Vec3::from_column_slice(&x[off..off + 3]);
                let (_, d) = exp_so3_with_jacobian(&dr);
                let r_ref = self.camera_refs[t].rotation_matrix();
                let dd = [r_ref * d[0], r_ref * d[1], r_ref * d[2]];
                let c = &grad.cameras[t];
                g.extend_from_slice(contract_jacobian(&c.rotation, &dd).as_slice());
                g.extend_from_slice(c.translation.as_slice());
            }
        }
        if self.free.scale {
            let ln_s = x[x.len() - 1];
            g.push(grad.scale * ln_s.exp());
        }
        Ok(g)
    }
}
