//! Training objective over a batch of equal-length clips.

use super::model::{frame_step, anchor_embed, FrameInputs, FrameVars, INPUT_DIM, OUTPUT_DIM};
use super::tape::{Tape, Var};
use super::EncoderConfig;
use crate::error::{Error, Result};
use crate::geometry::{NUM_JOINTS, NUM_POSE_PARAMS};
use crate::scalar::Real;
use crate::tensor::Matrix;

/// One batch laid out frame-major: entry `t` of each vector holds the `B`
/// rows of frame `t`.
#[derive(Clone, Debug, PartialEq)]
pub struct SequenceBatch<T> {
    pub inputs: Vec<Matrix<T>>,
    /// Root-relative camera-frame keypoints (coarse head target).
    pub coarse_targets: Vec<Matrix<T>>,
    /// Root-relative body-frame keypoints (decoder target).
    pub refined_targets: Vec<Matrix<T>>,
    /// Canonical pose angles.
    pub angles: Vec<Matrix<T>>,
}

impl<T: Real> SequenceBatch<T> {
    pub fn steps(&self) -> usize {
        self.inputs.len()
    }

    pub fn batch(&self) -> usize {
        self.inputs.first().map_or(0, |m| m.rows())
    }

    pub fn validate(&self) -> Result<()> {
        let (steps, b) = (self.steps(), self.batch());
        if steps == 0 || b == 0 {
            return Err(Error::DegenerateBatch("empty sequence batch".into()));
        }
        let same = |v: &[Matrix<T>], cols: usize| v.len() == steps && v.iter().all(|m| m.shape() == (b, cols));
        if !(same(&self.inputs, INPUT_DIM)
            && same(&self.coarse_targets, OUTPUT_DIM)
            && same(&self.refined_targets, OUTPUT_DIM)
            && same(&self.angles, NUM_POSE_PARAMS))
        {
            return Err(Error::ShapeMismatch("sequence batch tensors disagree in shape".into()));
        }
        Ok(())
    }
}

/// Loss weights and which parts of the method are switched on.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ObjectiveSpec {
    pub alpha: f64,
    pub beta: f64,
    pub tau: f64,
    pub project: bool,
    pub use_ortho: bool,
    pub use_align: bool,
}

impl Default for ObjectiveSpec {
    fn default() -> Self {
        Self { alpha: 0.1, beta: 0.1, tau: 0.07, project: true, use_ortho: true, use_align: true }
    }
}

/// Tape handles of every loss term plus the per-frame outputs.
#[derive(Clone, Debug)]
pub struct LossVars {
    pub l_pose: Var,
    pub l_ortho: Var,
    pub l_align: Var,
    pub l_total: Var,
    pub frames: Vec<FrameVars>,
}

/// Forward a batch through every frame, threading recurrent state and the
/// decoder's context window, and assemble
/// `l_total = l_pose + α·l_ortho + β·l_align`.
///
/// `l_pose` is the mean squared per-joint distance of the coarse and refined
/// keypoints to their targets. Disabled terms are still evaluated for
/// logging but carry zero weight.
pub fn sequence_loss<T: Real>(
    t: &mut Tape<'_, T>,
    cfg: &EncoderConfig,
    batch: &SequenceBatch<T>,
    spec: &ObjectiveSpec,
) -> LossVars {
    let (steps, b) = (batch.steps(), batch.batch());
    let zero_h = t.constant(Matrix::zeros(b, cfg.hidden));
    let zero_ctx = t.constant(Matrix::zeros(b, OUTPUT_DIM));
    let (mut h_enc, mut h_dec) = (zero_h, zero_h);
    let mut frames: Vec<FrameVars> = Vec::with_capacity(steps);
    for s in 0..steps {
        let start = s.saturating_sub(cfg.window);
        let context = if s == 0 {
            zero_ctx
        } else {
            let prior: Vec<Var> = frames[start..s].iter().map(|f| f.refined).collect();
            t.mean_of(&prior)
        };
        let x = t.constant(batch.inputs[s].clone());
        let out = frame_step(t, cfg, FrameInputs { x, h_enc, h_dec, context }, spec.project);
        h_enc = out.h_enc;
        h_dec = out.h_dec;
        frames.push(out);
    }

    let n = T::from_usize_lossy(steps * b * NUM_JOINTS);
    let gather = |t: &mut Tape<'_, T>, f: &dyn Fn(&FrameVars) -> Var| {
        let parts: Vec<Var> = frames.iter().map(f).collect();
        t.stack_rows(&parts)
    };
    let coarse = gather(t, &|f| f.k3d_coarse);
    let refined = gather(t, &|f| f.refined);
    let m_ortho = gather(t, &|f| f.m_ortho);
    let v = gather(t, &|f| f.v);
    let stack = |m: &[Matrix<T>]| {
        let data = m.iter().flat_map(|x| x.data().iter().copied()).collect();
        Matrix::from_vec(steps * b, m[0].cols(), data).expect("validated batch")
    };
    let e_coarse = t.squared_error(coarse, stack(&batch.coarse_targets), n);
    let e_refined = t.squared_error(refined, stack(&batch.refined_targets), n);
    let l_pose = t.weighted_sum(&[(e_coarse, T::one()), (e_refined, T::one())]);

    let l_ortho = t.loss_ortho(m_ortho, v);
    let angles = t.constant(stack(&batch.angles));
    let z_anchor = anchor_embed(t, angles);
    let z_motion = t.l2_normalize_rows(m_ortho);
    let l_align = t.loss_align(z_anchor, z_motion, T::lit(spec.tau));

    let alpha = if spec.use_ortho { spec.alpha } else { 0.0 };
    let beta = if spec.use_align { spec.beta } else { 0.0 };
    let l_total = t.weighted_sum(&[(l_pose, T::one()), (l_ortho, T::lit(alpha)), (l_align, T::lit(beta))]);
    LossVars { l_pose, l_ortho, l_align, l_total, frames }
}
