//! Motion/view disentanglement: Gram-Schmidt orthonormalization of generated
//! view bases, sequential deflation of motion features, the orthogonality
//! penalty, the anchor-based contrastive alignment loss and the weighted total.
//!
//! Every differentiable routine comes with an explicit vector-Jacobian product
//! so the network tape can chain through it.

mod align;
mod project;

use std::collections::BTreeMap;

pub use align::{loss_align, AlignLoss};
pub use project::{
    loss_ortho, ortho_project, ortho_project_backward, orthonormalize_bases, orthonormalize_backward, BasisSet,
    OrthoLoss, ProjectionResult, BASIS_DROP_TOL, PROJECTION_EPS,
};

use crate::geometry::CanonicalPose;
use crate::netcore::{model, Mode, ParamStore};
use crate::scalar::Real;
use crate::tensor::Matrix;

/// View-independent anchor embedding of a canonical pose: the learned linear
/// map `anchor.{w,b}` followed by L2 normalization.
pub fn anchor_embed<T: Real>(pose: &CanonicalPose<T>, params: &ParamStore<T>) -> Vec<T> {
    let mut t = crate::netcore::Tape::new(params, Mode::Eval);
    let a = t.constant(Matrix::from_vec(1, pose.angles.len(), pose.angles.to_vec()).expect("shape"));
    let z = model::anchor_embed(&mut t, a);
    t.value(z).data().to_vec()
}

/// One loss component with its parameter gradients.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LossTerm<T> {
    pub value: T,
    pub grads: BTreeMap<String, Vec<T>>,
}

/// Scalar losses of one step and the gradient of `l_total`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LossReport<T> {
    pub l_pose: T,
    pub l_ortho: T,
    pub l_align: T,
    pub l_total: T,
    pub grads: BTreeMap<String, Vec<T>>,
}

impl<T: Real> LossReport<T> {
    pub fn is_finite(&self) -> bool {
        [self.l_pose, self.l_ortho, self.l_align, self.l_total].iter().all(|v| v.is_finite())
    }
}

/// `l_total = l_pose + α·l_ortho + β·l_align`, with gradients combined the
/// same way (a parameter missing from a term contributes zero).
pub fn total_loss<T: Real>(
    pose: &LossTerm<T>,
    ortho: &LossTerm<T>,
    align: &LossTerm<T>,
    alpha: T,
    beta: T,
) -> LossReport<T> {
    assert!(alpha >= T::zero() && beta >= T::zero(), "loss weights must be non-negative");
    let mut grads: BTreeMap<String, Vec<T>> = BTreeMap::new();
    for (term, w) in [(pose, T::one()), (ortho, alpha), (align, beta)] {
        for (name, g) in &term.grads {
            let acc = grads.entry(name.clone()).or_insert_with(|| vec![T::zero(); g.len()]);
            for (a, &b) in acc.iter_mut().zip(g) {
                *a += w * b;
            }
        }
    }
    LossReport {
        l_pose: pose.value,
        l_ortho: ortho.value,
        l_align: align.value,
        l_total: pose.value + alpha * ortho.value + beta * align.value,
        grads,
    }
}

#[cfg(test)]
mod tests {
    use crate::geometry::{synth_motion, MotionKind};
    use crate::netcore::{EncoderConfig, Model};

    #[test]
    fn anchor_embedding_is_unit_norm_and_view_free() {
        let model = Model::<f64>::new(EncoderConfig::default(), 3).unwrap();
        let clip = synth_motion(MotionKind::Squat, 6, 2);
        for pose in &clip.canon {
            let z = anchor_embed(pose, &model.params);
            assert_eq!(z.len(), 32);
            let n: f64 = z.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-12);
            // Views share the frame's canonical pose, so they share the anchor.
            assert_eq!(z, anchor_embed(&pose.clone(), &model.params));
        }
    }

    use super::*;

    fn term(value: f64, g: &[(&str, Vec<f64>)]) -> LossTerm<f64> {
        LossTerm { value, grads: g.iter().map(|(n, v)| (n.to_string(), v.clone())).collect() }
    }

    #[test]
    fn zero_weights_reduce_to_pose() {
        let r = total_loss(&term(0.3, &[]), &term(5.0, &[]), &term(2.0, &[]), 0.0, 0.0);
        assert_eq!(r.l_total, 0.3);
    }

    #[test]
    fn ortho_only() {
        let r = total_loss(&term(0.0, &[]), &term(0.5, &[]), &term(9.0, &[]), 1.0, 0.0);
        assert_eq!(r.l_total, 0.5);
    }

    #[test]
    fn gradients_combine_linearly() {
        let pose = term(1.0, &[("a", vec![1.0, 2.0]), ("b", vec![0.5])]);
        let ortho = term(1.0, &[("a", vec![-3.0, 0.25])]);
        let align = term(1.0, &[("a", vec![0.1, 0.2]), ("c", vec![4.0])]);
        let (alpha, beta) = (0.1, 0.7);
        let r = total_loss(&pose, &ortho, &align, alpha, beta);
        let a = &r.grads["a"];
        for i in 0..2 {
            let expect = pose.grads["a"][i] + alpha * ortho.grads["a"][i] + beta * align.grads["a"][i];
            assert!((a[i] - expect).abs() <= 1e-12);
        }
        assert_eq!(r.grads["b"], vec![0.5]);
        assert!((r.grads["c"][0] - beta * 4.0).abs() <= 1e-12);
    }
}
