use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::tensor::{dot, Matrix};

/// Tolerance on row norms accepted by [`loss_align`].
const NORM_TOL: f64 = 1e-6;

/// Contrastive alignment loss with gradients for both embedding blocks.
#[derive(Clone, Debug, PartialEq)]
pub struct AlignLoss<T> {
    pub value: T,
    pub grad_anchor: Matrix<T>,
    pub grad_motion: Matrix<T>,
}

fn check_unit_rows<T: Real>(z: &Matrix<T>, offset: usize) -> Result<()> {
    let tol = T::lit(NORM_TOL);
    for r in 0..z.rows() {
        let n = dot(z.row(r), z.row(r)).sqrt();
        if !((n - T::one()).abs() <= tol) {
            return Err(Error::NonNormalizedInput { row: offset + r, norm: n.as_f64() });
        }
    }
    Ok(())
}

/// Bidirectional anchor/motion contrastive loss over a `2N` set.
///
/// Rows `0..N` are anchor embeddings and rows `N..2N` the motion embeddings;
/// row `i` is positive with `i ± N`. Each of the `2N` rows is scored by the
/// negative log-softmax of its positive among the `2N − 1` non-self cosine
/// similarities scaled by `1/τ`, and the scores are averaged.
pub fn loss_align<T: Real>(z_anchor: &Matrix<T>, z_motion: &Matrix<T>, tau: T) -> Result<AlignLoss<T>> {
    let n = z_anchor.rows();
    if n == 0 {
        return Err(Error::DegenerateBatch("contrastive alignment needs at least one pair".into()));
    }
    if z_motion.shape() != z_anchor.shape() {
        return Err(Error::ShapeMismatch(format!(
            "anchor block {:?} vs motion block {:?}",
            z_anchor.shape(),
            z_motion.shape()
        )));
    }
    assert!(tau > T::zero(), "temperature must be positive");
    check_unit_rows(z_anchor, 0)?;
    check_unit_rows(z_motion, n)?;

    let two_n = 2 * n;
    let row = |i: usize| if i < n { z_anchor.row(i) } else { z_motion.row(i - n) };
    let inv_tau = T::one() / tau;
    let scale = T::one() / T::from_usize_lossy(two_n);

    // coeff[i][j] = ∂L/∂sim_ij
    let mut coeff = Matrix::zeros(two_n, two_n);
    let mut logits = vec![T::zero(); two_n];
    let mut total = T::zero();
    for i in 0..two_n {
        let zi = row(i);
        let pos = if i < n { i + n } else { i - n };
        let mut max = T::neg_infinity();
        for (j, l) in logits.iter_mut().enumerate() {
            if j == i {
                continue;
            }
            *l = dot(zi, row(j)) * inv_tau;
            max = max.max(*l);
        }
        let mut denom = T::zero();
        for (j, &l) in logits.iter().enumerate() {
            if j != i {
                denom += (l - max).exp();
            }
        }
        total += (max - logits[pos]) + denom.ln();
        let c = coeff.row_mut(i);
        for j in 0..two_n {
            if j != i {
                c[j] = scale * inv_tau * (logits[j] - max).exp() / denom;
            }
        }
        c[pos] -= scale * inv_tau;
    }

    // sim_ij = ⟨z_i, z_j⟩ ⇒ ∂L/∂z_i = Σ_j (c_ij + c_ji) z_j.
    let d = z_anchor.cols();
    let mut grad = vec![vec![T::zero(); d]; two_n];
    for i in 0..two_n {
        for j in 0..two_n {
            if i == j {
                continue;
            }
            let w = coeff.get(i, j) + coeff.get(j, i);
            if w == T::zero() {
                continue;
            }
            for (g, &z) in grad[i].iter_mut().zip(row(j)) {
                *g += w * z;
            }
        }
    }
    let grad_motion = Matrix::from_rows(&grad[n..]).expect("uniform rows");
    grad.truncate(n);
    let grad_anchor = Matrix::from_rows(&grad).expect("uniform rows");
    Ok(AlignLoss { value: total * scale, grad_anchor, grad_motion })
}
