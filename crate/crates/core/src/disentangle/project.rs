use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::tensor::{dot, Matrix};

/// Stabilizer in the deflation coefficient `α_k = ⟨m, v_k⟩ / (‖v_k‖² + ε)`.
pub const PROJECTION_EPS: f64 = 1e-6;

/// Gram-Schmidt residuals shorter than this are dropped (set to zero).
pub const BASIS_DROP_TOL: f64 = 1e-8;

/// Per-frame sets of `k` basis vectors of width `dim`, stored frame-major.
#[derive(Clone, Debug, PartialEq)]
pub struct BasisSet<T> {
    frames: usize,
    k: usize,
    dim: usize,
    data: Vec<T>,
    orthonormalized: bool,
}

impl<T: Real> BasisSet<T> {
    pub fn new(frames: usize, k: usize, dim: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != frames * k * dim || k == 0 {
            return Err(Error::ShapeMismatch(format!(
                "basis data of length {} does not match {frames} frames x {k} bases x {dim}",
                data.len()
            )));
        }
        Ok(Self { frames, k, dim, data, orthonormalized: false })
    }

    /// Interpret each row of an `n × (k·dim)` matrix as `k` raw bases.
    pub fn from_matrix(raw: &Matrix<T>, k: usize) -> Result<Self> {
        if k == 0 || raw.cols() % k != 0 {
            return Err(Error::ShapeMismatch(format!("{} columns do not split into {k} bases", raw.cols())));
        }
        Self::new(raw.rows(), k, raw.cols() / k, raw.data().to_vec())
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_orthonormalized(&self) -> bool {
        self.orthonormalized
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn vector(&self, frame: usize, k: usize) -> &[T] {
        let start = (frame * self.k + k) * self.dim;
        &self.data[start..start + self.dim]
    }

    fn frame_block(&self, frame: usize) -> &[T] {
        let n = self.k * self.dim;
        &self.data[frame * n..(frame + 1) * n]
    }

    pub fn to_matrix(&self) -> Matrix<T> {
        Matrix::from_vec(self.frames, self.k * self.dim, self.data.clone()).expect("consistent shape")
    }
}

/// Intermediate vectors of modified Gram-Schmidt on one frame, kept for the
/// backward pass.
struct MgsFrame<T> {
    /// `partials[k][j]` is basis `k` before subtracting its component along
    /// output `j` (j < k); `partials[k][k]` is the final residual.
    partials: Vec<Vec<Vec<T>>>,
    norms: Vec<T>,
    out: Vec<Vec<T>>,
    kept: Vec<bool>,
}

fn mgs_frame<T: Real>(raw: &[T], k: usize, dim: usize) -> MgsFrame<T> {
    let tol = T::lit(BASIS_DROP_TOL);
    let mut partials = Vec::with_capacity(k);
    let mut norms = Vec::with_capacity(k);
    let mut out: Vec<Vec<T>> = Vec::with_capacity(k);
    let mut kept = Vec::with_capacity(k);
    for i in 0..k {
        let mut w = raw[i * dim..(i + 1) * dim].to_vec();
        let mut steps = Vec::with_capacity(i + 1);
        for j in 0..i {
            steps.push(w.clone());
            if kept[j] {
                let c = dot(&w, &out[j]);
                for (wv, &q) in w.iter_mut().zip(&out[j]) {
                    *wv -= c * q;
                }
            }
        }
        steps.push(w.clone());
        let n = dot(&w, &w).sqrt();
        let keep = n >= tol;
        let q = if keep { w.iter().map(|&x| x / n).collect() } else { vec![T::zero(); dim] };
        partials.push(steps);
        norms.push(n);
        out.push(q);
        kept.push(keep);
    }
    MgsFrame { partials, norms, out, kept }
}

/// Per frame, modified Gram-Schmidt over the bases in index order. Residuals
/// shorter than [`BASIS_DROP_TOL`] are zeroed; the rest are scaled to unit
/// length.
pub fn orthonormalize_bases<T: Real>(raw: &BasisSet<T>) -> BasisSet<T> {
    let mut data = Vec::with_capacity(raw.data.len());
    for f in 0..raw.frames {
        let mgs = mgs_frame(raw.frame_block(f), raw.k, raw.dim);
        for q in mgs.out {
            data.extend(q);
        }
    }
    BasisSet { frames: raw.frames, k: raw.k, dim: raw.dim, data, orthonormalized: true }
}

/// Vector-Jacobian product of [`orthonormalize_bases`]: maps the gradient of
/// the orthonormal output to the gradient of the raw input.
pub fn orthonormalize_backward<T: Real>(raw: &BasisSet<T>, grad_out: &[T]) -> Vec<T> {
    let (k, dim) = (raw.k, raw.dim);
    assert_eq!(grad_out.len(), raw.data.len());
    let mut grad_raw = vec![T::zero(); raw.data.len()];
    for f in 0..raw.frames {
        let mgs = mgs_frame(raw.frame_block(f), k, dim);
        let block = f * k * dim;
        let mut gq: Vec<Vec<T>> = (0..k).map(|i| grad_out[block + i * dim..block + (i + 1) * dim].to_vec()).collect();
        for i in (0..k).rev() {
            // Through the normalization q = w / ‖w‖.
            let mut gw = vec![T::zero(); dim];
            if mgs.kept[i] {
                let q = &mgs.out[i];
                let proj = dot(q, &gq[i]);
                for ((g, &gqi), &qv) in gw.iter_mut().zip(&gq[i]).zip(q) {
                    *g = (gqi - proj * qv) / mgs.norms[i];
                }
            }
            // Through each deflation w' = w − ⟨w, q_j⟩ q_j, newest first.
            for j in (0..i).rev() {
                if !mgs.kept[j] {
                    continue;
                }
                let q = &mgs.out[j];
                let w_before = &mgs.partials[i][j];
                let c = dot(w_before, q);
                let gq_dot = dot(q, &gw);
                for d in 0..dim {
                    gq[j][d] -= gq_dot * w_before[d] + c * gw[d];
                }
                for (g, &qv) in gw.iter_mut().zip(q) {
                    *g -= gq_dot * qv;
                }
            }
            grad_raw[block + i * dim..block + (i + 1) * dim].copy_from_slice(&gw);
        }
    }
    grad_raw
}

/// Motion features after deflation along every basis, plus the coefficients.
#[derive(Clone, Debug, PartialEq)]
pub struct ProjectionResult<T> {
    pub projected: Matrix<T>,
    /// `frames × K` coefficients `α_k` in deflation order.
    pub alphas: Matrix<T>,
}

fn check_projection_shapes<T: Real>(m: &Matrix<T>, basis: &BasisSet<T>) -> Result<()> {
    if m.rows() != basis.frames || m.cols() != basis.dim {
        return Err(Error::ShapeMismatch(format!(
            "motion features {}x{} vs bases for {} frames of width {}",
            m.rows(),
            m.cols(),
            basis.frames,
            basis.dim
        )));
    }
    Ok(())
}

/// Sequential deflation `m ← m − α_k·v_k` with
/// `α_k = ⟨m, v_k⟩ / (‖v_k‖² + ε)`, over `k = 1..K` for each frame.
pub fn ortho_project<T: Real>(m: &Matrix<T>, basis: &BasisSet<T>) -> Result<ProjectionResult<T>> {
    check_projection_shapes(m, basis)?;
    let eps = T::lit(PROJECTION_EPS);
    let mut projected = m.clone();
    let mut alphas = Matrix::zeros(m.rows(), basis.k);
    for f in 0..m.rows() {
        let row = projected.row_mut(f);
        for k in 0..basis.k {
            let v = basis.vector(f, k);
            let alpha = dot(row, v) / (dot(v, v) + eps);
            for (x, &vv) in row.iter_mut().zip(v) {
                *x -= alpha * vv;
            }
            alphas.set(f, k, alpha);
        }
    }
    Ok(ProjectionResult { projected, alphas })
}

/// Vector-Jacobian product of [`ortho_project`] with respect to the motion
/// features and the (orthonormalized) bases.
pub fn ortho_project_backward<T: Real>(
    m: &Matrix<T>,
    basis: &BasisSet<T>,
    grad_out: &Matrix<T>,
) -> Result<(Matrix<T>, Vec<T>)> {
    check_projection_shapes(m, basis)?;
    let eps = T::lit(PROJECTION_EPS);
    let (k, dim) = (basis.k, basis.dim);
    let mut grad_m = Matrix::zeros(m.rows(), m.cols());
    let mut grad_b = vec![T::zero(); basis.data.len()];
    let mut states: Vec<Vec<T>> = Vec::with_capacity(k);
    for f in 0..m.rows() {
        // Replay the forward pass, keeping the state before each deflation.
        states.clear();
        let mut cur = m.row(f).to_vec();
        for kk in 0..k {
            states.push(cur.clone());
            let v = basis.vector(f, kk);
            let alpha = dot(&cur, v) / (dot(v, v) + eps);
            for (x, &vv) in cur.iter_mut().zip(v) {
                *x -= alpha * vv;
            }
        }
        let mut g = grad_out.row(f).to_vec();
        for kk in (0..k).rev() {
            let v = basis.vector(f, kk);
            let before = &states[kk];
            let s = dot(v, v) + eps;
            let alpha = dot(before, v) / s;
            let vg = dot(v, &g);
            let gb = &mut grad_b[(f * k + kk) * dim..(f * k + kk + 1) * dim];
            for d in 0..dim {
                gb[d] += -alpha * g[d] - vg * (before[d] - (alpha + alpha) * v[d]) / s;
            }
            for (gv, &vv) in g.iter_mut().zip(v) {
                *gv -= vv * vg / s;
            }
        }
        grad_m.row_mut(f).copy_from_slice(&g);
    }
    Ok((grad_m, grad_b))
}

/// Orthogonality penalty and its gradients.
#[derive(Clone, Debug, PartialEq)]
pub struct OrthoLoss<T> {
    pub value: T,
    pub grad_m: Matrix<T>,
    pub grad_v: Matrix<T>,
}

/// Mean over rows of the squared inner product between projected motion
/// features and view embeddings.
pub fn loss_ortho<T: Real>(m_proj: &Matrix<T>, v: &Matrix<T>) -> Result<OrthoLoss<T>> {
    if m_proj.shape() != v.shape() || m_proj.rows() == 0 {
        return Err(Error::ShapeMismatch(format!(
            "orthogonality loss needs equal non-empty shapes, got {:?} and {:?}",
            m_proj.shape(),
            v.shape()
        )));
    }
    let n = T::from_usize_lossy(m_proj.rows());
    let mut value = T::zero();
    let mut grad_m = Matrix::zeros(v.rows(), v.cols());
    let mut grad_v = Matrix::zeros(v.rows(), v.cols());
    for r in 0..v.rows() {
        let d = dot(m_proj.row(r), v.row(r));
        value += d * d;
        let c = (d + d) / n;
        for (g, &x) in grad_m.row_mut(r).iter_mut().zip(v.row(r)) {
            *g = c * x;
        }
        for (g, &x) in grad_v.row_mut(r).iter_mut().zip(m_proj.row(r)) {
            *g = c * x;
        }
    }
    Ok(OrthoLoss { value: value / n, grad_m, grad_v })
}
