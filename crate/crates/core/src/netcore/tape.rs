//! Reverse-accumulation tape over dense matrices.
//!
//! Every op evaluates eagerly and records what its backward rule needs. A
//! tape borrows the parameter store it reads from; gradients come back indexed
//! by parameter id.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::params::ParamStore;
use super::GeluKind;
use crate::disentangle::{self, BasisSet};
use crate::error::Error;
use crate::scalar::Real;
use crate::tensor::{dot, matmul_at_into, matmul_bt_into, Matrix};
use crate::viewfeat::{feature_from_flat, feature_from_flat_backward, VIEW_FEATURE_DIM};

/// Layer-norm variance floor. Small enough that normalized rows have unit
/// variance to ~1e-12 for ordinary activations.
pub const LAYER_NORM_EPS: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Eval,
    /// Dropout active, masks drawn from the given seed.
    Train { seed: u64 },
}

enum Op<T> {
    Constant,
    Param(usize),
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    OneMinus(Var),
    Scale(Var, T),
    Sigmoid(Var),
    Tanh(Var),
    Gelu(Var, GeluKind),
    LayerNorm { x: Var, gain: Var, bias: Var, xhat: Matrix<T>, inv_std: Vec<T> },
    Dropout { x: Var, mask: Vec<T> },
    ViewFeature(Var),
    ConcatCols(Var, Var),
    StackRows(Vec<Var>),
    SliceRows(Var, usize),
    MeanOf(Vec<Var>),
    Orthonormalize { raw: Var, k: usize },
    Project { m: Var, basis: Var, k: usize },
    L2NormalizeRows(Var),
    LossOrtho { grad_m: Matrix<T>, grad_v: Matrix<T>, m: Var, v: Var },
    LossAlign { grad_a: Matrix<T>, grad_m: Matrix<T>, a: Var, m: Var },
    SquaredError { x: Var, target: Matrix<T>, denom: T },
    WeightedSum(Vec<(Var, T)>),
    SumAll(Var),
}

struct Node<T> {
    value: Matrix<T>,
    op: Op<T>,
}

/// Gradients of a scalar with respect to every parameter touched by a tape.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients<T> {
    pub by_param: Vec<Option<Matrix<T>>>,
}

impl<T: Real> Gradients<T> {
    /// Gradient for parameter `id`, zeros if it did not take part.
    pub fn dense(&self, id: usize, store: &ParamStore<T>) -> Matrix<T> {
        self.by_param[id].clone().unwrap_or_else(|| {
            let v = store.by_id(id);
            Matrix::zeros(v.rows(), v.cols())
        })
    }
}

pub struct Tape<'p, T: Real> {
    params: &'p ParamStore<T>,
    nodes: Vec<Node<T>>,
    param_vars: Vec<Option<Var>>,
    rng: Option<ChaCha8Rng>,
}

fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

const TANH_GELU_C: f64 = 0.044_715;
const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;

fn gelu<T: Real>(x: T, kind: GeluKind) -> T {
    let half = T::lit(0.5);
    match kind {
        GeluKind::Erf => half * x * (T::one() + (x * T::lit(std::f64::consts::FRAC_1_SQRT_2)).erf()),
        GeluKind::Tanh => {
            let u = T::lit(SQRT_2_OVER_PI) * (x + T::lit(TANH_GELU_C) * x * x * x);
            half * x * (T::one() + u.tanh())
        }
    }
}

fn gelu_grad<T: Real>(x: T, kind: GeluKind) -> T {
    match kind {
        GeluKind::Erf => {
            let cdf = T::lit(0.5) * (T::one() + (x * T::lit(std::f64::consts::FRAC_1_SQRT_2)).erf());
            let pdf = (-(x * x) * T::lit(0.5)).exp() * T::lit(0.398_942_280_401_432_7);
            cdf + x * pdf
        }
        GeluKind::Tanh => {
            let u = T::lit(SQRT_2_OVER_PI) * (x + T::lit(TANH_GELU_C) * x * x * x);
            let t = u.tanh();
            let du = T::lit(SQRT_2_OVER_PI) * (T::one() + T::lit(3.0 * TANH_GELU_C) * x * x);
            T::lit(0.5) * (T::one() + t) + T::lit(0.5) * x * (T::one() - t * t) * du
        }
    }
}

/// Elementwise mean of equally shaped matrices, summed in slice order.
pub(crate) fn mean_of_slices<T: Real>(parts: &[&[T]], out: &mut [T]) {
    out.iter_mut().for_each(|v| *v = T::zero());
    for p in parts {
        for (o, &v) in out.iter_mut().zip(p.iter()) {
            *o += v;
        }
    }
    let n = T::from_usize_lossy(parts.len());
    for o in out.iter_mut() {
        *o /= n;
    }
}

impl<'p, T: Real> Tape<'p, T> {
    pub fn new(params: &'p ParamStore<T>, mode: Mode) -> Self {
        let rng = match mode {
            Mode::Eval => None,
            Mode::Train { seed } => Some(ChaCha8Rng::seed_from_u64(seed)),
        };
        Self { params, nodes: Vec::with_capacity(256), param_vars: vec![None; params.len()], rng }
    }

    pub fn is_training(&self) -> bool {
        self.rng.is_some()
    }

    pub fn params(&self) -> &'p ParamStore<T> {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Matrix<T>, op: Op<T>) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    #[inline]
    pub fn value(&self, v: Var) -> &Matrix<T> {
        &self.nodes[v.0].value
    }

    pub fn constant(&mut self, value: Matrix<T>) -> Var {
        self.push(value, Op::Constant)
    }

    /// Leaf for a named parameter; repeated lookups share one node.
    pub fn param(&mut self, name: &str) -> Var {
        let id = self.params.id(name).unwrap_or_else(|| panic!("unknown parameter `{name}`"));
        if let Some(v) = self.param_vars[id] {
            return v;
        }
        let v = self.push(self.params.by_id(id).clone(), Op::Param(id));
        self.param_vars[id] = Some(v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.cols(), bv.rows(), "matmul {:?} x {:?}", av.shape(), bv.shape());
        let out = av.matmul(bv);
        self.push(out, Op::MatMul(a, b))
    }

    /// `x + 1·bᵀ`: add a `1×n` row to every row of `x`.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Var {
        let bv = self.value(b).clone();
        assert_eq!((1, self.value(x).cols()), bv.shape(), "bias shape");
        let mut out = self.value(x).clone();
        for r in 0..out.rows() {
            for (o, &bb) in out.row_mut(r).iter_mut().zip(bv.data()) {
                *o += bb;
            }
        }
        self.push(out, Op::AddBias(x, b))
    }

    /// `x · W + b` for parameters `{prefix}.w` and `{prefix}.b`.
    pub fn dense(&mut self, x: Var, prefix: &str) -> Var {
        let w = self.param(&format!("{prefix}.w"));
        let b = self.param(&format!("{prefix}.b"));
        let xw = self.matmul(x, w);
        self.add_bias(xw, b)
    }

    fn zip_with(&mut self, a: Var, b: Var, f: impl Fn(T, T) -> T, op: Op<T>) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.shape(), bv.shape(), "elementwise shapes");
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
        let out = Matrix::from_vec(av.rows(), av.cols(), data).expect("shape");
        self.push(out, op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.zip_with(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.zip_with(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.zip_with(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn one_minus(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| T::one() - x);
        self.push(out, Op::OneMinus(a))
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        let out = self.value(a).map(|x| x * s);
        self.push(out, Op::Scale(a, s))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(sigmoid);
        self.push(out, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x.tanh());
        self.push(out, Op::Tanh(a))
    }

    /// GELU `x·Φ(x)`, exact or with the tanh approximation of `Φ`.
    pub fn gelu(&mut self, a: Var, kind: GeluKind) -> Var {
        let out = self.value(a).map(|x| gelu(x, kind));
        self.push(out, Op::Gelu(a, kind))
    }

    /// Per-row normalization to zero mean and unit variance, then an affine
    /// `gain ⊙ x̂ + bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Var {
        let xv = self.value(x);
        let (rows, cols) = xv.shape();
        let n = T::from_usize_lossy(cols);
        let mut xhat = Matrix::zeros(rows, cols);
        let mut inv_std = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = xv.row(r);
            let mean = row.iter().copied().sum::<T>() / n;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
            let inv = T::one() / (var + T::lit(LAYER_NORM_EPS)).sqrt();
            for (o, &v) in xhat.row_mut(r).iter_mut().zip(row) {
                *o = (v - mean) * inv;
            }
            inv_std.push(inv);
        }
        let (g, b) = (self.value(gain).clone(), self.value(bias).clone());
        let mut out = xhat.clone();
        for r in 0..rows {
            for ((o, &gg), &bb) in out.row_mut(r).iter_mut().zip(g.data()).zip(b.data()) {
                *o = *o * gg + bb;
            }
        }
        self.push(out, Op::LayerNorm { x, gain, bias, xhat, inv_std })
    }

    /// Inverted dropout; identity in evaluation mode.
    pub fn dropout(&mut self, x: Var, rate: f64) -> Var {
        let Some(rng) = self.rng.as_mut() else { return x };
        if rate <= 0.0 {
            return x;
        }
        let keep_scale = T::lit(1.0 / (1.0 - rate));
        let n = self.nodes[x.0].value.data().len();
        let mask: Vec<T> =
            (0..n).map(|_| if rng.random::<f64>() < rate { T::zero() } else { keep_scale }).collect();
        let data = self.value(x).data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
        let (r, c) = self.value(x).shape();
        let out = Matrix::from_vec(r, c, data).expect("shape");
        self.push(out, Op::Dropout { x, mask })
    }

    /// Hip/shoulder view features of each `J×3` keypoint row.
    pub fn view_feature(&mut self, k3d: Var) -> Var {
        let kv = self.value(k3d);
        let mut out = Matrix::zeros(kv.rows(), VIEW_FEATURE_DIM);
        for r in 0..kv.rows() {
            feature_from_flat(kv.row(r), out.row_mut(r));
        }
        self.push(out, Op::ViewFeature(k3d))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.rows(), bv.rows(), "concat rows");
        let mut out = Matrix::zeros(av.rows(), av.cols() + bv.cols());
        for r in 0..av.rows() {
            let row = out.row_mut(r);
            row[..av.cols()].copy_from_slice(av.row(r));
            row[av.cols()..].copy_from_slice(bv.row(r));
        }
        self.push(out, Op::ConcatCols(a, b))
    }

    pub fn stack_rows(&mut self, parts: &[Var]) -> Var {
        let cols = self.value(parts[0]).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let v = self.value(p);
            assert_eq!(v.cols(), cols, "stack_rows column mismatch");
            data.extend_from_slice(v.data());
            rows += v.rows();
        }
        let out = Matrix::from_vec(rows, cols, data).expect("shape");
        self.push(out, Op::StackRows(parts.to_vec()))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Var {
        let out = self.value(x).slice_rows(start, len);
        self.push(out, Op::SliceRows(x, start))
    }

    /// Elementwise mean of equally shaped values, accumulated in order.
    pub fn mean_of(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let (r, c) = self.value(parts[0]).shape();
        let mut out = Matrix::zeros(r, c);
        let slices: Vec<&[T]> = parts.iter().map(|&p| self.value(p).data()).collect();
        mean_of_slices(&slices, out.data_mut());
        self.push(out, Op::MeanOf(parts.to_vec()))
    }

    /// Modified Gram-Schmidt over the `k` bases packed in each row.
    pub fn orthonormalize(&mut self, raw: Var, k: usize) -> Var {
        let b = BasisSet::from_matrix(self.value(raw), k).expect("basis shape");
        let out = disentangle::orthonormalize_bases(&b).to_matrix();
        self.push(out, Op::Orthonormalize { raw, k })
    }

    /// Deflate each row of `m` along the `k` bases packed in the same row of
    /// `basis`.
    pub fn project(&mut self, m: Var, basis: Var, k: usize) -> Var {
        let b = BasisSet::from_matrix(self.value(basis), k).expect("basis shape");
        let out = disentangle::ortho_project(self.value(m), &b).expect("projection shape").projected;
        self.push(out, Op::Project { m, basis, k })
    }

    pub fn l2_normalize_rows(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let mut out = xv.clone();
        for r in 0..out.rows() {
            let row = out.row_mut(r);
            let n = dot(row, row).sqrt();
            for v in row.iter_mut() {
                *v /= n;
            }
        }
        self.push(out, Op::L2NormalizeRows(x))
    }

    pub fn loss_ortho(&mut self, m: Var, v: Var) -> Var {
        let l = disentangle::loss_ortho(self.value(m), self.value(v)).expect("ortho loss shapes");
        self.push(Matrix::scalar(l.value), Op::LossOrtho { grad_m: l.grad_m, grad_v: l.grad_v, m, v })
    }

    /// Embeddings that are not unit rows (a diverged network: non-finite or
    /// overflowed norms) give a NaN loss with zero gradients, so the caller
    /// can report the step instead of panicking.
    pub fn loss_align(&mut self, anchor: Var, motion: Var, tau: T) -> Var {
        let (av, mv) = (self.value(anchor), self.value(motion));
        match disentangle::loss_align(av, mv, tau) {
            Ok(l) => self.push(
                Matrix::scalar(l.value),
                Op::LossAlign { grad_a: l.grad_anchor, grad_m: l.grad_motion, a: anchor, m: motion },
            ),
            Err(Error::NonNormalizedInput { .. }) => {
                let (grad_a, grad_m) = (Matrix::zeros(av.rows(), av.cols()), Matrix::zeros(mv.rows(), mv.cols()));
                self.push(Matrix::scalar(T::nan()), Op::LossAlign { grad_a, grad_m, a: anchor, m: motion })
            }
            Err(e) => panic!("align loss inputs: {e}"),
        }
    }

    /// `Σ (x − target)² / denom`.
    pub fn squared_error(&mut self, x: Var, target: Matrix<T>, denom: T) -> Var {
        let xv = self.value(x);
        assert_eq!(xv.shape(), target.shape(), "squared_error shapes");
        let sum: T = xv.data().iter().zip(target.data()).map(|(&a, &b)| (a - b) * (a - b)).sum();
        self.push(Matrix::scalar(sum / denom), Op::SquaredError { x, target, denom })
    }

    pub fn weighted_sum(&mut self, terms: &[(Var, T)]) -> Var {
        let mut acc = T::zero();
        for &(v, w) in terms {
            acc += w * self.value(v).item();
        }
        self.push(Matrix::scalar(acc), Op::WeightedSum(terms.to_vec()))
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().copied().sum();
        self.push(Matrix::scalar(s), Op::SumAll(x))
    }

    /// Reverse pass from a scalar root.
    pub fn backward(&self, root: Var) -> Gradients<T> {
        assert_eq!(self.value(root).shape(), (1, 1), "backward root must be scalar");
        self.backward_seeded(vec![(root, Matrix::scalar(T::one()))])
    }

    /// Reverse pass from arbitrary seed gradients.
    pub fn backward_seeded(&self, seeds: Vec<(Var, Matrix<T>)>) -> Gradients<T> {
        let mut grads: Vec<Option<Matrix<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        let mut last = 0;
        for (v, g) in seeds {
            last = last.max(v.0);
            accumulate(&mut grads, v, g);
        }
        let mut by_param: Vec<Option<Matrix<T>>> = vec![None; self.params.len()];
        for idx in (0..=last).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            self.backprop_node(node, g, &mut grads, &mut by_param);
        }
        Gradients { by_param }
    }

    fn backprop_node(
        &self,
        node: &Node<T>,
        g: Matrix<T>,
        grads: &mut [Option<Matrix<T>>],
        by_param: &mut [Option<Matrix<T>>],
    ) {
        match &node.op {
            Op::Constant => {}
            Op::Param(id) => match &mut by_param[*id] {
                Some(acc) => acc.add_assign(&g),
                slot => *slot = Some(g),
            },
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (n, k, m) = (av.rows(), av.cols(), bv.cols());
                let mut ga = Matrix::zeros(n, k);
                matmul_bt_into(g.data(), bv.data(), ga.data_mut(), n, m, k);
                let mut gb = Matrix::zeros(k, m);
                matmul_at_into(av.data(), g.data(), gb.data_mut(), n, k, m);
                accumulate(grads, *a, ga);
                accumulate(grads, *b, gb);
            }
            Op::AddBias(x, b) => {
                let mut gb = Matrix::zeros(1, g.cols());
                for r in 0..g.rows() {
                    for (o, &v) in gb.data_mut().iter_mut().zip(g.row(r)) {
                        *o += v;
                    }
                }
                accumulate(grads, *b, gb);
                accumulate(grads, *x, g);
            }
            Op::Add(a, b) => {
                accumulate(grads, *a, g.clone());
                accumulate(grads, *b, g);
            }
            Op::Sub(a, b) => {
                accumulate(grads, *b, g.map(|v| -v));
                accumulate(grads, *a, g);
            }
            Op::Mul(a, b) => {
                let ga = elementwise(&g, self.value(*b), |x, y| x * y);
                let gb = elementwise(&g, self.value(*a), |x, y| x * y);
                accumulate(grads, *a, ga);
                accumulate(grads, *b, gb);
            }
            Op::OneMinus(a) => accumulate(grads, *a, g.map(|v| -v)),
            Op::Scale(a, s) => {
                let s = *s;
                accumulate(grads, *a, g.map(|v| v * s));
            }
            Op::Sigmoid(a) => {
                let gx = elementwise(&g, &node.value, |gv, y| gv * y * (T::one() - y));
                accumulate(grads, *a, gx);
            }
            Op::Tanh(a) => {
                let gx = elementwise(&g, &node.value, |gv, y| gv * (T::one() - y * y));
                accumulate(grads, *a, gx);
            }
            Op::Gelu(a, kind) => {
                let kind = *kind;
                let gx = elementwise(&g, self.value(*a), |gv, x| gv * gelu_grad(x, kind));
                accumulate(grads, *a, gx);
            }
            Op::LayerNorm { x, gain, bias, xhat, inv_std } => {
                let gain_v = self.value(*gain);
                let (rows, cols) = g.shape();
                let n = T::from_usize_lossy(cols);
                let mut gg = Matrix::zeros(1, cols);
                let mut gbias = Matrix::zeros(1, cols);
                let mut gx = Matrix::zeros(rows, cols);
                for r in 0..rows {
                    let (gr, xr) = (g.row(r), xhat.row(r));
                    let mut mean_gxhat = T::zero();
                    let mut mean_gxhat_xhat = T::zero();
                    for c in 0..cols {
                        gg.data_mut()[c] += gr[c] * xr[c];
                        gbias.data_mut()[c] += gr[c];
                        let gxh = gr[c] * gain_v.data()[c];
                        mean_gxhat += gxh;
                        mean_gxhat_xhat += gxh * xr[c];
                    }
                    mean_gxhat /= n;
                    mean_gxhat_xhat /= n;
                    let out = gx.row_mut(r);
                    for c in 0..cols {
                        let gxh = gr[c] * gain_v.data()[c];
                        out[c] = inv_std[r] * (gxh - mean_gxhat - xr[c] * mean_gxhat_xhat);
                    }
                }
                accumulate(grads, *gain, gg);
                accumulate(grads, *bias, gbias);
                accumulate(grads, *x, gx);
            }
            Op::Dropout { x, mask } => {
                let data = g.data().iter().zip(mask).map(|(&a, &m)| a * m).collect();
                accumulate(grads, *x, Matrix::from_vec(g.rows(), g.cols(), data).expect("shape"));
            }
            Op::ViewFeature(k3d) => {
                let kv = self.value(*k3d);
                let mut gk = Matrix::zeros(kv.rows(), kv.cols());
                for r in 0..g.rows() {
                    feature_from_flat_backward(g.row(r), gk.row_mut(r));
                }
                accumulate(grads, *k3d, gk);
            }
            Op::ConcatCols(a, b) => {
                let ca = self.value(*a).cols();
                let cb = g.cols() - ca;
                let mut ga = Matrix::zeros(g.rows(), ca);
                let mut gb = Matrix::zeros(g.rows(), cb);
                for r in 0..g.rows() {
                    ga.row_mut(r).copy_from_slice(&g.row(r)[..ca]);
                    gb.row_mut(r).copy_from_slice(&g.row(r)[ca..]);
                }
                accumulate(grads, *a, ga);
                accumulate(grads, *b, gb);
            }
            Op::StackRows(parts) => {
                let mut start = 0;
                for &p in parts {
                    let rows = self.value(p).rows();
                    accumulate(grads, p, g.slice_rows(start, rows));
                    start += rows;
                }
            }
            Op::SliceRows(x, start) => {
                let xv = self.value(*x);
                let mut gx = Matrix::zeros(xv.rows(), xv.cols());
                let c = xv.cols();
                gx.data_mut()[start * c..start * c + g.data().len()].copy_from_slice(g.data());
                accumulate(grads, *x, gx);
            }
            Op::MeanOf(parts) => {
                let inv = T::one() / T::from_usize_lossy(parts.len());
                for &p in parts {
                    accumulate(grads, p, g.map(|v| v * inv));
                }
            }
            Op::Orthonormalize { raw, k } => {
                let b = BasisSet::from_matrix(self.value(*raw), *k).expect("basis shape");
                let gr = disentangle::orthonormalize_backward(&b, g.data());
                accumulate(grads, *raw, Matrix::from_vec(g.rows(), g.cols(), gr).expect("shape"));
            }
            Op::Project { m, basis, k } => {
                let bv = self.value(*basis);
                let b = BasisSet::from_matrix(bv, *k).expect("basis shape");
                let (gm, gb) = disentangle::ortho_project_backward(self.value(*m), &b, &g).expect("shape");
                accumulate(grads, *m, gm);
                accumulate(grads, *basis, Matrix::from_vec(bv.rows(), bv.cols(), gb).expect("shape"));
            }
            Op::L2NormalizeRows(x) => {
                let xv = self.value(*x);
                let mut gx = Matrix::zeros(xv.rows(), xv.cols());
                for r in 0..xv.rows() {
                    let y = node.value.row(r);
                    let n = dot(xv.row(r), xv.row(r)).sqrt();
                    let gy = g.row(r);
                    let proj = dot(y, gy);
                    for ((o, &gv), &yv) in gx.row_mut(r).iter_mut().zip(gy).zip(y) {
                        *o = (gv - proj * yv) / n;
                    }
                }
                accumulate(grads, *x, gx);
            }
            Op::LossOrtho { grad_m, grad_v, m, v } => {
                let s = g.item();
                accumulate(grads, *m, grad_m.map(|x| x * s));
                accumulate(grads, *v, grad_v.map(|x| x * s));
            }
            Op::LossAlign { grad_a, grad_m, a, m } => {
                let s = g.item();
                accumulate(grads, *a, grad_a.map(|x| x * s));
                accumulate(grads, *m, grad_m.map(|x| x * s));
            }
            Op::SquaredError { x, target, denom } => {
                let s = g.item() * T::lit(2.0) / *denom;
                let gx = elementwise(self.value(*x), target, |a, b| (a - b) * s);
                accumulate(grads, *x, gx);
            }
            Op::WeightedSum(terms) => {
                let s = g.item();
                for &(v, w) in terms {
                    accumulate(grads, v, Matrix::scalar(s * w));
                }
            }
            Op::SumAll(x) => {
                let (r, c) = self.value(*x).shape();
                accumulate(grads, *x, Matrix::filled(r, c, g.item()));
            }
        }
    }
}

fn elementwise<T: Real>(a: &Matrix<T>, b: &Matrix<T>, f: impl Fn(T, T) -> T) -> Matrix<T> {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Matrix::from_vec(a.rows(), a.cols(), data).expect("shape")
}

fn accumulate<T: Real>(grads: &mut [Option<Matrix<T>>], v: Var, g: Matrix<T>) {
    match &mut grads[v.0] {
        Some(acc) => acc.add_assign(&g),
        slot => *slot = Some(g),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store() -> ParamStore<f64> {
        let mut p = ParamStore::new();
        p.insert_glorot("l.w", 5, 4, 1);
        p.insert_glorot("l.b", 1, 4, 2);
        p.insert("ln.g", Matrix::filled(1, 4, 1.0));
        p.insert("ln.b", Matrix::zeros(1, 4));
        p
    }

    #[test]
    fn layer_norm_rows_have_zero_mean_unit_variance() {
        let p = store();
        let mut t = Tape::new(&p, Mode::Eval);
        let x = t.constant(Matrix::from_vec(3, 5, (0..15).map(|i| (i as f64 * 0.9).sin() * 3.0).collect()).unwrap());
        let h = t.dense(x, "l");
        let (g, b) = (t.param("ln.g"), t.param("ln.b"));
        let y = t.layer_norm(h, g, b);
        for r in 0..3 {
            let row = t.value(y).row(r);
            let mean: f64 = row.iter().sum::<f64>() / 4.0;
            let var: f64 = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 4.0;
            assert!(mean.abs() < 1e-10);
            assert!((var - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn eval_dropout_is_identity_and_train_dropout_is_seeded() {
        let p = store();
        let x = Matrix::filled(50, 40, 1.0);
        let mut t = Tape::new(&p, Mode::Eval);
        let xv = t.constant(x.clone());
        assert_eq!(t.dropout(xv, 0.5), xv);

        let run = |seed| {
            let mut t = Tape::new(&p, Mode::Train { seed });
            let xv = t.constant(x.clone());
            let d = t.dropout(xv, 0.25);
            t.value(d).clone()
        };
        let (a, b, c) = (run(1), run(1), run(2));
        assert_eq!(a, b);
        assert_ne!(a, c);
        let zeros = a.data().iter().filter(|&&v| v == 0.0).count() as f64 / 2000.0;
        assert!((zeros - 0.25).abs() < 0.03, "dropped fraction {zeros}");
        // Inverted scaling keeps the expectation.
        let mean = a.data().iter().sum::<f64>() / 2000.0;
        assert!((mean - 1.0).abs() < 0.05);
    }

    #[test]
    fn gelu_matches_erf_definition() {
        for &x in &[-3.0, -0.5, 0.0, 0.7, 2.5] {
            let expect = 0.5 * x * (1.0 + libm::erf(x / 2f64.sqrt()));
            assert!((gelu(x, GeluKind::Erf) - expect).abs() < 1e-15);
            // The tanh form tracks the exact one to a few 1e-4.
            assert!((gelu(x, GeluKind::Tanh) - expect).abs() < 1e-3);
            for kind in [GeluKind::Erf, GeluKind::Tanh] {
                let h = 1e-6;
                let numeric = (gelu(x + h, kind) - gelu(x - h, kind)) / (2.0 * h);
                assert!((gelu_grad(x, kind) - numeric).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn shared_parameter_gradients_accumulate() {
        let p = store();
        let mut t = Tape::new(&p, Mode::Eval);
        let x = t.constant(Matrix::filled(2, 5, 1.0));
        let a = t.dense(x, "l");
        let b = t.dense(x, "l");
        let s = t.add(a, b);
        let root = t.sum_all(s);
        let g = t.backward(root);
        let gw = g.by_param[p.id("l.w").unwrap()].as_ref().unwrap();
        // d/dW of 2·Σ x·W = 2·Σ_rows x = 4 per entry.
        assert!(gw.data().iter().all(|&v| (v - 4.0).abs() < 1e-15));
    }
}
