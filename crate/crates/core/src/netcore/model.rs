//! The lifting network: recurrent motion encoder, view encoder, basis
//! generator, recurrent pose decoder and the canonical-pose anchor.
//!
//! Every component is written once against [`Tape`] and works on `B` rows at
//! a time. All ops are row-independent, so a frame computed alone (`B = 1`)
//! produces the same bits as the same frame inside a batch.

use super::params::ParamStore;
use super::tape::{Mode, Tape, Var};
use super::EncoderConfig;
use crate::disentangle::BasisSet;
use crate::error::{Error, Result};
use crate::geometry::{FrameTag, Keypoints2D, Skeleton, NUM_JOINTS, NUM_POSE_PARAMS};
use crate::scalar::Real;
use crate::tensor::{FeatureMatrix, Matrix};
use crate::viewfeat::VIEW_FEATURE_DIM;

/// Per-frame input width: normalized `(u, v)` and confidence per joint.
pub const INPUT_DIM: usize = 3 * NUM_JOINTS;
/// Per-frame output width: `J×3` keypoints.
pub const OUTPUT_DIM: usize = 3 * NUM_JOINTS;

const VIEW_LAYERS: usize = 4;
const GATES: [&str; 3] = ["z", "r", "n"];

/// Network input row for one frame. Pixel coordinates map to `[−1, 1]`
/// (`u_n = 2u/(W−1) − 1`); occluded joints get zero coordinates.
pub fn encode_keypoints<T: Real>(kp: &Keypoints2D<T>, image_size: [u32; 2]) -> [T; INPUT_DIM] {
    let two = T::lit(2.0);
    let w = T::from_usize_lossy(image_size[0] as usize) - T::one();
    let h = T::from_usize_lossy(image_size[1] as usize) - T::one();
    let mut out = [T::zero(); INPUT_DIM];
    for j in 0..NUM_JOINTS {
        let c = kp.confidence[j];
        if c > T::zero() {
            out[3 * j] = two * kp.points[j][0] / w - T::one();
            out[3 * j + 1] = two * kp.points[j][1] / h - T::one();
        }
        out[3 * j + 2] = c;
    }
    out
}

/// Parameters plus the widths they were built for.
#[derive(Clone, Debug, PartialEq)]
pub struct Model<T: Real> {
    pub config: EncoderConfig,
    pub params: ParamStore<T>,
    /// Whether motion features are deflated along the view bases. Off only
    /// for the no-projection ablation.
    pub project: bool,
}

/// Shapes of every parameter, in creation order.
pub fn param_shapes(cfg: &EncoderConfig) -> Vec<(String, usize, usize)> {
    let (d, h, vh, k) = (cfg.dim(), cfg.hidden, cfg.view_hidden, cfg.k);
    let mut shapes = Vec::new();
    let mut gru = |prefix: &str, input: usize| {
        for g in GATES {
            shapes.push((format!("{prefix}.w_{g}"), input, h));
            shapes.push((format!("{prefix}.u_{g}"), h, h));
            shapes.push((format!("{prefix}.b_{g}"), 1, h));
        }
    };
    gru("enc", INPUT_DIM);
    gru("dec", d + OUTPUT_DIM);
    let mut dense = |prefix: &str, i: usize, o: usize| {
        shapes.push((format!("{prefix}.w"), i, o));
        shapes.push((format!("{prefix}.b"), 1, o));
    };
    dense("enc.head_m", h, d);
    dense("enc.head_k", h, OUTPUT_DIM);
    dense("dec.head", h, OUTPUT_DIM);
    dense("basis", d, k * d);
    dense("anchor", NUM_POSE_PARAMS, d);
    for l in 0..VIEW_LAYERS {
        let i = if l == 0 { VIEW_FEATURE_DIM } else { vh };
        let o = if l + 1 == VIEW_LAYERS { d } else { vh };
        shapes.push((format!("view.l{l}.w"), i, o));
        shapes.push((format!("view.l{l}.b"), 1, o));
        shapes.push((format!("view.l{l}.ln_g"), 1, o));
        shapes.push((format!("view.l{l}.ln_b"), 1, o));
    }
    shapes
}

impl<T: Real> Model<T> {
    /// Weights uniform in `±√(6/(fan_in+fan_out))`, biases and norm offsets
    /// zero, norm gains one.
    pub fn new(config: EncoderConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new();
        for (name, r, c) in param_shapes(&config) {
            if name.ends_with(".ln_g") {
                params.insert(&name, Matrix::filled(r, c, T::one()));
            } else if r == 1 {
                params.insert(&name, Matrix::zeros(r, c));
            } else {
                params.insert_glorot(&name, r, c, seed);
            }
        }
        Ok(Self { config, params, project: true })
    }

    /// Wrap an existing store, checking every expected parameter is present
    /// with the right shape.
    pub fn from_params(config: EncoderConfig, params: ParamStore<T>) -> Result<Self> {
        config.validate()?;
        let shapes = param_shapes(&config);
        if shapes.len() != params.len() {
            return Err(Error::CheckpointShapeMismatch(format!(
                "expected {} tensors, checkpoint has {}",
                shapes.len(),
                params.len()
            )));
        }
        for (name, r, c) in shapes {
            let Some(id) = params.id(&name) else {
                return Err(Error::CheckpointShapeMismatch(format!("missing tensor `{name}`")));
            };
            let got = params.by_id(id).shape();
            if got != (r, c) {
                return Err(Error::CheckpointShapeMismatch(format!(
                    "`{name}`: expected {r}x{c}, checkpoint has {}x{}",
                    got.0, got.1
                )));
            }
        }
        Ok(Self { config, params, project: true })
    }

    pub fn tape(&self, mode: Mode) -> Tape<'_, T> {
        Tape::new(&self.params, mode)
    }

    pub fn zero_hidden(&self, rows: usize) -> Matrix<T> {
        Matrix::zeros(rows, self.config.hidden)
    }
}

/// Tape handles for the recurrent inputs of one frame step.
#[derive(Clone, Copy, Debug)]
pub struct FrameInputs {
    /// `B × INPUT_DIM` encoded keypoints.
    pub x: Var,
    pub h_enc: Var,
    pub h_dec: Var,
    /// `B × OUTPUT_DIM` mean of prior decoded frames.
    pub context: Var,
}

/// Tape handles for everything a frame step produces.
#[derive(Clone, Copy, Debug)]
pub struct FrameVars {
    pub m_init: Var,
    /// Root-relative keypoints in the camera frame.
    pub k3d_coarse: Var,
    pub view_feature: Var,
    pub v: Var,
    pub raw_basis: Var,
    pub basis: Var,
    pub m_ortho: Var,
    /// Root-relative keypoints in the body frame.
    pub refined: Var,
    pub h_enc: Var,
    pub h_dec: Var,
}

/// Gated recurrent unit:
///
/// ```text
/// z  = σ(x·W_z + h·U_z + b_z)
/// r  = σ(x·W_r + h·U_r + b_r)
/// n  = tanh(x·W_n + (r ⊙ h)·U_n + b_n)
/// h' = (1 − z) ⊙ n + z ⊙ h
/// ```
pub fn gru_step<T: Real>(t: &mut Tape<'_, T>, prefix: &str, x: Var, h: Var) -> Var {
    let gate_pre = |t: &mut Tape<'_, T>, g: &str, hin: Var| {
        let w = t.param(&format!("{prefix}.w_{g}"));
        let u = t.param(&format!("{prefix}.u_{g}"));
        let b = t.param(&format!("{prefix}.b_{g}"));
        let xw = t.matmul(x, w);
        let hu = t.matmul(hin, u);
        let s = t.add(xw, hu);
        t.add_bias(s, b)
    };
    let z_pre = gate_pre(t, "z", h);
    let z = t.sigmoid(z_pre);
    let r_pre = gate_pre(t, "r", h);
    let r = t.sigmoid(r_pre);
    let rh = t.mul(r, h);
    let n_pre = gate_pre(t, "n", rh);
    let n = t.tanh(n_pre);
    let keep = t.one_minus(z);
    let fresh = t.mul(keep, n);
    let carried = t.mul(z, h);
    t.add(fresh, carried)
}

/// One motion-encoder step: `(M_init row, coarse keypoints, new hidden)`.
pub fn motion_encoder_step<T: Real>(t: &mut Tape<'_, T>, x: Var, h: Var) -> (Var, Var, Var) {
    let h_new = gru_step(t, "enc", x, h);
    let m = t.dense(h_new, "enc.head_m");
    let k3d = t.dense(h_new, "enc.head_k");
    (m, k3d, h_new)
}

/// Four blocks of dense → layer norm → GELU → dropout.
pub fn view_encoder<T: Real>(t: &mut Tape<'_, T>, cfg: &EncoderConfig, f: Var) -> Var {
    let mut x = f;
    for l in 0..VIEW_LAYERS {
        let pre = t.dense(x, &format!("view.l{l}"));
        let g = t.param(&format!("view.l{l}.ln_g"));
        let b = t.param(&format!("view.l{l}.ln_b"));
        let normed = t.layer_norm(pre, g, b);
        let act = t.gelu(normed, cfg.gelu);
        x = t.dropout(act, cfg.dropout);
    }
    x
}

/// Per-frame linear map from a view row to `K` raw bases packed row-wise.
pub fn basis_generator<T: Real>(t: &mut Tape<'_, T>, v: Var) -> Var {
    t.dense(v, "basis")
}

/// One decoder step conditioned on the context summary.
pub fn pose_decoder_step<T: Real>(t: &mut Tape<'_, T>, m: Var, context: Var, h: Var) -> (Var, Var) {
    let input = t.concat_cols(m, context);
    let h_new = gru_step(t, "dec", input, h);
    let out = t.dense(h_new, "dec.head");
    (out, h_new)
}

/// Linear embedding of canonical pose angles followed by row normalization.
pub fn anchor_embed<T: Real>(t: &mut Tape<'_, T>, angles: Var) -> Var {
    let z = t.dense(angles, "anchor");
    t.l2_normalize_rows(z)
}

/// Encoder stage of a frame: GRU step, motion head, coarse keypoints.
pub fn encode_stage<T: Real>(t: &mut Tape<'_, T>, x: Var, h_enc: Var) -> (Var, Var, Var) {
    motion_encoder_step(t, x, h_enc)
}

/// View stage: geometric features of the coarse keypoints and their embedding.
pub fn view_stage<T: Real>(t: &mut Tape<'_, T>, cfg: &EncoderConfig, k3d_coarse: Var) -> (Var, Var) {
    let f = t.view_feature(k3d_coarse);
    let v = view_encoder(t, cfg, f);
    (f, v)
}

/// Projection stage: `(raw bases, orthonormal bases, M_ortho)`. With
/// `project == false` the motion features pass through unchanged.
pub fn projection_stage<T: Real>(
    t: &mut Tape<'_, T>,
    cfg: &EncoderConfig,
    m_init: Var,
    v: Var,
    project: bool,
) -> (Var, Var, Var) {
    let raw = basis_generator(t, v);
    let basis = t.orthonormalize(raw, cfg.k);
    let m_ortho = if project { t.project(m_init, basis, cfg.k) } else { m_init };
    (raw, basis, m_ortho)
}

/// A full frame through every component.
pub fn frame_step<T: Real>(t: &mut Tape<'_, T>, cfg: &EncoderConfig, inp: FrameInputs, project: bool) -> FrameVars {
    let (m_init, k3d_coarse, h_enc) = encode_stage(t, inp.x, inp.h_enc);
    let (view_feature, v) = view_stage(t, cfg, k3d_coarse);
    let (raw_basis, basis, m_ortho) = projection_stage(t, cfg, m_init, v, project);
    let (refined, h_dec) = pose_decoder_step(t, m_ortho, inp.context, inp.h_dec);
    FrameVars { m_init, k3d_coarse, view_feature, v, raw_basis, basis, m_ortho, refined, h_enc, h_dec }
}

fn check_width<T: Real>(m: &Matrix<T>, want: usize, what: &str) -> Result<()> {
    if m.cols() != want || m.rows() == 0 {
        return Err(Error::ShapeMismatch(format!("{what}: expected T x {want} with T >= 1, got {:?}", m.shape())));
    }
    Ok(())
}

fn check_state<T: Real>(model: &Model<T>, state: Option<&Matrix<T>>) -> Result<Matrix<T>> {
    match state {
        None => Ok(model.zero_hidden(1)),
        Some(s) if s.shape() == (1, model.config.hidden) => Ok(s.clone()),
        Some(s) => Err(Error::ShapeMismatch(format!("hidden state {:?}, expected 1 x {}", s.shape(), model.config.hidden))),
    }
}

fn skeleton_rows<T: Real>(rows: &[&[T]], frame: FrameTag) -> Vec<Skeleton<T>> {
    rows.iter().map(|r| Skeleton::from_flat(r, frame)).collect()
}

/// Unroll the motion encoder over `T` encoded input rows.
/// Returns `(M_init, coarse keypoints, final hidden state)`.
pub fn motion_encoder_forward<T: Real>(
    model: &Model<T>,
    x: &Matrix<T>,
    state: Option<&Matrix<T>>,
) -> Result<(FeatureMatrix<T>, Vec<Skeleton<T>>, Matrix<T>)> {
    check_width(x, INPUT_DIM, "motion encoder input")?;
    let mut h = check_state(model, state)?;
    let mut m = Matrix::zeros(x.rows(), model.config.dim());
    let mut k3d = Vec::with_capacity(x.rows());
    for r in 0..x.rows() {
        let mut t = model.tape(Mode::Eval);
        let xv = t.constant(x.slice_rows(r, 1));
        let hv = t.constant(h);
        let (mv, kv, hn) = motion_encoder_step(&mut t, xv, hv);
        m.row_mut(r).copy_from_slice(t.value(mv).data());
        k3d.extend(skeleton_rows(&[t.value(kv).data()], FrameTag::Camera));
        h = t.value(hn).clone();
    }
    Ok((m, k3d, h))
}

/// The view encoder applied to `T × 10` geometric features.
pub fn view_encoder_forward<T: Real>(model: &Model<T>, f: &Matrix<T>, mode: Mode) -> Result<FeatureMatrix<T>> {
    check_width(f, VIEW_FEATURE_DIM, "view encoder input")?;
    let mut t = model.tape(mode);
    let fv = t.constant(f.clone());
    let v = view_encoder(&mut t, &model.config, fv);
    Ok(t.value(v).clone())
}

/// Raw (not yet orthonormal) bases for each view row.
pub fn basis_generator_forward<T: Real>(model: &Model<T>, v: &FeatureMatrix<T>) -> Result<BasisSet<T>> {
    check_width(v, model.config.dim(), "basis generator input")?;
    let mut t = model.tape(Mode::Eval);
    let vv = t.constant(v.clone());
    let raw = basis_generator(&mut t, vv);
    BasisSet::from_matrix(t.value(raw), model.config.k)
}

/// Unroll the decoder over `T` motion rows. `context` holds prior decoded
/// frames, oldest first; only the newest `W` are used, and each output joins
/// the window for the frames after it.
pub fn pose_decoder_forward<T: Real>(
    model: &Model<T>,
    m_ortho: &FeatureMatrix<T>,
    context: &[Skeleton<T>],
    state: Option<&Matrix<T>>,
) -> Result<(Vec<Skeleton<T>>, Matrix<T>)> {
    check_width(m_ortho, model.config.dim(), "pose decoder input")?;
    let w = model.config.window;
    let mut h = check_state(model, state)?;
    let mut history: Vec<Vec<T>> = context.iter().map(|s| s.to_flat()).collect();
    let mut out = Vec::with_capacity(m_ortho.rows());
    for r in 0..m_ortho.rows() {
        let start = history.len().saturating_sub(w);
        let mut ctx = Matrix::zeros(1, OUTPUT_DIM);
        if history.len() > start {
            let parts: Vec<&[T]> = history[start..].iter().map(|v| v.as_slice()).collect();
            super::tape::mean_of_slices(&parts, ctx.data_mut());
        }
        let mut t = model.tape(Mode::Eval);
        let mv = t.constant(m_ortho.slice_rows(r, 1));
        let cv = t.constant(ctx);
        let hv = t.constant(h);
        let (y, hn) = pose_decoder_step(&mut t, mv, cv, hv);
        let flat = t.value(y).data().to_vec();
        out.push(Skeleton::from_flat(&flat, FrameTag::World));
        history.push(flat);
        h = t.value(hn).clone();
    }
    Ok((out, h))
}
