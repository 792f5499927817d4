//! Central-difference verification of the tape's reverse pass.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::model::{
    anchor_embed, basis_generator, motion_encoder_step, pose_decoder_step, view_encoder, Model, INPUT_DIM,
    OUTPUT_DIM,
};
use super::objective::{sequence_loss, ObjectiveSpec, SequenceBatch};
use super::params::ParamStore;
use super::tape::{Mode, Tape, Var};
use super::{EncoderConfig, GeluKind};
use crate::error::Error;
use crate::geometry::NUM_POSE_PARAMS;
use crate::tensor::Matrix;
use crate::viewfeat::VIEW_FEATURE_DIM;

/// Central differences carry rounding noise of order `ε·|f|/h`, so gradient
/// entries smaller than `REL_ERR_FLOOR·max(1, |f|)` are compared against that
/// floor instead of their own magnitude.
pub const REL_ERR_FLOOR: f64 = 1e-5;

/// Default relative step for the difference stencil.
pub const DEFAULT_STEP: f64 = 1e-4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Component {
    Linear,
    MotionEncoder,
    ViewEncoder,
    BasisGenerator,
    Projection,
    PoseDecoder,
    AnchorEmbed,
    LossOrtho,
    LossAlign,
    FullModel,
}

impl Component {
    pub const ALL: [Component; 10] = [
        Component::Linear,
        Component::MotionEncoder,
        Component::ViewEncoder,
        Component::BasisGenerator,
        Component::Projection,
        Component::PoseDecoder,
        Component::AnchorEmbed,
        Component::LossOrtho,
        Component::LossAlign,
        Component::FullModel,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Component::Linear => "linear",
            Component::MotionEncoder => "motion_encoder",
            Component::ViewEncoder => "view_encoder",
            Component::BasisGenerator => "basis_generator",
            Component::Projection => "projection",
            Component::PoseDecoder => "pose_decoder",
            Component::AnchorEmbed => "anchor_embed",
            Component::LossOrtho => "loss_ortho",
            Component::LossAlign => "loss_align",
            Component::FullModel => "full_model",
        }
    }
}

impl fmt::Display for Component {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Component {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        Component::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown component `{s}`")))
    }
}

/// Scales the analytic gradient of one named parameter entry before
/// comparison, to prove the checker notices.
#[derive(Clone, Debug, PartialEq)]
pub struct FaultInjection {
    pub param: String,
    pub index: usize,
    pub factor: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub component: Component,
    pub max_rel_err: f64,
    /// `name[index]` of the worst entry.
    pub offending_param: Option<String>,
    pub checked: usize,
    pub tol: f64,
    pub passed: bool,
}

// Small widths keep the parameter-wise sweep fast.
fn check_config() -> EncoderConfig {
    EncoderConfig {
        d_view: 6,
        d_motion: 6,
        d_base: 6,
        k: 2,
        hidden: 7,
        view_hidden: 6,
        dropout: 0.2,
        gelu: GeluKind::Erf,
        window: 2,
    }
}

const STEPS: usize = 4;
const BATCH: usize = 2;

struct Problem {
    store: ParamStore<f64>,
    config: EncoderConfig,
    weights: Vec<Matrix<f64>>,
    batch: Option<SequenceBatch<f64>>,
    seed: u64,
}

fn uniform(rows: usize, cols: usize, scale: f64, rng: &mut ChaCha8Rng) -> Matrix<f64> {
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.random_range(-scale..scale)).collect()).expect("shape")
}

fn build(component: Component, seed: u64) -> Problem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let config = check_config();
    let d = config.dim();
    let mut store = match component {
        Component::Linear | Component::LossOrtho | Component::LossAlign | Component::Projection => ParamStore::new(),
        _ => Model::new(config.clone(), seed).expect("valid config").params,
    };
    // Give biases and norm parameters generic values so no derivative is
    // evaluated at a special point.
    let names: Vec<String> = store.names().to_vec();
    for name in names {
        let m = store.get_mut(&name);
        if m.rows() == 1 {
            let jitter = uniform(1, m.cols(), 0.3, &mut rng);
            m.add_assign(&jitter);
        }
    }
    let mut weights = Vec::new();
    let mut batch = None;
    match component {
        Component::Linear => {
            store.insert("lin.w", uniform(5, 4, 1.0, &mut rng));
            store.insert("lin.b", uniform(1, 4, 1.0, &mut rng));
            store.insert("in.x", uniform(3, 5, 1.0, &mut rng));
            weights.push(uniform(3, 4, 1.0, &mut rng));
        }
        Component::MotionEncoder => {
            for s in 0..STEPS {
                store.insert(&format!("in.x{s}"), uniform(BATCH, INPUT_DIM, 1.0, &mut rng));
            }
            weights.push(uniform(BATCH, d, 1.0, &mut rng));
            weights.push(uniform(BATCH, OUTPUT_DIM, 1.0, &mut rng));
            weights.push(uniform(BATCH, config.hidden, 1.0, &mut rng));
        }
        Component::ViewEncoder => {
            store.insert("in.f", uniform(5, VIEW_FEATURE_DIM, 0.5, &mut rng));
            weights.push(uniform(5, d, 1.0, &mut rng));
        }
        Component::BasisGenerator => {
            store.insert("in.v", uniform(3, d, 1.0, &mut rng));
            weights.push(uniform(3, config.k * d, 1.0, &mut rng));
        }
        Component::Projection => {
            store.insert("in.m", uniform(3, d, 1.0, &mut rng));
            store.insert("in.raw", uniform(3, config.k * d, 1.0, &mut rng));
            weights.push(uniform(3, d, 1.0, &mut rng));
        }
        Component::PoseDecoder => {
            for s in 0..STEPS {
                store.insert(&format!("in.m{s}"), uniform(BATCH, d, 1.0, &mut rng));
            }
            weights.push(uniform(BATCH, OUTPUT_DIM, 1.0, &mut rng));
            weights.push(uniform(BATCH, config.hidden, 1.0, &mut rng));
        }
        Component::AnchorEmbed => {
            store.insert("in.angles", uniform(4, NUM_POSE_PARAMS, 1.0, &mut rng));
            weights.push(uniform(4, d, 1.0, &mut rng));
        }
        Component::LossOrtho => {
            store.insert("in.m", uniform(5, d, 1.0, &mut rng));
            store.insert("in.v", uniform(5, d, 1.0, &mut rng));
        }
        Component::LossAlign => {
            store.insert("in.a", uniform(5, d, 1.0, &mut rng));
            store.insert("in.m", uniform(5, d, 1.0, &mut rng));
        }
        Component::FullModel => {
            let mk = |cols, scale, rng: &mut ChaCha8Rng| (0..STEPS).map(|_| uniform(BATCH, cols, scale, rng)).collect();
            batch = Some(SequenceBatch {
                inputs: mk(INPUT_DIM, 1.0, &mut rng),
                coarse_targets: mk(OUTPUT_DIM, 0.5, &mut rng),
                refined_targets: mk(OUTPUT_DIM, 0.5, &mut rng),
                angles: mk(NUM_POSE_PARAMS, 1.0, &mut rng),
            });
        }
    }
    Problem { store, config, weights, batch, seed }
}

fn weighted(t: &mut Tape<'_, f64>, x: Var, w: &Matrix<f64>) -> Var {
    let wv = t.constant(w.clone());
    let p = t.mul(x, wv);
    t.sum_all(p)
}

/// The scalar whose gradient is checked.
fn scalar(problem: &Problem, component: Component, t: &mut Tape<'_, f64>) -> Var {
    let cfg = &problem.config;
    let w = &problem.weights;
    match component {
        Component::Linear => {
            let x = t.param("in.x");
            let y = t.dense(x, "lin");
            weighted(t, y, &w[0])
        }
        Component::MotionEncoder => {
            let mut h = t.constant(Matrix::zeros(BATCH, cfg.hidden));
            let mut terms = Vec::new();
            for s in 0..STEPS {
                let x = t.param(&format!("in.x{s}"));
                let (m, k, hn) = motion_encoder_step(t, x, h);
                terms.push((weighted(t, m, &w[0]), 1.0));
                terms.push((weighted(t, k, &w[1]), 1.0));
                h = hn;
            }
            terms.push((weighted(t, h, &w[2]), 1.0));
            t.weighted_sum(&terms)
        }
        Component::ViewEncoder => {
            let f = t.param("in.f");
            let v = view_encoder(t, cfg, f);
            weighted(t, v, &w[0])
        }
        Component::BasisGenerator => {
            let v = t.param("in.v");
            let raw = basis_generator(t, v);
            weighted(t, raw, &w[0])
        }
        Component::Projection => {
            let m = t.param("in.m");
            let raw = t.param("in.raw");
            let basis = t.orthonormalize(raw, cfg.k);
            let p = t.project(m, basis, cfg.k);
            weighted(t, p, &w[0])
        }
        Component::PoseDecoder => {
            let mut h = t.constant(Matrix::zeros(BATCH, cfg.hidden));
            let mut outs: Vec<Var> = Vec::new();
            let mut terms = Vec::new();
            for s in 0..STEPS {
                let ctx = if s == 0 {
                    t.constant(Matrix::zeros(BATCH, OUTPUT_DIM))
                } else {
                    t.mean_of(&outs[s.saturating_sub(cfg.window)..s])
                };
                let m = t.param(&format!("in.m{s}"));
                let (y, hn) = pose_decoder_step(t, m, ctx, h);
                terms.push((weighted(t, y, &w[0]), 1.0));
                outs.push(y);
                h = hn;
            }
            terms.push((weighted(t, h, &w[1]), 1.0));
            t.weighted_sum(&terms)
        }
        Component::AnchorEmbed => {
            let a = t.param("in.angles");
            let z = anchor_embed(t, a);
            weighted(t, z, &w[0])
        }
        Component::LossOrtho => {
            let (m, v) = (t.param("in.m"), t.param("in.v"));
            t.loss_ortho(m, v)
        }
        Component::LossAlign => {
            let (a, m) = (t.param("in.a"), t.param("in.m"));
            let za = t.l2_normalize_rows(a);
            let zm = t.l2_normalize_rows(m);
            t.loss_align(za, zm, 0.5)
        }
        Component::FullModel => {
            let batch = problem.batch.as_ref().expect("full model batch");
            sequence_loss(t, cfg, batch, &ObjectiveSpec { tau: 0.5, ..Default::default() }).l_total
        }
    }
}

fn mode(problem: &Problem) -> Mode {
    // Dropout stays on with a fixed mask so its backward rule is covered.
    Mode::Train { seed: problem.seed ^ 0x5eed }
}

fn evaluate(problem: &Problem, component: Component, store: &ParamStore<f64>) -> f64 {
    let mut t = Tape::new(store, mode(problem));
    let root = scalar(problem, component, &mut t);
    t.value(root).item()
}

/// Compare reverse-mode gradients with fourth-order central differences
/// `(8(f(θ+h_i) − f(θ−h_i)) − (f(θ+2h_i) − f(θ−2h_i))) / 12h_i`,
/// `h_i = h·max(1, |θ_i|)`, over every parameter entry that takes part in the
/// component.
pub fn grad_check(component: Component, seed: u64, h: f64, tol: f64) -> GradCheckReport {
    grad_check_with_fault(component, seed, h, tol, None)
}

pub fn grad_check_with_fault(
    component: Component,
    seed: u64,
    h: f64,
    tol: f64,
    fault: Option<&FaultInjection>,
) -> GradCheckReport {
    let problem = build(component, seed);
    let (f0, grads) = {
        let mut t = Tape::new(&problem.store, mode(&problem));
        let root = scalar(&problem, component, &mut t);
        (t.value(root).item(), t.backward(root))
    };
    let floor = REL_ERR_FLOOR * f0.abs().max(1.0);
    let mut store = problem.store.clone();
    let mut max_rel_err = 0.0f64;
    let mut offending = None;
    let mut checked = 0;
    for id in 0..store.len() {
        let Some(analytic) = &grads.by_param[id] else { continue };
        let name = store.name(id).to_string();
        for i in 0..analytic.data().len() {
            let mut a = analytic.data()[i];
            if let Some(f) = fault {
                if f.param == name && f.index == i {
                    a *= f.factor;
                }
            }
            let theta = store.by_id(id).data()[i];
            let hi = h * theta.abs().max(1.0);
            let mut at = |offset: f64| {
                store.by_id_mut(id).data_mut()[i] = theta + offset;
                evaluate(&problem, component, &store)
            };
            let d1 = at(hi) - at(-hi);
            let d2 = at(2.0 * hi) - at(-2.0 * hi);
            store.by_id_mut(id).data_mut()[i] = theta;
            let numeric = (8.0 * d1 - d2) / (12.0 * hi);
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
            checked += 1;
            if rel > max_rel_err || !rel.is_finite() {
                max_rel_err = if rel.is_finite() { rel } else { f64::INFINITY };
                offending = Some(format!("{name}[{i}]"));
            }
        }
    }
    GradCheckReport { component, max_rel_err, offending_param: offending, checked, tol, passed: max_rel_err <= tol }
}
