use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::buffer::RingBuffer;
use super::policy::{difficulty_score, RefinementPolicy};
use crate::error::Result;
use crate::geometry::{horizontal_flip, FrameTag, JointSchema, Keypoints2D, Skeleton, NUM_JOINTS};
use crate::netcore::model::{encode_stage, pose_decoder_step, projection_stage, view_stage};
use crate::netcore::{encode_keypoints, Mode, Model, Tape, Var, INPUT_DIM, OUTPUT_DIM};
use crate::scalar::Real;
use crate::tensor::Matrix;

/// Wall time per pipeline stage, in nanoseconds.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageLatency {
    pub encode: u64,
    pub viewfeat: u64,
    pub project: u64,
    pub decode: u64,
    /// Everything the flipped pass adds; 0 when refinement is off.
    pub flip_extra: u64,
}

impl StageLatency {
    pub fn total(&self) -> u64 {
        self.encode + self.viewfeat + self.project + self.decode + self.flip_extra
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FrameResult<T> {
    /// Root-relative keypoints in the body frame.
    pub refined: Skeleton<T>,
    pub flip_activated: bool,
    pub difficulty: f64,
    pub latency: StageLatency,
}

/// How many times each network half has run.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct PassCounter {
    pub encoder: u64,
    pub decoder: u64,
}

/// Undo a horizontal flip on 3D output: negate x and swap left/right joints.
pub fn unflip<T: Real>(flat: &[T], out: &mut [T]) {
    let schema = JointSchema::standard();
    for j in 0..NUM_JOINTS {
        let src = schema.mirror(j);
        out[3 * j] = -flat[3 * src];
        out[3 * j + 1] = flat[3 * src + 1];
        out[3 * j + 2] = flat[3 * src + 2];
    }
}

fn elapsed(since: &mut Instant) -> u64 {
    let now = Instant::now();
    let ns = now.duration_since(*since).as_nanos() as u64;
    *since = now;
    ns
}

/// First half of a frame: encoder step and view embedding.
pub struct FrontPass<'m, T: Real> {
    tape: Tape<'m, T>,
    m_init: Var,
    k3d: Var,
    v: Var,
    h_enc: Var,
}

impl<'m, T: Real> FrontPass<'m, T> {
    pub fn run(
        model: &'m Model<T>,
        x: &[T],
        h_enc: &Matrix<T>,
        coarse_noise: Option<&[T]>,
        mut timer: Option<(&mut Instant, &mut StageLatency)>,
    ) -> Self {
        let mut tape = model.tape(Mode::Eval);
        let xv = tape.constant(Matrix::from_vec(1, INPUT_DIM, x.to_vec()).expect("input width"));
        let hv = tape.constant(h_enc.clone());
        let (m_init, mut k3d, h_enc) = encode_stage(&mut tape, xv, hv);
        if let Some(noise) = coarse_noise {
            let nv = tape.constant(Matrix::from_vec(1, OUTPUT_DIM, noise.to_vec()).expect("noise width"));
            k3d = tape.add(k3d, nv);
        }
        if let Some((clock, lat)) = timer.as_mut() {
            lat.encode += elapsed(clock);
        }
        let (_, v) = view_stage(&mut tape, &model.config, k3d);
        if let Some((clock, lat)) = timer.as_mut() {
            lat.viewfeat += elapsed(clock);
        }
        Self { tape, m_init, k3d, v, h_enc }
    }

    pub fn view(&self) -> &[T] {
        self.tape.value(self.v).data()
    }

    pub fn coarse(&self) -> &[T] {
        self.tape.value(self.k3d).data()
    }

    /// Second half: bases, projection and one decoder step.
    pub fn finish(
        mut self,
        model: &Model<T>,
        h_dec: &Matrix<T>,
        context: &Matrix<T>,
        mut timer: Option<(&mut Instant, &mut StageLatency)>,
    ) -> PassOutput<T> {
        let t = &mut self.tape;
        let (_, _, m_ortho) = projection_stage(t, &model.config, self.m_init, self.v, model.project);
        if let Some((clock, lat)) = timer.as_mut() {
            lat.project += elapsed(clock);
        }
        let hv = t.constant(h_dec.clone());
        let cv = t.constant(context.clone());
        let (refined, h_dec) = pose_decoder_step(t, m_ortho, cv, hv);
        if let Some((clock, lat)) = timer.as_mut() {
            lat.decode += elapsed(clock);
        }
        PassOutput {
            refined: t.value(refined).data().to_vec(),
            coarse: t.value(self.k3d).data().to_vec(),
            view: t.value(self.v).data().to_vec(),
            m_ortho: t.value(m_ortho).data().to_vec(),
            h_enc: t.value(self.h_enc).clone(),
            h_dec: t.value(h_dec).clone(),
        }
    }
}

/// Everything one frame pass produces.
#[derive(Clone, Debug, PartialEq)]
pub struct PassOutput<T> {
    pub refined: Vec<T>,
    pub coarse: Vec<T>,
    pub view: Vec<T>,
    pub m_ortho: Vec<T>,
    pub h_enc: Matrix<T>,
    pub h_dec: Matrix<T>,
}

/// One complete frame pass from explicit state, without touching any stream.
pub fn forward_pass<T: Real>(
    model: &Model<T>,
    x: &[T],
    h_enc: &Matrix<T>,
    h_dec: &Matrix<T>,
    context: &Matrix<T>,
) -> PassOutput<T> {
    FrontPass::run(model, x, h_enc, None, None).finish(model, h_dec, context, None)
}

/// The mirrored-input pass of flip refinement, mapped back to the original
/// side. Runs from the given states (never persisted) with the context
/// mirrored to match the mirrored subject.
pub fn mirrored_pass<T: Real>(
    model: &Model<T>,
    kp: &Keypoints2D<T>,
    image_size: [u32; 2],
    h_enc: &Matrix<T>,
    h_dec: &Matrix<T>,
    context: &Matrix<T>,
) -> Vec<T> {
    let flipped = horizontal_flip(kp, T::from_usize_lossy(image_size[0] as usize));
    let mut mirrored_ctx = Matrix::zeros(1, OUTPUT_DIM);
    unflip(context.data(), mirrored_ctx.data_mut());
    let other = forward_pass(model, &encode_keypoints(&flipped, image_size), h_enc, h_dec, &mirrored_ctx);
    let mut back = vec![T::zero(); OUTPUT_DIM];
    unflip(&other.refined, &mut back);
    back
}

fn average_into<T: Real>(acc: &mut [T], other: &[T]) {
    let half = T::lit(0.5);
    for (a, &b) in acc.iter_mut().zip(other) {
        *a = half * (*a + b);
    }
}

/// Persistent per-stream inference state.
#[derive(Clone, Debug)]
pub struct StreamState<T: Real> {
    model: Arc<Model<T>>,
    h_enc: Matrix<T>,
    h_dec: Matrix<T>,
    buffer: RingBuffer<T>,
    policy: RefinementPolicy,
    refining: bool,
    frames: u64,
    passes: PassCounter,
    context: Matrix<T>,
}

impl<T: Real> StreamState<T> {
    pub fn new(model: Arc<Model<T>>, policy: RefinementPolicy) -> Self {
        let cfg = &model.config;
        let buffer = RingBuffer::new(cfg.window, cfg.hidden, OUTPUT_DIM, cfg.dim());
        Self {
            h_enc: model.zero_hidden(1),
            h_dec: model.zero_hidden(1),
            context: Matrix::zeros(1, OUTPUT_DIM),
            model,
            buffer,
            policy,
            refining: false,
            frames: 0,
            passes: PassCounter::default(),
        }
    }

    pub fn model(&self) -> &Model<T> {
        &self.model
    }

    pub fn policy(&self) -> &RefinementPolicy {
        &self.policy
    }

    pub fn buffer(&self) -> &RingBuffer<T> {
        &self.buffer
    }

    pub fn encoder_state(&self) -> &Matrix<T> {
        &self.h_enc
    }

    pub fn decoder_state(&self) -> &Matrix<T> {
        &self.h_dec
    }

    pub fn frames(&self) -> u64 {
        self.frames
    }

    pub fn passes(&self) -> PassCounter {
        self.passes
    }

    /// Process one frame as it arrives.
    ///
    /// The unflipped pass always advances the recurrent states and the
    /// buffer. When the policy fires, a second pass on the mirrored input runs
    /// from copies of the same states and its un-mirrored output is averaged
    /// into the returned skeleton only.
    pub fn push_frame(&mut self, kp: &Keypoints2D<T>, image_size: [u32; 2]) -> Result<FrameResult<T>> {
        let model = Arc::clone(&self.model);
        let mut lat = StageLatency::default();
        let mut clock = Instant::now();

        let x = encode_keypoints(kp, image_size);
        let front = FrontPass::run(&model, &x, &self.h_enc, None, Some((&mut clock, &mut lat)));
        self.passes.encoder += 1;
        let difficulty = difficulty_score(front.view(), &self.policy)?;
        self.refining = self.policy.decide(difficulty, self.refining);
        lat.viewfeat += elapsed(&mut clock);

        self.buffer.context_mean(self.context.data_mut());
        let plain = front.finish(&model, &self.h_dec, &self.context, Some((&mut clock, &mut lat)));
        self.passes.decoder += 1;

        let mut refined = plain.refined.clone();
        if self.refining {
            let (h_enc, h_dec) = (self.h_enc.clone(), self.h_dec.clone());
            let back = mirrored_pass(&model, kp, image_size, &h_enc, &h_dec, &self.context);
            self.passes.encoder += 1;
            self.passes.decoder += 1;
            average_into(&mut refined, &back);
            lat.flip_extra = elapsed(&mut clock);
        }

        self.buffer.push(plain.h_enc.data(), plain.h_dec.data(), &plain.refined, &plain.view);
        self.h_enc = plain.h_enc;
        self.h_dec = plain.h_dec;
        self.frames += 1;
        Ok(FrameResult {
            refined: Skeleton::from_flat(&refined, FrameTag::World),
            flip_activated: self.refining,
            difficulty,
            latency: lat,
        })
    }
}

/// The flip-refined output for one frame computed from explicit state: the
/// average of the plain pass and the mirrored pass.
pub fn flip_refine<T: Real>(
    model: &Model<T>,
    kp: &Keypoints2D<T>,
    image_size: [u32; 2],
    h_enc: &Matrix<T>,
    h_dec: &Matrix<T>,
    context: &Matrix<T>,
) -> Skeleton<T> {
    let mut out = forward_pass(model, &encode_keypoints(kp, image_size), h_enc, h_dec, context).refined;
    average_into(&mut out, &mirrored_pass(model, kp, image_size, h_enc, h_dec, context));
    Skeleton::from_flat(&out, FrameTag::World)
}
