use crate::error::{Error, Result};
use crate::eval::pa_mpjpe;
use crate::geometry::{FrameTag, Keypoints2D, MultiViewSample, Skeleton};
use crate::netcore::model::{encode_stage, pose_decoder_step, projection_stage, view_stage};
use crate::netcore::{encode_keypoints, Mode, Model, Var, INPUT_DIM, OUTPUT_DIM};
use crate::scalar::Real;
use crate::tensor::Matrix;

use super::policy::RefinementPolicy;

/// Per-frame outputs of one view's whole sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchOutput<T> {
    /// Root-relative body-frame keypoints.
    pub refined: Vec<Skeleton<T>>,
    /// Root-relative camera-frame keypoints from the encoder head.
    pub coarse: Vec<Skeleton<T>>,
    /// View embeddings, `T × D`.
    pub view: Matrix<T>,
    /// Motion features after projection, `T × D`.
    pub motion: Matrix<T>,
}

/// Run a whole keypoint sequence through one evaluation tape, frame by frame
/// with the same per-frame arithmetic as the streaming path. `coarse_noise`
/// (one `J×3` row per frame) is added to the coarse keypoints before the
/// view feature.
pub fn oracle_batch_with_noise<T: Real>(
    model: &Model<T>,
    kps: &[Keypoints2D<T>],
    image_size: [u32; 2],
    coarse_noise: Option<&[Vec<T>]>,
) -> Result<BatchOutput<T>> {
    if kps.is_empty() {
        return Err(Error::TooShort { need: 1, got: 0 });
    }
    if let Some(noise) = coarse_noise {
        if noise.len() != kps.len() || noise.iter().any(|n| n.len() != OUTPUT_DIM) {
            return Err(Error::ShapeMismatch("coarse noise must be one J x 3 row per frame".into()));
        }
    }
    let cfg = &model.config;
    let mut t = model.tape(Mode::Eval);
    let zero_h = t.constant(model.zero_hidden(1));
    let zero_ctx = t.constant(Matrix::zeros(1, OUTPUT_DIM));
    let (mut h_enc, mut h_dec) = (zero_h, zero_h);
    let mut refined: Vec<Var> = Vec::with_capacity(kps.len());
    let mut coarse = Vec::with_capacity(kps.len());
    let mut view = Matrix::zeros(kps.len(), cfg.dim());
    let mut motion = Matrix::zeros(kps.len(), cfg.dim());
    for (f, kp) in kps.iter().enumerate() {
        let x = t.constant(Matrix::from_vec(1, INPUT_DIM, encode_keypoints(kp, image_size).to_vec())?);
        let (m_init, mut k3d, h) = encode_stage(&mut t, x, h_enc);
        if let Some(noise) = coarse_noise {
            let nv = t.constant(Matrix::from_vec(1, OUTPUT_DIM, noise[f].clone())?);
            k3d = t.add(k3d, nv);
        }
        let (_, v) = view_stage(&mut t, cfg, k3d);
        let (_, _, m_ortho) = projection_stage(&mut t, cfg, m_init, v, model.project);
        let context = if f == 0 { zero_ctx } else { t.mean_of(&refined[f.saturating_sub(cfg.window)..f]) };
        let (y, hd) = pose_decoder_step(&mut t, m_ortho, context, h_dec);
        h_enc = h;
        h_dec = hd;
        refined.push(y);
        coarse.push(Skeleton::from_flat(t.value(k3d).data(), FrameTag::Camera));
        view.row_mut(f).copy_from_slice(t.value(v).data());
        motion.row_mut(f).copy_from_slice(t.value(m_ortho).data());
    }
    let refined = refined.iter().map(|&y| Skeleton::from_flat(t.value(y).data(), FrameTag::World)).collect();
    Ok(BatchOutput { refined, coarse, view, motion })
}

/// [`oracle_batch_with_noise`] without noise: the reference the streaming
/// path must reproduce.
pub fn oracle_batch<T: Real>(model: &Model<T>, kps: &[Keypoints2D<T>], image_size: [u32; 2]) -> Result<BatchOutput<T>> {
    oracle_batch_with_noise(model, kps, image_size, None)
}

/// Anything that turns one view of a sample into per-frame poses and
/// embeddings.
pub trait Lifter<T: Real> {
    fn lift(&self, sample: &MultiViewSample<T>, view: usize) -> Result<BatchOutput<T>>;
}

impl<T: Real> Lifter<T> for Model<T> {
    fn lift(&self, sample: &MultiViewSample<T>, view: usize) -> Result<BatchOutput<T>> {
        let rec = &sample.views[view];
        oracle_batch(self, &rec.keypoints, rec.camera.image_size)
    }
}

/// Returns the ground truth itself, with zero embeddings: a stand-in for a
/// perfect model.
#[derive(Clone, Copy, Debug, Default)]
pub struct GroundTruthLifter {
    pub dim: usize,
}

impl<T: Real> Lifter<T> for GroundTruthLifter {
    fn lift(&self, sample: &MultiViewSample<T>, view: usize) -> Result<BatchOutput<T>> {
        let rec = &sample.views[view];
        let n = sample.clip.frames.len();
        Ok(BatchOutput {
            refined: sample.clip.frames.iter().map(|s| s.root_relative()).collect(),
            coarse: rec.camera_frames.iter().map(|s| s.root_relative()).collect(),
            view: Matrix::zeros(n, self.dim.max(1)),
            motion: Matrix::zeros(n, self.dim.max(1)),
        })
    }
}

/// Stable identity of a camera placement: azimuth and elevation in
/// micro-degrees.
pub fn view_key<T: Real>(azimuth: T, elevation: T) -> (i64, i64) {
    let micro = |a: T| (a.as_f64().to_degrees() * 1e6).round() as i64;
    (micro(azimuth), micro(elevation))
}

/// Mean error and embedding of one camera placement.
#[derive(Clone, Debug, PartialEq)]
pub struct ViewErrorEntry {
    pub azimuth_deg: f64,
    pub elevation_deg: f64,
    pub mean_pa_mpjpe: f64,
    pub frames: usize,
    pub mean_embedding: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Calibration {
    pub policy: RefinementPolicy,
    /// All views, worst first.
    pub ranking: Vec<ViewErrorEntry>,
}

/// Rank camera placements by mean per-frame PA-MPJPE over the validation
/// set and use the mean view embeddings of the `n_hard` worst as
/// prototypes. Ties keep first-seen order.
pub fn calibrate_prototypes<T: Real, L: Lifter<T>>(
    lifter: &L,
    validation: &[MultiViewSample<T>],
    n_hard: usize,
    theta_flip: f64,
) -> Result<Calibration> {
    if validation.is_empty() {
        return Err(Error::InvalidArgument("calibration needs validation samples".into()));
    }
    let mut keys: Vec<(i64, i64)> = Vec::new();
    let mut entries: Vec<ViewErrorEntry> = Vec::new();
    for sample in validation {
        let gt: Vec<Skeleton<T>> = sample.clip.frames.iter().map(|s| s.root_relative()).collect();
        for (vi, rec) in sample.views.iter().enumerate() {
            let out = lifter.lift(sample, vi)?;
            let key = view_key(rec.camera.azimuth, rec.camera.elevation);
            let idx = match keys.iter().position(|k| *k == key) {
                Some(i) => i,
                None => {
                    keys.push(key);
                    entries.push(ViewErrorEntry {
                        azimuth_deg: rec.camera.azimuth.as_f64().to_degrees(),
                        elevation_deg: rec.camera.elevation.as_f64().to_degrees(),
                        mean_pa_mpjpe: 0.0,
                        frames: 0,
                        mean_embedding: vec![0.0; out.view.cols()],
                    });
                    entries.len() - 1
                }
            };
            let e = &mut entries[idx];
            for (f, pred) in out.refined.iter().enumerate() {
                e.mean_pa_mpjpe += pa_mpjpe(std::slice::from_ref(pred), std::slice::from_ref(&gt[f]))?.as_f64();
                for (m, &v) in e.mean_embedding.iter_mut().zip(out.view.row(f)) {
                    *m += v.as_f64();
                }
                e.frames += 1;
            }
        }
    }
    if entries.len() < n_hard || n_hard == 0 {
        return Err(Error::InsufficientViews { need: n_hard.max(1), found: entries.len() });
    }
    for e in entries.iter_mut() {
        let n = e.frames.max(1) as f64;
        e.mean_pa_mpjpe /= n;
        e.mean_embedding.iter_mut().for_each(|m| *m /= n);
    }
    let mut ranking = entries;
    ranking.sort_by(|a, b| b.mean_pa_mpjpe.total_cmp(&a.mean_pa_mpjpe));
    let prototypes = ranking[..n_hard].iter().map(|e| e.mean_embedding.clone()).collect();
    Ok(Calibration { policy: RefinementPolicy::new(prototypes, theta_flip), ranking })
}
