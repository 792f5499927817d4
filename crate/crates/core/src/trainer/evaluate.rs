//! Held-out evaluation, the ablation suite and the noise sweep.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::data::{Split, ViewRef};
use super::train::{train, AblationSpec};
use crate::error::{Error, Result};
use crate::eval::{accel_error, cross_view_variance, mpjpe, pa_mpjpe, view_cluster_accuracy, KMeansConfig, MetricRow};
use crate::geometry::{MultiViewSample, Skeleton};
use crate::netcore::Model;
use crate::streaming::{oracle_batch_with_noise, view_key, BatchOutput, Lifter};
use crate::tensor::Matrix;

/// Frame-weighted pose errors.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mpjpe: f64,
    pub pa_mpjpe: f64,
    pub accel: f64,
    pub frames: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViewAggregate {
    pub view_id: String,
    pub metrics: Aggregate,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    /// One row per evaluated `(sample, view)` sequence.
    pub rows: Vec<MetricRow>,
    pub frames: Vec<usize>,
    pub per_view: Vec<ViewAggregate>,
    pub aggregate: Aggregate,
    /// K-means accuracy of per-sequence mean view embeddings against camera
    /// placement; `None` with fewer than two placements.
    pub view_cluster_accuracy: Option<f64>,
    /// Mean over samples of the cross-view variance of L2-normalized motion
    /// features; `None` when no sample is seen from two placements.
    pub cross_view_variance: Option<f64>,
}

pub fn view_label(azimuth: f64, elevation: f64) -> String {
    format!("az{:03}_el{:02}", azimuth.to_degrees().round() as i64, elevation.to_degrees().round() as i64)
}

fn sample_label(s: &MultiViewSample<f64>) -> String {
    s.clip.motion_id.clone()
}

fn normalize_rows(m: &Matrix<f64>) -> Matrix<f64> {
    let mut out = m.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let n = row.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 0.0 {
            row.iter_mut().for_each(|x| *x /= n);
        }
    }
    out
}

/// Map `f` over `items` on up to `workers` threads, preserving order.
pub fn par_map<I: Sync, O: Send>(items: &[I], workers: usize, f: impl Fn(&I) -> O + Sync) -> Vec<O> {
    let workers = workers.max(1).min(items.len().max(1));
    if workers == 1 {
        return items.iter().map(f).collect();
    }
    let chunk = items.len().div_ceil(workers);
    std::thread::scope(|s| {
        let handles: Vec<_> = items.chunks(chunk).map(|c| s.spawn(|| c.iter().map(&f).collect::<Vec<_>>())).collect();
        handles.into_iter().flat_map(|h| h.join().expect("worker panicked")).collect()
    })
}

struct SeqResult {
    metrics: Aggregate,
    view_mean: Vec<f64>,
    motion: Matrix<f64>,
}

fn score(out: &BatchOutput<f64>, sample: &MultiViewSample<f64>) -> Result<SeqResult> {
    let gt: Vec<Skeleton<f64>> = sample.clip.frames.iter().map(|s| s.root_relative()).collect();
    let n = out.refined.len();
    let accel = if n >= 3 { accel_error(&out.refined, &gt)? } else { 0.0 };
    let dim = out.view.cols();
    let mut view_mean = vec![0.0; dim];
    for r in 0..out.view.rows() {
        view_mean.iter_mut().zip(out.view.row(r)).for_each(|(m, v)| *m += v / n as f64);
    }
    Ok(SeqResult {
        metrics: Aggregate { mpjpe: mpjpe(&out.refined, &gt)?, pa_mpjpe: pa_mpjpe(&out.refined, &gt)?, accel, frames: n },
        view_mean,
        motion: normalize_rows(&out.motion),
    })
}

fn weighted(parts: impl Iterator<Item = Aggregate>) -> Aggregate {
    let mut acc = Aggregate::default();
    for p in parts {
        let w = p.frames as f64;
        acc.mpjpe += w * p.mpjpe;
        acc.pa_mpjpe += w * p.pa_mpjpe;
        acc.accel += w * p.accel;
        acc.frames += p.frames;
    }
    let n = acc.frames.max(1) as f64;
    Aggregate { mpjpe: acc.mpjpe / n, pa_mpjpe: acc.pa_mpjpe / n, accel: acc.accel / n, frames: acc.frames }
}

/// Lift every referenced sequence and score it against ground truth.
pub fn evaluate<L: Lifter<f64> + Sync>(
    lifter: &L,
    data: &[MultiViewSample<f64>],
    refs: &[ViewRef],
    workers: usize,
) -> Result<EvalReport> {
    if refs.is_empty() {
        return Err(Error::InvalidArgument("nothing to evaluate".into()));
    }
    let results = par_map(refs, workers, |&(s, v)| lifter.lift(&data[s], v).and_then(|o| score(&o, &data[s])));
    let results = results.into_iter().collect::<Result<Vec<_>>>()?;
    summarize(data, refs, results)
}

fn summarize(data: &[MultiViewSample<f64>], refs: &[ViewRef], results: Vec<SeqResult>) -> Result<EvalReport> {
    let mut keys: Vec<(i64, i64)> = Vec::new();
    let mut labels = Vec::with_capacity(refs.len());
    let mut rows = Vec::with_capacity(refs.len());
    for (&(s, v), r) in refs.iter().zip(&results) {
        let cam = &data[s].views[v].camera;
        let key = view_key(cam.azimuth, cam.elevation);
        let label = keys.iter().position(|k| *k == key).unwrap_or_else(|| {
            keys.push(key);
            keys.len() - 1
        });
        labels.push(label);
        rows.push(MetricRow {
            sample_id: sample_label(&data[s]),
            view_id: view_label(cam.azimuth, cam.elevation),
            mpjpe: r.metrics.mpjpe,
            pa_mpjpe: r.metrics.pa_mpjpe,
            accel: r.metrics.accel,
        });
    }
    let per_view = (0..keys.len())
        .map(|k| {
            let first = labels.iter().position(|&l| l == k).expect("label has a row");
            ViewAggregate {
                view_id: rows[first].view_id.clone(),
                metrics: weighted(results.iter().zip(&labels).filter(|(_, &l)| l == k).map(|(r, _)| r.metrics)),
            }
        })
        .collect();
    let aggregate = weighted(results.iter().map(|r| r.metrics));

    let view_cluster_accuracy = if keys.len() >= 2 {
        let emb = Matrix::from_rows(&results.iter().map(|r| r.view_mean.clone()).collect::<Vec<_>>())?;
        Some(view_cluster_accuracy(&emb, &labels, keys.len(), &KMeansConfig::default())?)
    } else {
        None
    };

    let mut by_sample: Vec<(usize, Vec<Matrix<f64>>)> = Vec::new();
    for (&(s, _), r) in refs.iter().zip(&results) {
        match by_sample.iter_mut().find(|(id, _)| *id == s) {
            Some((_, v)) => v.push(r.motion.clone()),
            None => by_sample.push((s, vec![r.motion.clone()])),
        }
    }
    let variances =
        by_sample.iter().filter(|(_, f)| f.len() >= 2).map(|(_, f)| cross_view_variance(f)).collect::<Result<Vec<_>>>()?;
    let cross_view_variance =
        (!variances.is_empty()).then(|| variances.iter().sum::<f64>() / variances.len() as f64);

    Ok(EvalReport {
        frames: results.iter().map(|r| r.metrics.frames).collect(),
        rows,
        per_view,
        aggregate,
        view_cluster_accuracy,
        cross_view_variance,
    })
}

/// One line of the ablation table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    pub pa_mpjpe: f64,
    pub cross_view_variance: f64,
    pub view_cluster_accuracy: f64,
}

/// Train the full model and the three single-module ablations from the same
/// seed, then score each on test clips: PA-MPJPE at held-out azimuths,
/// embedding statistics over every test placement.
pub fn run_ablation_suite(
    data: &[MultiViewSample<f64>],
    split: &Split,
    config: &TrainConfig,
    workers: usize,
) -> Result<Vec<AblationRow>> {
    let variants = [AblationSpec::FULL, AblationSpec::NO_PROJECTION, AblationSpec::NO_ORTHO, AblationSpec::NO_ALIGN];
    ablation_rows(data, split, config, &variants, workers)
}

pub fn ablation_rows(
    data: &[MultiViewSample<f64>],
    split: &Split,
    config: &TrainConfig,
    variants: &[AblationSpec],
    workers: usize,
) -> Result<Vec<AblationRow>> {
    if split.unseen.is_empty() {
        return Err(Error::InvalidArgument("ablation needs held-out views".into()));
    }
    let all_test: Vec<ViewRef> = split.seen.iter().chain(&split.unseen).copied().collect();
    let rows = par_map(variants, workers, |&a| -> Result<AblationRow> {
        let model = train(data, &split.train, config, a)?.model;
        let unseen = evaluate(&model, data, &split.unseen, 1)?;
        let all = evaluate(&model, data, &all_test, 1)?;
        Ok(AblationRow {
            variant: a.name().to_string(),
            pa_mpjpe: unseen.aggregate.pa_mpjpe,
            cross_view_variance: all.cross_view_variance.unwrap_or(f64::NAN),
            view_cluster_accuracy: all.view_cluster_accuracy.unwrap_or(f64::NAN),
        })
    });
    rows.into_iter().collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseRow {
    pub sigma_mm: f64,
    pub mpjpe: f64,
    pub pa_mpjpe: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSweep {
    pub rows: Vec<NoiseRow>,
    /// Error at the largest σ exceeds the σ = 0 error and no level drops
    /// more than [`NOISE_TREND_TOL`] below the running maximum, for both
    /// metrics.
    pub trend_ok: bool,
}

pub const NOISE_TREND_TOL: f64 = 0.02;

/// Whether `errs` rises overall and never dips more than `tol` (relative)
/// below its running maximum.
pub fn trend_holds(errs: &[f64], tol: f64) -> bool {
    let mut best = f64::NEG_INFINITY;
    for &e in errs {
        if e < best * (1.0 - tol) {
            return false;
        }
        best = best.max(e);
    }
    errs.len() >= 2 && errs[errs.len() - 1] > errs[0]
}

/// Inject zero-mean Gaussian noise of `σ` mm into the 2D keypoints (as
/// `f·σ/distance` pixels) and the coarse 3D keypoints, and score the refined
/// output. The unit-variance draws are fixed by `seed` and shared across
/// levels, so only their scale changes with σ.
pub fn noise_sweep(
    model: &Model<f64>,
    data: &[MultiViewSample<f64>],
    refs: &[ViewRef],
    sigmas_mm: &[f64],
    seed: u64,
    workers: usize,
) -> Result<NoiseSweep> {
    if sigmas_mm.is_empty() || sigmas_mm[0] != 0.0 || sigmas_mm.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::InvalidArgument("sigmas must ascend from 0".into()));
    }
    let mut rows = Vec::with_capacity(sigmas_mm.len());
    for &sigma in sigmas_mm {
        let results = par_map(refs, workers, |&(s, v)| -> Result<SeqResult> {
            let rec = &data[s].views[v];
            let (k2d, k3d) = base_draws(seed, s, v, rec.keypoints.len());
            let px = rec.camera.focal_px * sigma * 1e-3 / rec.camera.distance;
            let mut kps = rec.keypoints.clone();
            for (kp, d) in kps.iter_mut().zip(&k2d) {
                for (j, p) in kp.points.iter_mut().enumerate() {
                    p[0] += px * d[2 * j];
                    p[1] += px * d[2 * j + 1];
                }
            }
            let noise: Vec<Vec<f64>> = k3d.iter().map(|d| d.iter().map(|x| x * sigma * 1e-3).collect()).collect();
            let out = oracle_batch_with_noise(model, &kps, rec.camera.image_size, Some(&noise))?;
            score(&out, &data[s])
        });
        let results = results.into_iter().collect::<Result<Vec<_>>>()?;
        let agg = weighted(results.iter().map(|r| r.metrics));
        rows.push(NoiseRow { sigma_mm: sigma, mpjpe: agg.mpjpe, pa_mpjpe: agg.pa_mpjpe });
    }
    let trend_ok = trend_holds(&rows.iter().map(|r| r.mpjpe).collect::<Vec<_>>(), NOISE_TREND_TOL)
        && trend_holds(&rows.iter().map(|r| r.pa_mpjpe).collect::<Vec<_>>(), NOISE_TREND_TOL);
    Ok(NoiseSweep { rows, trend_ok })
}

/// Standard-normal draws for one sequence: `J×2` per frame for the image,
/// `J×3` per frame for the coarse keypoints.
fn base_draws(seed: u64, sample: usize, view: usize, frames: usize) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    use crate::geometry::NUM_JOINTS;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ ((sample as u64) << 20) ^ ((view as u64) << 8));
    let mut draw = |n: usize| -> Vec<f64> { (0..n).map(|_| StandardNormal.sample(&mut rng)).collect() };
    let k2d = (0..frames).map(|_| draw(2 * NUM_JOINTS)).collect();
    let k3d = (0..frames).map(|_| draw(3 * NUM_JOINTS)).collect();
    (k2d, k3d)
}

pub fn write_rows_csv<W: Write, R: Serialize>(out: W, rows: &[R]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r).map_err(|e| Error::Io(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}
