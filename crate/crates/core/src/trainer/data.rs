//! The synthetic benchmark: clip generation, seen/unseen splits and window
//! sampling into [`SequenceBatch`]es.

use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{render_views, synth_motion, CameraPose, MotionKind, MultiViewSample, NoiseSpec};
use crate::netcore::{encode_keypoints, SequenceBatch, INPUT_DIM, OUTPUT_DIM};
use crate::streaming::view_key;
use crate::tensor::Matrix;

/// Shape of a generated benchmark.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetProfile {
    pub kinds: Vec<MotionKind>,
    pub seeds_per_kind: usize,
    pub frames_per_clip: usize,
    pub azimuths_deg: Vec<f64>,
    pub elevations_deg: Vec<f64>,
    pub noise: NoiseSpec,
    pub seed: u64,
}

impl Default for DatasetProfile {
    /// Six motion kinds, 20 seeds each, seen from a 45° azimuth ring at two
    /// elevations: 1,920 clip-view pairs.
    fn default() -> Self {
        Self {
            kinds: MotionKind::ALL.to_vec(),
            seeds_per_kind: 20,
            frames_per_clip: 48,
            azimuths_deg: (0..8).map(|i| 45.0 * i as f64).collect(),
            elevations_deg: vec![0.0, 30.0],
            noise: NoiseSpec { sigma_px: 1.0, occlusion_prob: 0.0 },
            seed: 7,
        }
    }
}

impl DatasetProfile {
    pub fn cameras(&self) -> Vec<CameraPose<f64>> {
        let mut cams = Vec::new();
        for &el in &self.elevations_deg {
            for &az in &self.azimuths_deg {
                cams.push(CameraPose::orbit(az * PI / 180.0, el * PI / 180.0));
            }
        }
        cams
    }

    /// Every clip rendered from every camera.
    pub fn generate(&self) -> Result<Vec<MultiViewSample<f64>>> {
        self.generate_clips(self.kinds.len() * self.seeds_per_kind)
    }

    /// The first `n` clips in seed-major order (all kinds for seed 0, then
    /// seed 1, ...), so any prefix is balanced across kinds.
    pub fn generate_clips(&self, n: usize) -> Result<Vec<MultiViewSample<f64>>> {
        if self.kinds.is_empty() {
            return Err(Error::InvalidArgument("dataset profile has no motion kinds".into()));
        }
        let cams = self.cameras();
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            let (kind, s) = (self.kinds[i % self.kinds.len()], i / self.kinds.len());
            let clip = synth_motion(kind, self.frames_per_clip, s as u64);
            let render_seed = self.seed ^ (i as u64).wrapping_mul(0x2545_F491_4F6C_DD1D);
            out.push(render_views(&clip, &cams, self.noise, render_seed)?);
        }
        Ok(out)
    }
}

/// Which clips and which camera placements each phase may use.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    /// Clips whose motion seed is at least this value are test clips.
    pub test_seed_from: u64,
    /// Azimuths never seen in training.
    pub held_out_azimuths_deg: Vec<f64>,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self { test_seed_from: 15, held_out_azimuths_deg: vec![45.0, 225.0] }
    }
}

/// A `(sample, view)` pair.
pub type ViewRef = (usize, usize);

#[derive(Clone, Debug, PartialEq)]
pub struct Split {
    /// Training clips at seen azimuths.
    pub train: Vec<ViewRef>,
    /// Test clips at held-out azimuths.
    pub unseen: Vec<ViewRef>,
    /// Test clips at seen azimuths.
    pub seen: Vec<ViewRef>,
    /// Test clip indices.
    pub test_samples: Vec<usize>,
}

impl SplitSpec {
    pub fn is_held_out(&self, cam: &CameraPose<f64>) -> bool {
        let key = view_key(cam.azimuth, 0.0).0;
        self.held_out_azimuths_deg.iter().any(|&a| view_key((a * PI / 180.0).rem_euclid(2.0 * PI), 0.0).0 == key)
    }

    pub fn apply(&self, data: &[MultiViewSample<f64>]) -> Split {
        let mut split = Split { train: Vec::new(), unseen: Vec::new(), seen: Vec::new(), test_samples: Vec::new() };
        for (i, s) in data.iter().enumerate() {
            let test = s.clip.seed >= self.test_seed_from;
            if test {
                split.test_samples.push(i);
            }
            for (v, rec) in s.views.iter().enumerate() {
                match (test, self.is_held_out(&rec.camera)) {
                    (false, false) => split.train.push((i, v)),
                    (true, true) => split.unseen.push((i, v)),
                    (true, false) => split.seen.push((i, v)),
                    (false, true) => {}
                }
            }
        }
        split
    }
}

/// Assemble a frame-major batch of `len`-frame windows.
pub fn build_batch(
    data: &[MultiViewSample<f64>],
    picks: &[(ViewRef, usize)],
    len: usize,
) -> Result<SequenceBatch<f64>> {
    let b = picks.len();
    if b == 0 {
        return Err(Error::DegenerateBatch("no windows selected".into()));
    }
    let mut batch = SequenceBatch {
        inputs: vec![Matrix::zeros(b, INPUT_DIM); len],
        coarse_targets: vec![Matrix::zeros(b, OUTPUT_DIM); len],
        refined_targets: vec![Matrix::zeros(b, OUTPUT_DIM); len],
        angles: vec![Matrix::zeros(b, crate::geometry::NUM_POSE_PARAMS); len],
    };
    for (row, &((si, vi), start)) in picks.iter().enumerate() {
        let s = &data[si];
        let rec = &s.views[vi];
        if start + len > s.clip.len() {
            return Err(Error::TooShort { need: start + len, got: s.clip.len() });
        }
        for t in 0..len {
            let f = start + t;
            batch.inputs[t].row_mut(row).copy_from_slice(&encode_keypoints(&rec.keypoints[f], rec.camera.image_size));
            batch.coarse_targets[t].row_mut(row).copy_from_slice(&rec.camera_frames[f].root_relative().to_flat());
            batch.refined_targets[t].row_mut(row).copy_from_slice(&s.clip.frames[f].root_relative().to_flat());
            batch.angles[t].row_mut(row).copy_from_slice(&s.clip.canon[f].angles);
        }
    }
    Ok(batch)
}

/// Epoch-wise shuffled window sampler.
pub struct WindowSampler {
    pool: Vec<ViewRef>,
    order: Vec<usize>,
    cursor: usize,
    rng: ChaCha8Rng,
}

impl WindowSampler {
    pub fn new(pool: Vec<ViewRef>, seed: u64) -> Self {
        let order = (0..pool.len()).collect();
        let mut s = Self { pool, order, cursor: 0, rng: ChaCha8Rng::seed_from_u64(seed) };
        s.order.shuffle(&mut s.rng);
        s
    }

    pub fn steps_per_epoch(&self, batch: usize) -> usize {
        self.pool.len().div_ceil(batch)
    }

    /// Next `batch` windows with random start frames; reshuffles at the end
    /// of each pass over the pool.
    pub fn next(&mut self, data: &[MultiViewSample<f64>], batch: usize, len: usize) -> Vec<(ViewRef, usize)> {
        let mut out = Vec::with_capacity(batch);
        while out.len() < batch {
            if self.cursor == self.order.len() {
                self.order.shuffle(&mut self.rng);
                self.cursor = 0;
            }
            let r = self.pool[self.order[self.cursor]];
            self.cursor += 1;
            let max_start = data[r.0].clip.len() - len;
            out.push((r, self.rng.random_range(0..=max_start)));
        }
        out
    }
}
