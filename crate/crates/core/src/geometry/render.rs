use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{project_perspective, world_to_camera, CameraPose, Keypoints2D, MotionClip, Skeleton, NUM_JOINTS};
use crate::error::Result;
use crate::scalar::Real;

/// Pixel-space corruption applied to rendered 2D keypoints.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    /// Standard deviation of zero-mean Gaussian noise on u and v, in pixels.
    pub sigma_px: f64,
    /// Independent per-joint probability of being dropped (confidence 0).
    pub occlusion_prob: f64,
}

impl NoiseSpec {
    pub const CLEAN: NoiseSpec = NoiseSpec { sigma_px: 0.0, occlusion_prob: 0.0 };
}

/// One camera's observations of a clip.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViewRecord<T> {
    pub camera: CameraPose<T>,
    pub keypoints: Vec<Keypoints2D<T>>,
    /// Ground-truth skeletons in this camera's frame.
    pub camera_frames: Vec<Skeleton<T>>,
}

/// A clip seen from several cameras.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MultiViewSample<T> {
    pub schema_version: u32,
    pub clip: MotionClip<T>,
    pub views: Vec<ViewRecord<T>>,
    pub noise: NoiseSpec,
    pub seed: u64,
}

/// Counter-keyed generator for one (view, frame, joint) cell, so every cell's
/// noise is independent of generation order.
fn cell_rng(seed: u64, view: usize, frame: usize, joint: usize) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    for (chunk, word) in key.chunks_exact_mut(8).zip([seed, view as u64, frame as u64, joint as u64]) {
        chunk.copy_from_slice(&word.to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}

/// Apply pixel noise and occlusion dropout to one view's keypoints in place.
pub(crate) fn corrupt<T: Real>(kps: &mut [Keypoints2D<T>], noise: &NoiseSpec, seed: u64, view: usize) {
    if noise.sigma_px == 0.0 && noise.occlusion_prob == 0.0 {
        return;
    }
    for (frame, kp) in kps.iter_mut().enumerate() {
        for j in 0..NUM_JOINTS {
            let mut rng = cell_rng(seed, view, frame, j);
            let du: f64 = StandardNormal.sample(&mut rng);
            let dv: f64 = StandardNormal.sample(&mut rng);
            let drop = rng.random::<f64>() < noise.occlusion_prob;
            kp.points[j][0] += T::lit(noise.sigma_px * du);
            kp.points[j][1] += T::lit(noise.sigma_px * dv);
            if drop {
                kp.confidence[j] = T::zero();
            }
        }
    }
}

/// Render a clip from every camera: camera-frame ground truth plus projected,
/// optionally corrupted, 2D keypoints.
pub fn render_views<T: Real>(
    clip: &MotionClip<T>,
    cams: &[CameraPose<T>],
    noise: NoiseSpec,
    seed: u64,
) -> Result<MultiViewSample<T>> {
    assert!(!cams.is_empty(), "render_views needs at least one camera");
    let mut views = Vec::with_capacity(cams.len());
    for (v, cam) in cams.iter().enumerate() {
        let camera_frames: Vec<_> = clip.frames.iter().map(|s| world_to_camera(s, cam)).collect();
        let mut keypoints = camera_frames.iter().map(|s| project_perspective(s, cam)).collect::<Result<Vec<_>>>()?;
        corrupt(&mut keypoints, &noise, seed, v);
        views.push(ViewRecord { camera: cam.clone(), keypoints, camera_frames });
    }
    Ok(MultiViewSample { schema_version: super::SCHEMA_VERSION, clip: clip.clone(), views, noise, seed })
}
