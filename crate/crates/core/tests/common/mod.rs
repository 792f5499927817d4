#![allow(dead_code)]

use std::f64::consts::PI;

use movid_core::geometry::{render_views, synth_motion, CameraPose, Keypoints2D, MotionKind, NoiseSpec, NUM_JOINTS};
use movid_core::netcore::{EncoderConfig, GeluKind, Model, INPUT_DIM, OUTPUT_DIM};
use movid_core::tensor::Matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A model whose refined output is exactly `tanh(tanh(u)), tanh(tanh(v)), 0`
/// per joint (up to a 1e-22 gate leak), hence mirror-equivariant.
pub fn equivariant_toy_model() -> Model<f64> {
    let cfg = EncoderConfig {
        d_view: 64,
        d_motion: 64,
        d_base: 64,
        k: 4,
        hidden: 64,
        view_hidden: 16,
        dropout: 0.0,
        gelu: GeluKind::Erf,
        window: 16,
    };
    let mut model = Model::new(cfg, 5).unwrap();
    let names: Vec<String> = model.params.names().to_vec();
    for name in &names {
        let keep = name.starts_with("view.");
        if !keep {
            let m = model.params.get_mut(name);
            *m = Matrix::zeros(m.rows(), m.cols());
        }
    }
    for prefix in ["enc", "dec"] {
        *model.params.get_mut(&format!("{prefix}.b_z")) = Matrix::filled(1, 64, -50.0);
    }
    // Encoder candidate copies u and v of every joint into hidden units.
    let w = model.params.get_mut("enc.w_n");
    for j in 0..NUM_JOINTS {
        w.set(3 * j, j, 1.0);
        w.set(3 * j + 1, NUM_JOINTS + j, 1.0);
    }
    let head = model.params.get_mut("enc.head_m.w");
    for i in 0..64 {
        head.set(i, i, 1.0);
    }
    let w = model.params.get_mut("dec.w_n");
    for i in 0..64 {
        w.set(i, i, 1.0);
    }
    let out = model.params.get_mut("dec.head.w");
    for j in 0..NUM_JOINTS {
        out.set(j, 3 * j, 1.0);
        out.set(NUM_JOINTS + j, 3 * j + 1, 1.0);
    }
    let _ = (INPUT_DIM, OUTPUT_DIM);
    model
}

/// A random but plausible 2D stream: a synthetic clip seen from a random
/// orbit camera with pixel noise and some occlusion.
pub fn random_stream(frames: usize, seed: u64) -> (Vec<Keypoints2D<f64>>, [u32; 2]) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let kind = MotionKind::ALL[rng.random_range(0..MotionKind::ALL.len())];
    let clip = synth_motion(kind, frames, seed);
    let cam = CameraPose::orbit(rng.random_range(0.0..2.0 * PI), rng.random_range(-0.2..0.5));
    let noise = NoiseSpec { sigma_px: 2.0, occlusion_prob: 0.05 };
    let sample = render_views(&clip, &[cam], noise, seed).unwrap();
    let view = sample.views.into_iter().next().unwrap();
    (view.keypoints, view.camera.image_size)
}
