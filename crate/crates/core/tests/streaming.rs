mod common;

use std::sync::Arc;

use movid_core::geometry::{horizontal_flip, render_views, synth_motion, CameraPose, MotionKind, NoiseSpec};
use movid_core::netcore::{encode_keypoints, EncoderConfig, Model, OUTPUT_DIM};
use movid_core::streaming::*;
use movid_core::tensor::Matrix;
use movid_core::Error;

fn small_model(seed: u64) -> Arc<Model<f64>> {
    let cfg = EncoderConfig { window: 5, ..Default::default() };
    Arc::new(Model::new(cfg, seed).unwrap())
}

fn max_dev(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn streaming_matches_batch_oracle() {
    let model = small_model(1);
    for seed in 0..3 {
        let (kps, size) = common::random_stream(40, seed);
        let oracle = oracle_batch(&model, &kps, size).unwrap();
        let mut state = StreamState::new(Arc::clone(&model), RefinementPolicy::never(32));
        for (f, kp) in kps.iter().enumerate() {
            let r = state.push_frame(kp, size).unwrap();
            assert!(!r.flip_activated);
            assert_eq!(r.latency.flip_extra, 0);
            assert_eq!(r.refined.to_flat(), oracle.refined[f].to_flat(), "frame {f}");
        }
    }
}

#[test]
fn single_frame_oracle_equals_fresh_push() {
    let model = small_model(2);
    let (mut kps, size) = common::random_stream(2, 9);
    kps.truncate(1);
    let oracle = oracle_batch(&model, &kps, size).unwrap();
    let mut state = StreamState::new(Arc::clone(&model), RefinementPolicy::never(32));
    assert_eq!(state.push_frame(&kps[0], size).unwrap().refined, oracle.refined[0]);
    assert_eq!(oracle, oracle_batch(&model, &kps, size).unwrap());
}

#[test]
fn theta_zero_always_refines_with_two_passes() {
    let model = small_model(3);
    let (kps, size) = common::random_stream(20, 4);
    let policy = RefinementPolicy::new(vec![vec![1.0; 32]], 0.0);
    let mut state = StreamState::new(Arc::clone(&model), policy);
    for kp in &kps {
        assert!(state.push_frame(kp, size).unwrap().flip_activated);
    }
    assert_eq!(state.passes(), PassCounter { encoder: 40, decoder: 40 });
}

#[test]
fn refinement_output_is_the_average_of_two_explicit_passes() {
    let model = small_model(4);
    let (kps, size) = common::random_stream(12, 5);
    let mut state = StreamState::new(Arc::clone(&model), RefinementPolicy::new(vec![vec![1.0; 32]], 0.0));
    for kp in &kps {
        let (h_enc, h_dec) = (state.encoder_state().clone(), state.decoder_state().clone());
        let mut ctx = Matrix::zeros(1, OUTPUT_DIM);
        state.buffer().context_mean(ctx.data_mut());
        let plain = forward_pass(&model, &encode_keypoints(kp, size), &h_enc, &h_dec, &ctx).refined;
        let flipped = horizontal_flip(kp, size[0] as f64);
        let mut mctx = Matrix::zeros(1, OUTPUT_DIM);
        unflip(ctx.data(), mctx.data_mut());
        let other = forward_pass(&model, &encode_keypoints(&flipped, size), &h_enc, &h_dec, &mctx).refined;
        let mut back = vec![0.0; OUTPUT_DIM];
        unflip(&other, &mut back);
        let expect: Vec<f64> = plain.iter().zip(&back).map(|(a, b)| 0.5 * (a + b)).collect();
        let got = state.push_frame(kp, size).unwrap();
        assert_eq!(got.refined.to_flat(), expect);
    }
}

#[test]
fn refinement_never_touches_persistent_state() {
    let model = small_model(5);
    let (kps, size) = common::random_stream(30, 6);
    let mut off = StreamState::new(Arc::clone(&model), RefinementPolicy::never(32));
    let mut on = StreamState::new(Arc::clone(&model), RefinementPolicy::new(vec![vec![1.0; 32]], 0.0));
    for kp in &kps {
        off.push_frame(kp, size).unwrap();
        on.push_frame(kp, size).unwrap();
        assert_eq!(off.encoder_state(), on.encoder_state());
        assert_eq!(off.decoder_state(), on.decoder_state());
        let a: Vec<_> = off.buffer().iter().cloned().collect();
        let b: Vec<_> = on.buffer().iter().cloned().collect();
        assert_eq!(a, b);
    }
}

#[test]
fn equivariant_model_is_unchanged_by_refinement() {
    let model = Arc::new(common::equivariant_toy_model());
    let (kps, size) = common::random_stream(25, 7);
    let mut plain = StreamState::new(Arc::clone(&model), RefinementPolicy::never(64));
    let mut refined = StreamState::new(Arc::clone(&model), RefinementPolicy::new(vec![vec![1.0; 64]], 0.0));
    for kp in &kps {
        let a = plain.push_frame(kp, size).unwrap();
        let b = refined.push_frame(kp, size).unwrap();
        assert!(b.flip_activated);
        assert!(max_dev(&a.refined.to_flat(), &b.refined.to_flat()) < 1e-9);
    }
}

#[test]
fn buffer_slot_count_stays_at_window() {
    let model = small_model(6);
    let (kps, size) = common::random_stream(64, 8);
    let mut state = StreamState::new(Arc::clone(&model), RefinementPolicy::never(32));
    for i in 0..2_000 {
        state.push_frame(&kps[i % kps.len()], size).unwrap();
    }
    assert_eq!(state.buffer().slot_allocations(), 5);
    assert_eq!(state.buffer().capacity(), 5);
    assert_eq!(state.buffer().len(), 5);
}

#[test]
fn activation_rate_falls_with_theta() {
    let model = small_model(7);
    let (kps, size) = common::random_stream(80, 9);
    let oracle = oracle_batch(&model, &kps, size).unwrap();
    // Prototype at the stream's own first embedding so scores spread out.
    let proto: Vec<f64> = oracle.view.row(0).to_vec();
    let mut last = f64::INFINITY;
    for k in 0..=10 {
        let theta = k as f64 / 10.0;
        let mut state = StreamState::new(Arc::clone(&model), RefinementPolicy::new(vec![proto.clone()], theta));
        let active = kps.iter().filter(|kp| state.push_frame(kp, size).unwrap().flip_activated).count();
        let rate = active as f64 / kps.len() as f64;
        match k {
            0 => assert_eq!(rate, 1.0),
            10 => assert_eq!(rate, 0.0),
            _ => {}
        }
        assert!(rate <= last);
        last = rate;
    }
}

#[test]
fn empty_prototypes_are_an_error() {
    let model = small_model(8);
    let (kps, size) = common::random_stream(2, 1);
    let mut state = StreamState::new(model, RefinementPolicy::new(vec![], 0.5));
    assert_eq!(state.push_frame(&kps[0], size).unwrap_err(), Error::EmptyPrototypes);
}

/// Pretends to be a model whose error grows with the input noise it sees:
/// returns ground truth displaced by the mean pixel deviation of the view,
/// and embeds each view by its camera angles.
struct NoiseSensitiveLifter;

impl Lifter<f64> for NoiseSensitiveLifter {
    fn lift(&self, sample: &movid_core::geometry::MultiViewSample<f64>, view: usize) -> movid_core::Result<BatchOutput<f64>> {
        let rec = &sample.views[view];
        let clean = movid_core::geometry::project_perspective(
            &movid_core::geometry::world_to_camera(&sample.clip.frames[0], &rec.camera),
            &rec.camera,
        )?;
        let dev: f64 = rec.keypoints[0].points.iter().zip(&clean.points).map(|(a, b)| (a[0] - b[0]).abs()).sum::<f64>();
        let mut out = GroundTruthLifter { dim: 2 }.lift(sample, view)?;
        for s in out.refined.iter_mut() {
            for (j, p) in s.joints.iter_mut().enumerate() {
                p[j % 3] += 1e-4 * dev * (1.0 + j as f64);
            }
        }
        for f in 0..out.view.rows() {
            out.view.set(f, 0, rec.camera.azimuth.cos());
            out.view.set(f, 1, rec.camera.azimuth.sin() + rec.camera.elevation);
        }
        Ok(out)
    }
}

#[test]
fn calibration_picks_the_noisy_views() {
    let cams: Vec<CameraPose<f64>> = (0..8)
        .flat_map(|a| [0.0, 0.5].map(|e| CameraPose::orbit(a as f64 * std::f64::consts::FRAC_PI_4, e)))
        .collect();
    let mut validation = Vec::new();
    for seed in 0..3 {
        let clip = synth_motion(MotionKind::Walk, 8, seed);
        let mut sample = render_views(&clip, &cams, NoiseSpec::CLEAN, seed).unwrap();
        // Elevated side views (azimuth 90 and 270) get heavy pixel noise.
        let noisy = render_views(&clip, &cams, NoiseSpec { sigma_px: 25.0, occlusion_prob: 0.0 }, seed).unwrap();
        for (vi, cam) in cams.iter().enumerate() {
            let deg = cam.azimuth.to_degrees().round() as i64;
            if cam.elevation > 0.0 && (deg == 90 || deg == 270) {
                sample.views[vi] = noisy.views[vi].clone();
            }
        }
        validation.push(sample);
    }
    let cal = calibrate_prototypes(&NoiseSensitiveLifter, &validation, 2, 0.5).unwrap();
    let mut worst: Vec<i64> = cal.ranking[..2].iter().map(|e| e.azimuth_deg.round() as i64).collect();
    worst.sort();
    assert_eq!(worst, vec![90, 270]);
    assert!(cal.ranking[..2].iter().all(|e| e.elevation_deg > 0.0));
    assert_eq!(cal.policy.prototypes.len(), 2);
    assert_eq!(cal, calibrate_prototypes(&NoiseSensitiveLifter, &validation, 2, 0.5).unwrap());
    assert!(matches!(
        calibrate_prototypes(&NoiseSensitiveLifter, &validation, 17, 0.5),
        Err(Error::InsufficientViews { need: 17, found: 16 })
    ));
    // With every view a prototype, every view's own mean embedding scores 1.
    let all = calibrate_prototypes(&NoiseSensitiveLifter, &validation, 16, 0.5).unwrap();
    for e in &all.ranking {
        assert!((difficulty_score(&e.mean_embedding, &all.policy).unwrap() - 1.0).abs() < 1e-12);
    }
}
