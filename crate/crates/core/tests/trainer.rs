use movid_core::geometry::MotionKind;
use movid_core::netcore::{sequence_loss, EncoderConfig, Mode, Model};
use movid_core::streaming::GroundTruthLifter;
use movid_core::trainer::*;

fn tiny_profile() -> DatasetProfile {
    DatasetProfile {
        kinds: vec![MotionKind::Walk, MotionKind::Squat, MotionKind::Hop],
        seeds_per_kind: 3,
        frames_per_clip: 12,
        azimuths_deg: vec![0.0, 90.0, 180.0, 270.0],
        elevations_deg: vec![0.0],
        ..Default::default()
    }
}

fn tiny_split() -> SplitSpec {
    SplitSpec { test_seed_from: 2, held_out_azimuths_deg: vec![90.0] }
}

fn tiny_config() -> TrainConfig {
    let mut c = TrainConfig::desk();
    c.model = EncoderConfig { d_view: 6, d_motion: 6, d_base: 6, k: 2, hidden: 8, view_hidden: 8, window: 4, ..Default::default() };
    c.optim.batch_size = 4;
    c.optim.epochs = 2;
    c.optim.clip_len = 6;
    c.optim.seed = 11;
    c
}

#[test]
fn zero_learning_rate_leaves_parameters_at_init() {
    let data = tiny_profile().generate().unwrap();
    let split = tiny_split().apply(&data);
    let mut cfg = tiny_config();
    cfg.optim.learning_rate = 0.0;
    let out = train(&data, &split.train, &cfg, AblationSpec::FULL).unwrap();
    let init = Model::<f64>::new(cfg.model.clone(), cfg.optim.seed).unwrap();
    assert_eq!(out.model.params, init.params);
    assert!(out.history.iter().all(|r| r.lr == 0.0));
}

#[test]
fn same_seed_gives_bit_identical_checkpoints() {
    let data = tiny_profile().generate().unwrap();
    let split = tiny_split().apply(&data);
    let cfg = tiny_config();
    let a = train(&data, &split.train, &cfg, AblationSpec::FULL).unwrap();
    let b = train(&data, &split.train, &cfg, AblationSpec::FULL).unwrap();
    assert_eq!(a.model.params, b.model.params);
    assert_eq!(a.history, b.history);
    let dir = tempfile::tempdir().unwrap();
    let (sa, sb) = (dir.path().join("a"), dir.path().join("b"));
    let meta = CheckpointMeta { config: cfg, ablation: AblationSpec::FULL };
    save_checkpoint(&sa, &a.model, &meta).unwrap();
    save_checkpoint(&sb, &b.model, &meta).unwrap();
    assert_eq!(std::fs::read(sa.with_extension("bin")).unwrap(), std::fs::read(sb.with_extension("bin")).unwrap());
    let (loaded, m) = load_checkpoint(&sa).unwrap();
    assert_eq!(loaded.params, a.model.params);
    assert_eq!(m, meta);
}

#[test]
fn one_small_step_reduces_the_loss() {
    let data = tiny_profile().generate().unwrap();
    let mut cfg = tiny_config();
    cfg.model.dropout = 0.0;
    cfg.optim.grad_clip = 0.0;
    let model = Model::<f64>::new(cfg.model.clone(), 3).unwrap();
    let batch = build_batch(&data, &[((0, 0), 0)], cfg.optim.clip_len).unwrap();
    let spec = AblationSpec::FULL.objective(&cfg);
    let loss_at = |m: &Model<f64>| {
        let mut t = m.tape(Mode::Eval);
        let lv = sequence_loss(&mut t, &m.config, &batch, &spec);
        let g = t.backward(lv.l_total);
        (t.value(lv.l_total).item(), g)
    };
    let (before, grads) = loss_at(&model);
    let mut stepped = model.clone();
    Adam::new(&stepped.params).step(&mut stepped.params, &grads, 1e-5);
    let (after, _) = loss_at(&stepped);
    assert!(after < before, "{after} !< {before}");
}

#[test]
fn clipping_caps_the_global_norm_and_bounds_the_step() {
    let data = tiny_profile().generate().unwrap();
    let cfg = tiny_config();
    let model = Model::<f64>::new(cfg.model.clone(), 5).unwrap();
    let batch = build_batch(&data, &[((1, 2), 0), ((4, 1), 3)], cfg.optim.clip_len).unwrap();
    let mut t = model.tape(Mode::Eval);
    let lv = sequence_loss(&mut t, &model.config, &batch, &AblationSpec::FULL.objective(&cfg));
    let mut g = t.backward(lv.l_total);
    let raw = clip_global_norm(&mut g, 1e-3);
    assert!(raw > 1e-3);
    assert!((global_norm(&g) - 1e-3).abs() < 1e-15);
    // First Adam step moves each entry by at most lr (bias-corrected m/√v has magnitude ≤ 1).
    let mut p = model.params.clone();
    Adam::new(&p).step(&mut p, &g, 0.01);
    for ((_, a), (_, b)) in p.iter().zip(model.params.iter()) {
        assert!(a.max_abs_diff(b) <= 0.01 * (1.0 + 1e-12));
    }
}

#[test]
fn history_has_every_loss_column_and_no_nan() {
    let data = tiny_profile().generate().unwrap();
    let split = tiny_split().apply(&data);
    let out = train(&data, &split.train, &tiny_config(), AblationSpec::FULL).unwrap();
    assert!(out.history.iter().all(|r| [r.l_pose, r.l_ortho, r.l_align, r.l_total, r.lr].iter().all(|v| v.is_finite())));
    let mut buf = Vec::new();
    write_history_csv(&mut buf, &out.history).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert!(text.starts_with("step,l_pose,l_ortho,l_align,l_total,lr\n"));
    assert_eq!(text.lines().count(), out.history.len() + 1);
}

#[test]
fn exploding_learning_rate_reports_the_step() {
    let data = tiny_profile().generate().unwrap();
    let split = tiny_split().apply(&data);
    let mut cfg = tiny_config();
    cfg.optim.learning_rate = 1e300;
    cfg.optim.epochs = 20;
    match train(&data, &split.train, &cfg, AblationSpec::FULL) {
        Err(movid_core::Error::NaNLoss { step, .. }) => assert!(step > 0),
        other => panic!("expected NaNLoss, got {:?}", other.map(|o| o.history.len())),
    }
}

#[test]
fn disabled_losses_are_logged_but_not_weighted() {
    let data = tiny_profile().generate().unwrap();
    let split = tiny_split().apply(&data);
    let out = train(&data, &split.train, &tiny_config(), AblationSpec::NO_LOSSES).unwrap();
    for r in &out.history {
        assert!(r.l_ortho > 0.0 && r.l_align > 0.0);
        assert_eq!(r.l_total, r.l_pose);
    }
}

#[test]
fn ablation_suite_has_four_rows_from_one_initialization() {
    let data = tiny_profile().generate().unwrap();
    let split = tiny_split().apply(&data);
    let mut cfg = tiny_config();
    cfg.optim.epochs = 1;
    let rows = run_ablation_suite(&data, &split, &cfg, 2).unwrap();
    let names: Vec<_> = rows.iter().map(|r| r.variant.as_str()).collect();
    assert_eq!(names, ["full", "no-projection", "no-ortho", "no-align"]);
    // Zero steps: every variant is still the shared initialization.
    cfg.optim.learning_rate = 0.0;
    let models: Vec<_> = [AblationSpec::FULL, AblationSpec::NO_PROJECTION, AblationSpec::NO_ALIGN]
        .iter()
        .map(|&a| train(&data, &split.train, &cfg, a).unwrap().model.params)
        .collect();
    assert!(models.windows(2).all(|w| w[0] == w[1]));
}

#[test]
fn ground_truth_scores_zero_and_views_average_to_the_aggregate() {
    let data = tiny_profile().generate().unwrap();
    let split = tiny_split().apply(&data);
    let refs: Vec<_> = split.seen.iter().chain(&split.unseen).copied().collect();
    let r = evaluate(&GroundTruthLifter { dim: 1 }, &data, &refs, 3).unwrap();
    assert!(r.rows.iter().all(|m| m.mpjpe == 0.0 && m.pa_mpjpe < 1e-9 && m.accel == 0.0));

    let model = train(&data, &split.train, &tiny_config(), AblationSpec::FULL).unwrap().model;
    let r = evaluate(&model, &data, &refs, 2).unwrap();
    let total: usize = r.per_view.iter().map(|v| v.metrics.frames).sum();
    let weighted = |f: fn(&Aggregate) -> f64| {
        r.per_view.iter().map(|v| f(&v.metrics) * v.metrics.frames as f64).sum::<f64>() / total as f64
    };
    assert!((weighted(|a| a.mpjpe) - r.aggregate.mpjpe).abs() < 1e-9);
    assert!((weighted(|a| a.pa_mpjpe) - r.aggregate.pa_mpjpe).abs() < 1e-9);
    assert!((weighted(|a| a.accel) - r.aggregate.accel).abs() < 1e-9);
    assert!(r.view_cluster_accuracy.is_some() && r.cross_view_variance.is_some());
    // Thread count does not change results.
    assert_eq!(evaluate(&model, &data, &refs, 1).unwrap(), r);
}

#[test]
fn noise_sweep_zero_row_matches_clean_evaluation() {
    let data = tiny_profile().generate().unwrap();
    let split = tiny_split().apply(&data);
    let model = train(&data, &split.train, &tiny_config(), AblationSpec::FULL).unwrap().model;
    let sweep = noise_sweep(&model, &data, &split.unseen, &[0.0, 50.0, 250.0], 4, 1).unwrap();
    let clean = evaluate(&model, &data, &split.unseen, 1).unwrap();
    assert_eq!(sweep.rows[0].mpjpe, clean.aggregate.mpjpe);
    assert_eq!(sweep.rows[0].pa_mpjpe, clean.aggregate.pa_mpjpe);
    assert_eq!(noise_sweep(&model, &data, &split.unseen, &[0.0, 50.0, 250.0], 4, 2).unwrap(), sweep);
    assert!(noise_sweep(&model, &data, &split.unseen, &[10.0, 50.0], 4, 1).is_err());
}

#[test]
fn trend_check_tolerates_small_dips_only() {
    assert!(trend_holds(&[10.0, 12.0, 11.9, 15.0], 0.02));
    assert!(!trend_holds(&[10.0, 12.0, 11.0, 15.0], 0.02));
    assert!(!trend_holds(&[10.0, 10.0], 0.02));
}
