//! `movid`: generate synthetic data, train, evaluate, benchmark streaming
//! inference and check gradients.
//!
//! Exit codes: 0 success, 1 usage, 2 numerical failure, 3 I/O.

mod manifest;

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use manifest::{hash_files, now_unix, RunManifest};
use movid_core::eval::pa_mpjpe;
use movid_core::geometry::{read_dataset, write_dataset, MotionKind, MultiViewSample, NoiseSpec};
use movid_core::netcore::{grad_check, Component, GradCheckReport, Model, DEFAULT_STEP};
use movid_core::streaming::{calibrate_prototypes, oracle_batch, GroundTruthLifter, StageLatency, StreamState};
use movid_core::trainer::{
    evaluate, load_checkpoint, save_checkpoint, train, view_label, write_history_csv, AblationSpec, CheckpointMeta,
    DatasetProfile, EvalReport, SplitSpec, TrainConfig, ViewRef,
};
use movid_core::Error;

#[derive(Parser)]
#[command(name = "movid", version, about = "Motion-view disentangled 3D pose lifting")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render synthetic multi-view clips to a JSON-lines dataset.
    GenData(GenDataArgs),
    /// Train a model and write a checkpoint plus loss history.
    Train(TrainArgs),
    /// Score a checkpoint on a split and write per-view metrics.
    Eval(EvalArgs),
    /// Replay test streams frame by frame and time each stage.
    StreamBench(StreamBenchArgs),
    /// Compare analytic gradients with finite differences.
    GradCheck(GradCheckArgs),
}

#[derive(Args)]
struct GenDataArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 120)]
    clips: usize,
    /// Cameras per elevation ring, evenly spaced in azimuth.
    #[arg(long, default_value_t = 8)]
    views: usize,
    /// Comma-separated elevation rings in degrees.
    #[arg(long, value_delimiter = ',', default_value = "0")]
    elevations: Vec<f64>,
    #[arg(long, default_value_t = 48)]
    frames: usize,
    #[arg(long, default_value_t = 0.0)]
    noise_px: f64,
    #[arg(long, default_value_t = 0.0)]
    occ_prob: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Clone, Serialize)]
struct SplitArgs {
    /// Clips whose motion seed is at least this are test clips.
    #[arg(long, default_value_t = 15)]
    test_seed_from: u64,
    /// Comma-separated azimuths (degrees) withheld from training.
    #[arg(long, value_delimiter = ',', default_value = "45,225")]
    held_out_azimuths: Vec<f64>,
}

impl SplitArgs {
    fn spec(&self) -> SplitSpec {
        SplitSpec { test_seed_from: self.test_seed_from, held_out_azimuths_deg: self.held_out_azimuths.clone() }
    }
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    /// Training configuration; the desk profile when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// full, no-projection, no-ortho, no-align or no-losses.
    #[arg(long, default_value = "full")]
    ablation: String,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    split: SplitArgs,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    data: PathBuf,
    /// Checkpoint stem (the path without `.bin`/`.json`).
    #[arg(long, required_unless_present = "identity")]
    checkpoint: Option<PathBuf>,
    /// Override the checkpoint's model configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// held-out-views, seen-views, test or all.
    #[arg(long, default_value = "held-out-views")]
    split: String,
    /// Score the ground truth against itself instead of a model.
    #[arg(long)]
    identity: bool,
    /// Metrics CSV path.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    split_spec: SplitArgs,
}

#[derive(Args)]
struct StreamBenchArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    theta_flip: f64,
    /// Number of hardest calibration views used as prototypes.
    #[arg(long, default_value_t = 4)]
    policy_calibration: usize,
    /// Training clips used for calibration.
    #[arg(long, default_value_t = 12)]
    calibration_clips: usize,
    /// Cap on replayed test streams.
    #[arg(long)]
    max_streams: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    split: SplitArgs,
}

#[derive(Args)]
struct GradCheckArgs {
    /// `all` or one component name.
    #[arg(long, default_value = "all")]
    component: String,
    #[arg(long, default_value_t = 1e-5)]
    tol: f64,
    /// Tolerance for the linear layer, capped by `--tol`.
    #[arg(long, default_value_t = 1e-9)]
    linear_tol: f64,
    #[arg(long, default_value_t = DEFAULT_STEP)]
    step: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory for the report.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

/// A failure with its exit code.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::NaNLoss { .. } | Error::DegenerateConfiguration(_) | Error::DegenerateBatch(_) => 2,
            Error::Io(_) | Error::Format(_) | Error::CheckpointShapeMismatch(_) => 3,
            _ => 1,
        };
        Failure { code, message: e.to_string() }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure { code: 3, message: e.to_string() }
    }
}

fn usage(message: impl Into<String>) -> Failure {
    Failure { code: 1, message: message.into() }
}

type CmdResult = Result<(), Failure>;

fn workers() -> usize {
    std::env::var("MOVID_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

fn sidecar(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}

fn load_data(path: &Path) -> Result<Vec<MultiViewSample<f64>>, Failure> {
    let file = File::open(path).map_err(|e| Failure { code: 3, message: format!("{}: {e}", path.display()) })?;
    let data = read_dataset(BufReader::new(file))?;
    if data.is_empty() {
        return Err(usage(format!("{} holds no samples", path.display())));
    }
    Ok(data)
}

fn write_csv<R: Serialize>(path: &Path, rows: &[R]) -> CmdResult {
    movid_core::trainer::write_rows_csv(BufWriter::new(File::create(path)?), rows)?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::GenData(a) => gen_data(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::StreamBench(a) => stream_bench(a),
        Command::GradCheck(a) => cmd_grad_check(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn gen_data(a: GenDataArgs) -> CmdResult {
    let started = now_unix();
    if a.clips == 0 || a.views == 0 || a.elevations.is_empty() {
        return Err(usage("--clips, --views and --elevations must be non-empty"));
    }
    if a.frames < 2 {
        return Err(usage("--frames must be at least 2"));
    }
    if !(0.0..=1.0).contains(&a.occ_prob) || !(a.noise_px >= 0.0) {
        return Err(usage("--occ-prob must lie in [0, 1] and --noise-px be non-negative"));
    }
    let profile = DatasetProfile {
        kinds: MotionKind::ALL.to_vec(),
        seeds_per_kind: a.clips.div_ceil(MotionKind::ALL.len()),
        frames_per_clip: a.frames,
        azimuths_deg: (0..a.views).map(|i| 360.0 * i as f64 / a.views as f64).collect(),
        elevations_deg: a.elevations.clone(),
        noise: NoiseSpec { sigma_px: a.noise_px, occlusion_prob: a.occ_prob },
        seed: a.seed,
    };
    let data = profile.generate_clips(a.clips)?;
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let mut w = BufWriter::new(File::create(&a.out)?);
    write_dataset(&data, &mut w)?;
    w.flush()?;
    for cam in &data[0].views {
        println!("{}: {} clips x {} frames", view_label(cam.camera.azimuth, cam.camera.elevation), data.len(), a.frames);
    }
    let mut m = RunManifest::new("gen-data", serde_json::to_value(&profile).expect("profile"), a.seed, hash_files(&[])?, started);
    m.settings["clips"] = json!(a.clips);
    m.outputs.push(a.out.clone());
    m.write(&sidecar(&a.out))?;
    Ok(())
}

fn cmd_train(a: TrainArgs) -> CmdResult {
    let started = now_unix();
    let ablation: AblationSpec = a.ablation.parse()?;
    let config = match &a.config {
        Some(p) => TrainConfig::from_text(&fs::read_to_string(p)?)?,
        None => TrainConfig::desk(),
    };
    let data = load_data(&a.data)?;
    let spec = a.split.spec();
    let split = spec.apply(&data);
    if split.train.is_empty() {
        return Err(usage("the split leaves no training sequences"));
    }
    let outcome = train(&data, &split.train, &config, ablation)?;
    fs::create_dir_all(&a.out)?;
    let stem = a.out.join("checkpoint");
    save_checkpoint(&stem, &outcome.model, &CheckpointMeta { config: config.clone(), ablation })?;
    let history = a.out.join("history.csv");
    write_history_csv(BufWriter::new(File::create(&history)?), &outcome.history)?;
    let last = outcome.history.last().expect("at least one step");
    println!("{} steps, final l_total {:.6} (l_pose {:.6})", outcome.history.len(), last.l_total, last.l_pose);

    let azimuths = |refs: &[ViewRef]| {
        let mut az: Vec<f64> =
            refs.iter().map(|&(s, v)| data[s].views[v].camera.azimuth.to_degrees().round()).collect();
        az.sort_by(f64::total_cmp);
        az.dedup();
        az
    };
    let settings = json!({
        "config": config,
        "ablation": ablation.name(),
        "split": a.split,
        "train_azimuths_deg": azimuths(&split.train),
        "unseen_azimuths_deg": azimuths(&split.unseen),
    });
    let mut m = RunManifest::new("train", settings, config.optim.seed, hash_files(&[&a.data])?, started);
    m.outputs.extend(["bin", "manifest", "json"].map(|e| stem.with_extension(e)));
    m.outputs.push(history);
    m.write(&a.out.join("manifest.json"))?;
    Ok(())
}

fn select(split_name: &str, data: &[MultiViewSample<f64>], spec: &SplitSpec) -> Result<Vec<ViewRef>, Failure> {
    let s = spec.apply(data);
    let refs = match split_name {
        "held-out-views" => s.unseen,
        "seen-views" => s.seen,
        "test" => s.seen.into_iter().chain(s.unseen).collect(),
        "all" => (0..data.len()).flat_map(|i| (0..data[i].views.len()).map(move |v| (i, v))).collect(),
        other => return Err(usage(format!("unknown split `{other}`"))),
    };
    if refs.is_empty() {
        return Err(usage(format!("split `{split_name}` selects no sequences")));
    }
    Ok(refs)
}

#[derive(Serialize)]
struct EvalCsvRow<'a> {
    scope: &'a str,
    sample_id: &'a str,
    view_id: &'a str,
    frames: usize,
    mpjpe: f64,
    pa_mpjpe: f64,
    accel: f64,
}

fn eval_rows(r: &EvalReport) -> Vec<EvalCsvRow<'_>> {
    let mut rows: Vec<EvalCsvRow> = r
        .rows
        .iter()
        .zip(&r.frames)
        .map(|(m, &frames)| EvalCsvRow {
            scope: "sequence",
            sample_id: &m.sample_id,
            view_id: &m.view_id,
            frames,
            mpjpe: m.mpjpe,
            pa_mpjpe: m.pa_mpjpe,
            accel: m.accel,
        })
        .collect();
    for v in &r.per_view {
        let m = &v.metrics;
        rows.push(EvalCsvRow {
            scope: "view",
            sample_id: "*",
            view_id: &v.view_id,
            frames: m.frames,
            mpjpe: m.mpjpe,
            pa_mpjpe: m.pa_mpjpe,
            accel: m.accel,
        });
    }
    let m = &r.aggregate;
    rows.push(EvalCsvRow {
        scope: "aggregate",
        sample_id: "*",
        view_id: "*",
        frames: m.frames,
        mpjpe: m.mpjpe,
        pa_mpjpe: m.pa_mpjpe,
        accel: m.accel,
    });
    rows
}

fn cmd_eval(a: EvalArgs) -> CmdResult {
    let started = now_unix();
    let data = load_data(&a.data)?;
    let spec = a.split_spec.spec();
    let refs = select(&a.split, &data, &spec)?;
    let (report, seed) = if a.identity {
        (evaluate(&GroundTruthLifter { dim: 1 }, &data, &refs, workers())?, 0)
    } else {
        let stem = a.checkpoint.as_ref().expect("clap enforces --checkpoint");
        let (mut model, meta) = load_checkpoint(stem)?;
        if let Some(p) = &a.config {
            let cfg = TrainConfig::from_text(&fs::read_to_string(p)?)?;
            let project = model.project;
            model = Model::from_params(cfg.model, model.params)?;
            model.project = project;
        }
        (evaluate(&model, &data, &refs, workers())?, meta.config.optim.seed)
    };
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    write_csv(&a.out, &eval_rows(&report))?;
    let summary = json!({
        "split": a.split,
        "sequences": refs.len(),
        "aggregate": report.aggregate,
        "per_view": report.per_view,
        "view_cluster_accuracy": report.view_cluster_accuracy,
        "cross_view_variance": report.cross_view_variance,
    });
    let summary_path = a.out.with_extension("summary.json");
    fs::write(&summary_path, serde_json::to_string_pretty(&summary).expect("summary") + "\n")?;
    println!(
        "{} sequences: mpjpe {:.3} mm, pa_mpjpe {:.3} mm, accel {:.3}",
        refs.len(),
        report.aggregate.mpjpe,
        report.aggregate.pa_mpjpe,
        report.aggregate.accel
    );
    let ckpt_files: Vec<PathBuf> = a.checkpoint.iter().map(|s| s.with_extension("bin")).collect();
    let hashed: Vec<&Path> = std::iter::once(a.data.as_path()).chain(ckpt_files.iter().map(|p| p.as_path())).collect();
    let settings = json!({ "split": a.split, "split_spec": a.split_spec, "identity": a.identity, "config": a.config });
    let mut m = RunManifest::new("eval", settings, seed, hash_files(&hashed)?, started);
    m.outputs = vec![a.out.clone(), summary_path];
    m.write(&sidecar(&a.out))?;
    Ok(())
}

#[derive(Serialize)]
struct FrameRow {
    sample_id: String,
    view_id: String,
    frame: usize,
    difficulty: f64,
    flip_activated: bool,
    encode_ns: u64,
    viewfeat_ns: u64,
    project_ns: u64,
    decode_ns: u64,
    flip_extra_ns: u64,
    total_ns: u64,
    /// Largest coordinate gap to the whole-sequence oracle, in meters.
    batch_deviation: f64,
    pa_mpjpe: f64,
}

fn stream_bench(a: StreamBenchArgs) -> CmdResult {
    let started = now_unix();
    if !a.theta_flip.is_finite() {
        return Err(usage("--theta-flip must be finite"));
    }
    let data = load_data(&a.data)?;
    let (model, meta) = load_checkpoint(&a.checkpoint)?;
    let model = Arc::new(model);
    let spec = a.split.spec();
    let split = spec.apply(&data);

    let mut calib_ids: Vec<usize> = split.train.iter().map(|r| r.0).collect();
    calib_ids.dedup();
    calib_ids.truncate(a.calibration_clips.max(1));
    if calib_ids.is_empty() {
        return Err(usage("no training clips to calibrate on"));
    }
    // Calibrate on seen placements only.
    let calib: Vec<MultiViewSample<f64>> = calib_ids
        .iter()
        .map(|&i| {
            let mut s = data[i].clone();
            s.views.retain(|v| !spec.is_held_out(&v.camera));
            s
        })
        .collect();
    let calibration = calibrate_prototypes(model.as_ref(), &calib, a.policy_calibration, a.theta_flip)?;

    let mut streams: Vec<ViewRef> = split.seen.iter().chain(&split.unseen).copied().collect();
    if streams.is_empty() {
        return Err(usage("the split leaves no test streams"));
    }
    if let Some(n) = a.max_streams {
        streams.truncate(n.max(1));
    }
    let mut rows = Vec::new();
    let (mut sum, mut sum_on, mut sum_off) = (StageLatency::default(), 0u64, 0u64);
    let (mut n_on, mut max_dev_off) = (0usize, 0.0f64);
    for &(s, v) in &streams {
        let rec = &data[s].views[v];
        let oracle = oracle_batch(model.as_ref(), &rec.keypoints, rec.camera.image_size)?;
        let mut state = StreamState::new(Arc::clone(&model), calibration.policy.clone());
        for (f, kp) in rec.keypoints.iter().enumerate() {
            let out = state.push_frame(kp, rec.camera.image_size)?;
            let dev = out
                .refined
                .to_flat()
                .iter()
                .zip(oracle.refined[f].to_flat())
                .map(|(x, y)| (x - y).abs())
                .fold(0.0, f64::max);
            let gt = data[s].clip.frames[f].root_relative();
            let pa = pa_mpjpe(std::slice::from_ref(&out.refined), std::slice::from_ref(&gt))?;
            let l = out.latency;
            sum.encode += l.encode;
            sum.viewfeat += l.viewfeat;
            sum.project += l.project;
            sum.decode += l.decode;
            sum.flip_extra += l.flip_extra;
            if out.flip_activated {
                n_on += 1;
                sum_on += l.total();
            } else {
                sum_off += l.total();
                max_dev_off = max_dev_off.max(dev);
            }
            rows.push(FrameRow {
                sample_id: data[s].clip.motion_id.clone(),
                view_id: view_label(rec.camera.azimuth, rec.camera.elevation),
                frame: f,
                difficulty: out.difficulty,
                flip_activated: out.flip_activated,
                encode_ns: l.encode,
                viewfeat_ns: l.viewfeat,
                project_ns: l.project,
                decode_ns: l.decode,
                flip_extra_ns: l.flip_extra,
                total_ns: l.total(),
                batch_deviation: dev,
                pa_mpjpe: pa,
            });
        }
    }
    fs::create_dir_all(&a.out)?;
    let frames_csv = a.out.join("frames.csv");
    write_csv(&frames_csv, &rows)?;
    let n = rows.len() as f64;
    let mean = |x: u64| x as f64 / n;
    let n_off = rows.len() - n_on;
    let summary = json!({
        "frames": rows.len(),
        "streams": streams.len(),
        "theta_flip": a.theta_flip,
        "activation_rate": n_on as f64 / n,
        "mean_latency_ns": {
            "encode": mean(sum.encode),
            "viewfeat": mean(sum.viewfeat),
            "project": mean(sum.project),
            "decode": mean(sum.decode),
            "flip_extra": mean(sum.flip_extra),
            "total": mean(sum.total()),
        },
        "mean_total_refined_ns": (n_on > 0).then(|| sum_on as f64 / n_on as f64),
        "mean_total_unrefined_ns": (n_off > 0).then(|| sum_off as f64 / n_off as f64),
        "max_batch_deviation_unrefined": (n_off > 0).then_some(max_dev_off),
        "mean_pa_mpjpe": rows.iter().map(|r| r.pa_mpjpe).sum::<f64>() / n,
        "hard_views": calibration.ranking.iter().take(a.policy_calibration)
            .map(|e| format!("az{:03}_el{:02}", e.azimuth_deg.round() as i64, e.elevation_deg.round() as i64))
            .collect::<Vec<_>>(),
    });
    let summary_path = a.out.join("summary.json");
    fs::write(&summary_path, serde_json::to_string_pretty(&summary).expect("summary") + "\n")?;
    println!(
        "{} frames, activation rate {:.4}, mean latency {:.1} us",
        rows.len(),
        n_on as f64 / n,
        mean(sum.total()) / 1e3
    );
    let settings = json!({
        "theta_flip": a.theta_flip,
        "policy_calibration": a.policy_calibration,
        "calibration_clips": a.calibration_clips,
        "max_streams": a.max_streams,
        "split": a.split,
    });
    let bin = a.checkpoint.with_extension("bin");
    let mut m = RunManifest::new("stream-bench", settings, meta.config.optim.seed, hash_files(&[&a.data, &bin])?, started);
    m.outputs = vec![frames_csv, summary_path];
    m.write(&a.out.join("manifest.json"))?;
    Ok(())
}

fn cmd_grad_check(a: GradCheckArgs) -> CmdResult {
    let started = now_unix();
    let components: Vec<Component> = if a.component == "all" {
        Component::ALL.to_vec()
    } else {
        vec![a.component.parse().map_err(|e: Error| usage(e.to_string()))?]
    };
    if !(a.tol > 0.0) || !(a.step > 0.0) {
        return Err(usage("--tol and --step must be positive"));
    }
    let reports: Vec<GradCheckReport> = components
        .iter()
        .map(|&c| {
            let tol = if c == Component::Linear { a.tol.min(a.linear_tol) } else { a.tol };
            grad_check(c, a.seed, a.step, tol)
        })
        .collect();
    let mut rows = Vec::new();
    for r in &reports {
        println!(
            "{:<16} max_rel_err {:.3e} tol {:.0e} {}{}",
            r.component.name(),
            r.max_rel_err,
            r.tol,
            if r.passed { "PASS" } else { "FAIL" },
            r.offending_param.as_deref().map(|p| format!(" worst {p}")).unwrap_or_default()
        );
        rows.push(json!({
            "component": r.component.name(),
            "max_rel_err": r.max_rel_err,
            "offending_param": r.offending_param,
            "checked": r.checked,
            "tol": r.tol,
            "passed": r.passed,
        }));
    }
    fs::create_dir_all(&a.out)?;
    let report_path = a.out.join("grad_check.json");
    fs::write(&report_path, serde_json::to_string_pretty(&rows).expect("report") + "\n")?;
    let settings = json!({ "component": a.component, "tol": a.tol, "linear_tol": a.linear_tol, "step": a.step });
    let mut m = RunManifest::new("grad-check", settings, a.seed, hash_files(&[])?, started);
    m.outputs.push(report_path.clone());
    m.write(&sidecar(&report_path))?;
    let failed = reports.iter().filter(|r| !r.passed).count();
    if failed > 0 {
        return Err(Failure { code: 2, message: format!("{failed} of {} gradient checks failed", reports.len()) });
    }
    Ok(())
}
