use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use movid_core::geometry::read_dataset;
use movid_core::netcore::EncoderConfig;
use movid_core::trainer::TrainConfig;
use serde_json::Value;
use tempfile::TempDir;

fn movid(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_movid")).args(args).env("MOVID_THREADS", "1").output().expect("spawn movid")
}

fn ok(args: &[&str]) -> Output {
    let out = movid(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn code(args: &[&str]) -> i32 {
    movid(args).status.code().expect("exit code")
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn tiny_config() -> TrainConfig {
    let mut cfg = TrainConfig::desk();
    cfg.model = EncoderConfig { d_view: 8, d_motion: 8, d_base: 8, k: 2, hidden: 8, view_hidden: 8, window: 4, ..Default::default() };
    cfg.optim.epochs = 1;
    cfg.optim.batch_size = 4;
    cfg.optim.clip_len = 8;
    cfg
}

/// A two-seed-per-kind dataset with seed 1 held out for testing.
struct Fixture {
    dir: TempDir,
    data: PathBuf,
    config: PathBuf,
}

const SPLIT: [&str; 2] = ["--test-seed-from", "1"];

impl Fixture {
    fn new() -> Self {
        let dir = TempDir::new().unwrap();
        let data = dir.path().join("data.bin");
        ok(&["gen-data", "--out", s(&data), "--clips", "12", "--views", "8", "--frames", "12", "--noise-px", "1"]);
        let config = dir.path().join("tiny.toml");
        fs::write(&config, tiny_config().to_text()).unwrap();
        Fixture { dir, data, config }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn train(&self, ablation: &str) -> PathBuf {
        let out = self.path(&format!("run-{ablation}"));
        let mut args = vec!["train", "--data", s(&self.data), "--config", s(&self.config), "--ablation", ablation, "--out", s(&out)];
        args.extend(SPLIT);
        ok(&args);
        out
    }
}

#[test]
fn gen_data_is_deterministic_and_counts_views() {
    let f = Fixture::new();
    let again = f.path("again.bin");
    let out = ok(&["gen-data", "--out", s(&again), "--clips", "10", "--views", "8", "--frames", "12", "--noise-px", "1"]);
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert_eq!(stdout.lines().count(), 8);
    assert!(stdout.lines().all(|l| l.contains("10 clips")));
    let copy = f.path("copy.bin");
    ok(&["gen-data", "--out", s(&copy), "--clips", "10", "--views", "8", "--frames", "12", "--noise-px", "1"]);
    assert_eq!(fs::read(&again).unwrap(), fs::read(&copy).unwrap());
    let data = read_dataset::<f64, _>(std::io::BufReader::new(fs::File::open(&again).unwrap())).unwrap();
    assert_eq!(data.len(), 10);
    assert!(data.iter().all(|d| d.views.len() == 8 && d.views.iter().all(|v| v.keypoints.len() == 12)));
    assert!(f.path("again.bin.manifest.json").exists());

    let occluded = f.path("occ.bin");
    ok(&["gen-data", "--out", s(&occluded), "--clips", "2", "--views", "2", "--frames", "4", "--occ-prob", "1.0"]);
    let data = read_dataset::<f64, _>(std::io::BufReader::new(fs::File::open(&occluded).unwrap())).unwrap();
    assert!(data.iter().flat_map(|d| &d.views).flat_map(|v| &v.keypoints).all(|k| k.confidence.iter().all(|&c| c == 0.0)));
}

#[test]
fn usage_errors_exit_one() {
    let dir = TempDir::new().unwrap();
    assert_eq!(code(&["train", "--out", s(dir.path())]), 1);
    assert_eq!(code(&["eval", "--data", "x", "--out", "y"]), 1);
    assert_eq!(code(&["gen-data", "--out", s(&dir.path().join("d.bin")), "--occ-prob", "2"]), 1);
    assert_eq!(code(&["--help"]), 0);
}

#[test]
fn missing_input_files_exit_three() {
    let dir = TempDir::new().unwrap();
    let missing = dir.path().join("nope.bin");
    assert_eq!(code(&["eval", "--data", s(&missing), "--identity", "--out", s(&dir.path().join("e.csv"))]), 3);
}

#[test]
fn train_writes_outputs_and_plumbs_ablation_and_config() {
    let f = Fixture::new();
    let run = f.train("no-projection");
    for name in ["checkpoint.bin", "checkpoint.manifest", "checkpoint.json", "history.csv", "manifest.json"] {
        assert!(run.join(name).exists(), "{name}");
    }
    let manifest = json(&run.join("manifest.json"));
    assert_eq!(manifest["command"], "train");
    assert_eq!(manifest["settings"]["ablation"], "no-projection");
    assert_eq!(manifest["settings"]["config"], serde_json::to_value(tiny_config()).unwrap());
    assert_eq!(manifest["config_hash"].as_str().unwrap().len(), 64);
    let meta = fs::read_to_string(run.join("checkpoint.json")).unwrap();
    assert!(meta.contains("disable_projection\": true"), "{meta}");
    let history = fs::read_to_string(run.join("history.csv")).unwrap();
    assert!(history.starts_with("step,l_pose,l_ortho,l_align,l_total,lr"));

    // Held-out azimuths never appear among the training placements.
    let train_az: Vec<f64> = serde_json::from_value(manifest["settings"]["train_azimuths_deg"].clone()).unwrap();
    let unseen_az: Vec<f64> = serde_json::from_value(manifest["settings"]["unseen_azimuths_deg"].clone()).unwrap();
    assert_eq!(unseen_az, vec![45.0, 225.0]);
    assert!(unseen_az.iter().all(|a| !train_az.contains(a)));

    let mut bad = vec!["train", "--data", s(&f.data), "--config", s(&f.config), "--ablation", "bogus", "--out", "x"];
    bad.extend(SPLIT);
    assert_eq!(code(&bad), 1);
}

#[test]
fn unknown_config_keys_are_rejected() {
    let f = Fixture::new();
    let cfg = f.path("bad.toml");
    fs::write(&cfg, tiny_config().to_text() + "\nmystery = 1\n").unwrap();
    let out = movid(&["train", "--data", s(&f.data), "--config", s(&cfg), "--out", s(&f.path("r"))]);
    assert_ne!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stderr).contains("mystery"));
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path).unwrap().lines().skip(1).map(|l| l.split(',').map(str::to_owned).collect()).collect()
}

#[test]
fn identity_eval_is_zero_and_views_roll_up() {
    let f = Fixture::new();
    let out = f.path("eval.csv");
    let mut args = vec!["eval", "--data", s(&f.data), "--identity", "--split", "test", "--out", s(&out)];
    args.extend(SPLIT);
    ok(&args);
    let rows = csv_rows(&out);
    assert!(rows.iter().all(|r| r[4].parse::<f64>().unwrap() == 0.0 && r[5].parse::<f64>().unwrap() < 1e-9));
    let num = |r: &Vec<String>, i: usize| r[i].parse::<f64>().unwrap();
    let views: Vec<_> = rows.iter().filter(|r| r[0] == "view").collect();
    assert_eq!(views.len(), 8);
    let seq_frames: f64 = rows.iter().filter(|r| r[0] == "sequence").map(|r| num(r, 3)).sum();
    let view_frames: f64 = views.iter().map(|r| num(r, 3)).sum();
    let agg = rows.iter().find(|r| r[0] == "aggregate").unwrap();
    assert_eq!(seq_frames, num(agg, 3));
    assert_eq!(view_frames, num(agg, 3));
    let summary = json(&f.path("eval.summary.json"));
    assert_eq!(summary["aggregate"]["mpjpe"], 0.0);
    assert!(f.path("eval.csv.manifest.json").exists());
}

#[test]
fn trained_eval_is_consistent_and_rejects_mismatched_config() {
    let f = Fixture::new();
    let run = f.train("full");
    let ckpt = run.join("checkpoint");
    let out = f.path("eval.csv");
    let mut args = vec!["eval", "--data", s(&f.data), "--checkpoint", s(&ckpt), "--out", s(&out)];
    args.extend(SPLIT);
    ok(&args);
    let rows = csv_rows(&out);
    let num = |r: &Vec<String>, i: usize| r[i].parse::<f64>().unwrap();
    let views: Vec<_> = rows.iter().filter(|r| r[0] == "view").collect();
    assert_eq!(views.len(), 2);
    let agg = rows.iter().find(|r| r[0] == "aggregate").unwrap();
    let weighted: f64 = views.iter().map(|r| num(r, 4) * num(r, 3)).sum::<f64>() / num(agg, 3);
    assert!((weighted - num(agg, 4)).abs() <= 1e-9 * num(agg, 4).max(1.0));
    assert!(num(agg, 4) > 0.0);

    let wide = f.path("wide.toml");
    let mut cfg = tiny_config();
    cfg.model.hidden = 12;
    fs::write(&wide, cfg.to_text()).unwrap();
    let mut args = vec!["eval", "--data", s(&f.data), "--checkpoint", s(&ckpt), "--config", s(&wide), "--out", s(&out)];
    args.extend(SPLIT);
    assert_eq!(code(&args), 3);
}

#[test]
fn stream_bench_respects_theta() {
    let f = Fixture::new();
    let ckpt = f.train("full").join("checkpoint");
    let bench = |theta: &str, out: &Path| -> Value {
        let mut args = vec![
            "stream-bench", "--data", s(&f.data), "--checkpoint", s(&ckpt), "--theta-flip", theta,
            "--policy-calibration", "2", "--calibration-clips", "3", "--out", s(out),
        ];
        args.extend(SPLIT);
        ok(&args);
        assert!(out.join("frames.csv").exists() && out.join("manifest.json").exists());
        json(&out.join("summary.json"))
    };
    let never = bench("1.0", &f.path("never"));
    assert_eq!(never["activation_rate"], 0.0);
    assert!(never["max_batch_deviation_unrefined"].as_f64().unwrap() <= 1e-9);
    assert_eq!(never["mean_latency_ns"]["flip_extra"], 0.0);
    let always = bench("0.0", &f.path("always"));
    assert_eq!(always["activation_rate"], 1.0);
    assert!(always["mean_latency_ns"]["flip_extra"].as_f64().unwrap() > 0.0);
    assert!(always["mean_latency_ns"]["total"].as_f64().unwrap() > never["mean_latency_ns"]["total"].as_f64().unwrap());
}

#[test]
fn grad_check_reports_each_component_once() {
    let dir = TempDir::new().unwrap();
    ok(&["grad-check", "--out", s(dir.path())]);
    let report = json(&dir.path().join("grad_check.json"));
    let names: Vec<&str> = report.as_array().unwrap().iter().map(|r| r["component"].as_str().unwrap()).collect();
    let mut unique = names.clone();
    unique.sort();
    unique.dedup();
    assert_eq!(unique.len(), names.len());
    assert!(names.contains(&"linear") && names.contains(&"full_model"));
    assert!(report.as_array().unwrap().iter().all(|r| r["passed"] == true));

    assert_eq!(code(&["grad-check", "--tol", "1e-15", "--out", s(dir.path())]), 2);
    assert_eq!(code(&["grad-check", "--component", "nonsense", "--out", s(dir.path())]), 1);
}
