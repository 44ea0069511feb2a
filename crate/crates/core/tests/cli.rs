use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use fgdiff::cli::{run, EXIT_CHECKPOINT, EXIT_OK, EXIT_TRAINING, EXIT_USAGE};
use fgdiff::evaluation::{read_score_file, EvalReport};
use fgdiff::motion_data::{load_trajectories, synth_corpus, SynthConfig};

fn fgdiff(args: &[&str]) -> i32 {
    let mut full = vec!["fgdiff"];
    full.extend_from_slice(args);
    run(full)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Small corpus and model settings so a train + eval round takes seconds.
const TINY: &str = "\
n_videos = 6
anomaly_ratio = 0.5
frames_per_video = 32
N = 12
J = 5
stride = 4
holdout_every = 2
max_iters = 6
batch_size = 8
predictor_width = 8
predictor_depth = 1
generator_width = 4
generator_depth = 1
eval_batch_size = 64
";

struct Run {
    dir: tempfile::TempDir,
}

impl Run {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("tiny.toml"), TINY).unwrap();
        Self { dir }
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }

    fn config(&self) -> String {
        s(&self.path("tiny.toml")).to_string()
    }

    fn synth(&self) -> PathBuf {
        let data = self.path("data");
        assert_eq!(fgdiff(&["synth", "--config", &self.config(), "--seed", "1", "--out", s(&data)]), EXIT_OK);
        data
    }

    fn train(&self, data: &Path, out: &str, extra: &[&str]) -> i32 {
        let out = self.path(out);
        let cfg = self.config();
        let mut args = vec!["train", "--config", &cfg, "--seed", "2", "--data", s(data), "--out", s(&out)];
        args.extend_from_slice(extra);
        let args: Vec<String> = args.iter().map(|a| a.to_string()).collect();
        fgdiff(&args.iter().map(String::as_str).collect::<Vec<_>>())
    }
}

#[test]
fn synth_writes_requested_anomaly_count() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("c");
    let code = fgdiff(&[
        "synth", "--seed", "3", "--out", s(&out), "--set", "n_videos=4", "--set", "anomaly_ratio=0.5",
    ]);
    assert_eq!(code, EXIT_OK);
    let labels = out.join("labels");
    let mut anomalous = 0;
    for e in fs::read_dir(&labels).unwrap() {
        let text = fs::read_to_string(e.unwrap().path()).unwrap();
        if text.lines().any(|l| l.trim() == "1") {
            anomalous += 1;
        }
    }
    assert_eq!(anomalous, 2);
}

fn dir_contents(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn synth_is_reproducible_and_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        assert_eq!(fgdiff(&["synth", "--seed", "5", "--out", s(out), "--set", "n_videos=6"]), EXIT_OK);
    }
    assert_eq!(dir_contents(&a), dir_contents(&b));

    let cfg = SynthConfig {
        n_videos: 6,
        ..SynthConfig::default()
    };
    let expected = synth_corpus(&cfg, 5).unwrap();
    let loaded = load_trajectories(&a, cfg.window_length, cfg.stride).unwrap();
    assert_eq!(loaded.windows, expected.windows);
    assert_eq!(loaded.frame_labels, expected.frame_labels);
    assert_eq!(loaded.frames_per_video, expected.frames_per_video);
}

#[test]
fn synth_to_unwritable_dir_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    fs::write(&blocker, "x").unwrap();
    let out = blocker.join("corpus");
    assert_eq!(fgdiff(&["synth", "--out", s(&out), "--set", "n_videos=2"]), EXIT_USAGE);
}

#[test]
fn missing_data_dir_names_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_fgdiff"))
        .args(["train", "--out", s(dir.path())])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(EXIT_USAGE));
    assert!(String::from_utf8_lossy(&out.stderr).contains("data_dir"));
}

#[test]
fn unknown_key_and_bad_flags_are_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "seed = 1\nlearning_rate = 0.1\n").unwrap();
    assert_eq!(fgdiff(&["train", "--config", s(&cfg)]), EXIT_USAGE);
    assert_eq!(fgdiff(&["train", "--set", "bogus=1"]), EXIT_USAGE);
    assert_eq!(fgdiff(&["train", "--seed", "minus-one"]), EXIT_USAGE);
    assert_eq!(fgdiff(&["frobnicate"]), EXIT_USAGE);
    assert_eq!(fgdiff(&["train", "--config", s(&dir.path().join("absent.toml"))]), EXIT_USAGE);
}

#[test]
fn invalid_thread_cap_is_usage_error() {
    let out = Command::new(env!("CARGO_BIN_EXE_fgdiff"))
        .args(["synth", "--set", "n_videos=2"])
        .env("FGDIFF_NUM_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(EXIT_USAGE));
    assert!(String::from_utf8_lossy(&out.stderr).contains("FGDIFF_NUM_THREADS"));
}

#[test]
fn divergent_training_exits_three() {
    let r = Run::new();
    let data = r.synth();
    assert_eq!(r.train(&data, "div", &["--set", "lr_base=1e30"]), EXIT_TRAINING);
}

#[test]
fn train_writes_log_and_checkpoint_with_echo() {
    let r = Run::new();
    let data = r.synth();
    assert_eq!(r.train(&data, "run", &[]), EXIT_OK);
    let log = fs::read_to_string(r.path("run/metrics.log")).unwrap();
    let mut lines = log.lines();
    assert_eq!(lines.next(), Some("iter,loss_theta,loss_phi,lr"));
    assert_eq!(lines.count(), 6);
    let ck: serde_json::Value = serde_json::from_str(&fs::read_to_string(r.path("run/checkpoint.json")).unwrap()).unwrap();
    assert_eq!(ck["lambda_p"], 0.1);
    assert_eq!(ck["config_echo"]["config"]["max_iters"], 6);
    assert_eq!(ck["config_echo"]["train"]["seed"], 2);
}

fn report(path: &Path) -> EvalReport {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn eval_reports_per_intensity_and_echoes_lambda_dct() {
    let r = Run::new();
    let data = r.synth();
    assert_eq!(r.train(&data, "run", &["--set", "lambda_dct=0.3"]), EXIT_OK);
    let ck = r.path("run/checkpoint.json");
    let eval = |out: &str, extra: &[&str]| {
        let out = r.path(out);
        let cfg = r.config();
        let mut args = vec!["eval", "--config", &cfg, "--data", s(&data), "--checkpoint", s(&ck), "--out", s(&out)];
        args.extend_from_slice(extra);
        let args: Vec<String> = args.iter().map(|a| a.to_string()).collect();
        fgdiff(&args.iter().map(String::as_str).collect::<Vec<_>>())
    };

    let start = Instant::now();
    assert_eq!(eval("e1", &["--lambda-pi", "0.0"]), EXIT_OK);
    assert!(start.elapsed().as_secs_f64() < 60.0);
    let reports: Vec<_> = fs::read_dir(r.path("e1/eval")).unwrap().filter_map(|e| {
        let p = e.unwrap().path();
        p.is_dir().then_some(p)
    }).collect();
    assert_eq!(reports.len(), 1);
    let rep = report(&r.path("e1/eval/lambda_pi_0/report.json"));
    assert_eq!(rep.config_echo.lambda_dct, 0.3);
    assert!((0.0..=1.0).contains(&rep.auc));

    assert_eq!(eval("e2", &["--lambda-pi", "0,0.05", "--set", "lambda_dct=0.5"]), EXIT_OK);
    let a = report(&r.path("e2/eval/lambda_pi_0/report.json"));
    let b = report(&r.path("e2/eval/lambda_pi_0.05/report.json"));
    assert_eq!((a.config_echo.lambda_dct, b.lambda_pi), (0.5, 0.05));
    let summary = fs::read_to_string(r.path("e2/eval/summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 3);

    let scores = r.path("e1/eval/lambda_pi_0/scores");
    let first = fs::read_dir(&scores).unwrap().next().unwrap().unwrap().path();
    assert!(read_score_file(&first).unwrap().labels.is_some());
}

#[test]
fn eval_rejects_incompatible_checkpoint() {
    let r = Run::new();
    let data = r.synth();
    assert_eq!(r.train(&data, "run", &[]), EXIT_OK);
    let ck = r.path("run/checkpoint.json");
    let mut json: serde_json::Value = serde_json::from_str(&fs::read_to_string(&ck).unwrap()).unwrap();
    json["version"] = serde_json::Value::String("999".into());
    let old = r.path("old.json");
    fs::write(&old, serde_json::to_string(&json).unwrap()).unwrap();
    let out = r.path("e");
    let code = fgdiff(&["eval", "--config", &r.config(), "--data", s(&data), "--checkpoint", s(&old), "--out", s(&out)]);
    assert_eq!(code, EXIT_CHECKPOINT);
    let missing = fgdiff(&["eval", "--config", &r.config(), "--data", s(&data), "--out", s(&out)]);
    assert_eq!(missing, EXIT_USAGE);
}

#[test]
fn score_and_plot() {
    let r = Run::new();
    let data = r.synth();
    assert_eq!(r.train(&data, "run", &[]), EXIT_OK);
    let ck = r.path("run/checkpoint.json");
    let out = r.path("sc");
    let code = fgdiff(&["score", "--config", &r.config(), "--data", s(&data), "--checkpoint", s(&ck), "--out", s(&out)]);
    assert_eq!(code, EXIT_OK);
    let scores = out.join("scores");
    assert!(fs::read_dir(&scores).unwrap().count() > 0);

    let plots = r.path("plots");
    assert_eq!(fgdiff(&["plot", "--out", s(&plots), s(&scores)]), EXIT_OK);
    let svgs: Vec<_> = fs::read_dir(&plots).unwrap().map(|e| e.unwrap().path()).collect();
    assert_eq!(svgs.len(), fs::read_dir(&scores).unwrap().count());
    let shaded = svgs
        .iter()
        .filter(|p| fs::read_to_string(p).unwrap().to_uppercase().contains("#FFC8C8"))
        .count();
    assert!(shaded > 0, "anomalous videos must show shaded spans");
}

#[test]
fn plot_shading_follows_labels() {
    let dir = tempfile::tempdir().unwrap();
    let labeled = dir.path().join("with.csv");
    fs::write(&labeled, "frame_idx,score,label\n0,0.1,0\n1,0.9,1\n2,0.8,1\n3,0.2,0\n").unwrap();
    let plain = dir.path().join("without.csv");
    fs::write(&plain, "frame_idx,score\n0,0.1\n1,0.9\n2,0.8\n").unwrap();
    let out = dir.path().join("p");
    assert_eq!(fgdiff(&["plot", "--out", s(&out), s(&labeled), s(&plain)]), EXIT_OK);
    let with = fs::read_to_string(out.join("with.svg")).unwrap().to_uppercase();
    let without = fs::read_to_string(out.join("without.svg")).unwrap().to_uppercase();
    assert!(with.contains("#FFC8C8"));
    assert!(!without.contains("#FFC8C8"));
    assert!(without.contains("<POLYLINE") || without.contains("<PATH"));
}

#[test]
fn plot_rejects_empty_or_malformed_files() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.csv");
    fs::write(&empty, "").unwrap();
    let out = dir.path().join("p");
    assert_eq!(fgdiff(&["plot", "--out", s(&out), s(&empty)]), EXIT_USAGE);
    let bad = dir.path().join("bad.csv");
    fs::write(&bad, "frame_idx,score\n0,x\n").unwrap();
    assert_eq!(fgdiff(&["plot", "--out", s(&out), s(&bad)]), EXIT_USAGE);
    assert_eq!(fgdiff(&["plot", "--out", s(&out)]), EXIT_USAGE);
}

#[test]
fn train_and_eval_are_deterministic() {
    let r = Run::new();
    let data = r.synth();
    for run in ["a", "b"] {
        assert_eq!(r.train(&data, run, &[]), EXIT_OK);
        let ck = r.path(&format!("{run}/checkpoint.json"));
        let out = r.path(&format!("{run}/ev"));
        let code = fgdiff(&[
            "eval", "--config", &r.config(), "--data", s(&data), "--checkpoint", s(&ck), "--out", s(&out), "--lambda-pi", "0,0.1",
        ]);
        assert_eq!(code, EXIT_OK);
    }
    assert_eq!(fs::read(r.path("a/metrics.log")).unwrap(), fs::read(r.path("b/metrics.log")).unwrap());
    assert_eq!(dir_contents(&r.path("a/ev")), dir_contents(&r.path("b/ev")));
}
