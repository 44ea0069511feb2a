//! Command-line entry point.
//!
//! Exit codes: 0 success, 1 unexpected runtime failure, 2 usage or
//! configuration error (including unreadable inputs and unwritable
//! outputs), 3 training failure or divergence, 4 incompatible checkpoint.

use std::collections::BTreeSet;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::checkpoint::Checkpoint;
use crate::config::{RunConfig, DEFAULT_LAMBDA_DCT};
use crate::error::Error;
use crate::evaluation::{evaluate, InferenceConfig, read_score_file, score_corpus, write_score_file, ScoreSeries};
use crate::motion_data::{load_trajectories_with, synth_corpus, write_corpus, TrajectoryCorpus};
use crate::networks::train;
use crate::plot::plot_series;

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_TRAINING: i32 = 3;
pub const EXIT_CHECKPOINT: i32 = 4;

/// Caps worker threads; forwarded to the tensor backend's thread pool.
pub const THREADS_ENV: &str = "FGDIFF_NUM_THREADS";

#[derive(Debug, Parser)]
#[command(name = "fgdiff", version, about = "Frequency-guided diffusion for skeleton anomaly detection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Args)]
struct Common {
    /// Flat TOML config file.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    #[arg(long, value_name = "INT")]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Trajectory corpus directory.
    #[arg(long, value_name = "DIR")]
    data: Option<PathBuf>,
    /// Overrides any config key, e.g. `--set lambda_p=0.05`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Trains the noise predictor and perturbation generator.
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Evaluates a checkpoint on a labeled corpus, once per intensity.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "PATH")]
        checkpoint: Option<PathBuf>,
        /// Comma-separated inference perturbation intensities.
        #[arg(long = "lambda-pi", value_name = "LIST", value_delimiter = ',')]
        lambda_pi: Option<Vec<f64>>,
    },
    /// Writes frame scores for a corpus, labeled or not.
    Score {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "PATH")]
        checkpoint: Option<PathBuf>,
        #[arg(long = "lambda-pi", value_name = "VALUE")]
        lambda_pi: Option<f64>,
    },
    /// Writes a synthetic labeled corpus.
    Synth {
        #[command(flatten)]
        common: Common,
    },
    /// Renders score files (or directories of them) as SVG curves.
    Plot {
        #[command(flatten)]
        common: Common,
        #[arg(value_name = "SCORE_FILE")]
        inputs: Vec<PathBuf>,
    },
}

/// Failure carrying its exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn usage(msg: impl std::fmt::Display) -> Self {
        Self {
            code: EXIT_USAGE,
            message: msg.to_string(),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Config(_)
            | Error::InvalidArgument(_)
            | Error::Parse { .. }
            | Error::Io { .. }
            | Error::EmptyCorpus(_)
            | Error::ShapeMismatch { .. } => EXIT_USAGE,
            Error::Checkpoint(_) | Error::CheckpointVersion { .. } => EXIT_CHECKPOINT,
            _ => EXIT_RUNTIME,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

/// Parses `args` (program name first), runs the command and returns the
/// exit code. Messages go to stderr, summaries to stdout.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    if let Err(e) = apply_thread_cap() {
        eprintln!("error: {}", e.message);
        return e.code;
    }
    let result = match cli.command {
        Command::Train { common } => cmd_train(&common),
        Command::Eval {
            common,
            checkpoint,
            lambda_pi,
        } => cmd_eval(&common, checkpoint, lambda_pi),
        Command::Score {
            common,
            checkpoint,
            lambda_pi,
        } => cmd_score(&common, checkpoint, lambda_pi),
        Command::Synth { common } => cmd_synth(&common),
        Command::Plot { common, inputs } => cmd_plot(&common, &inputs),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {}", e.message);
            e.code
        }
    }
}

fn apply_thread_cap() -> CliResult<()> {
    if let Ok(v) = std::env::var(THREADS_ENV) {
        match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => std::env::set_var("RAYON_NUM_THREADS", n.to_string()),
            _ => return Err(CliError::usage(format!("{THREADS_ENV} must be a positive integer, got {v:?}"))),
        }
    }
    Ok(())
}

/// Default, then config file, then `--set` assignments, then dedicated flags.
fn resolve(common: &Common, extra: RunConfig) -> CliResult<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::from_file(p)?,
        None => RunConfig::default(),
    };
    for kv in &common.set {
        cfg = cfg.overlay(&RunConfig::assignment(kv)?);
    }
    let flags = RunConfig {
        seed: common.seed,
        out_dir: common.out.clone(),
        data_dir: common.data.clone(),
        ..extra
    };
    Ok(cfg.overlay(&flags))
}

fn create_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::usage(format!("out_dir: cannot create {}: {e}", dir.display())))
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(|e| CliError::usage(format!("cannot write {}: {e}", path.display())))
}

fn load_corpus(cfg: &RunConfig, frames: Option<usize>, channels: Option<usize>, joints: Option<usize>) -> CliResult<TrajectoryCorpus> {
    let dir = cfg.require_data_dir()?;
    let mut opts = cfg.load_options()?;
    if let Some(n) = frames {
        if cfg.window_length.is_some_and(|w| w != n) {
            return Err(CliError::usage(format!("window_length must match the checkpoint's {n}")));
        }
        opts.window_length = n;
    }
    if let Some(c) = channels {
        opts.channels = c;
    }
    if joints.is_some() {
        opts.joints = joints;
    }
    Ok(load_trajectories_with(&dir, &opts)?)
}

/// Normal videos for training: the non-held-out share when splitting, else
/// every video not labeled anomalous.
fn training_part(cfg: &RunConfig, corpus: &TrajectoryCorpus) -> CliResult<TrajectoryCorpus> {
    let stride = corpus.stride;
    if cfg.holdout_every() > 0 {
        return Ok(corpus.split_train_test(cfg.holdout_every(), stride, cfg.test_stride()?)?.0);
    }
    let normal: BTreeSet<String> = corpus
        .video_ids()
        .into_iter()
        .filter(|v| corpus.is_normal_video(v))
        .collect();
    if normal.is_empty() {
        return Err(CliError::usage("data_dir holds no normal videos to train on"));
    }
    Ok(corpus.subset(&normal, stride)?)
}

fn testing_part(cfg: &RunConfig, corpus: &TrajectoryCorpus) -> CliResult<TrajectoryCorpus> {
    let stride = cfg.test_stride()?;
    if cfg.holdout_every() > 0 && corpus.has_labels() {
        return Ok(corpus.split_train_test(cfg.holdout_every(), corpus.stride, stride)?.1);
    }
    Ok(corpus.rewindow(stride)?)
}

fn cmd_train(common: &Common) -> CliResult<()> {
    let cfg = resolve(common, RunConfig::default())?;
    let train_cfg = cfg.train_config()?;
    let lambda_dct = cfg.lambda_dct.unwrap_or(DEFAULT_LAMBDA_DCT);
    let corpus = load_corpus(&cfg, None, None, None)?;
    let part = training_part(&cfg, &corpus)?;
    let out = cfg.out_dir();
    create_dir(&out)?;

    let outcome = train(&part, &train_cfg).map_err(|e| match e {
        Error::Config(_) | Error::InvalidArgument(_) => CliError::from(e),
        other => CliError {
            code: EXIT_TRAINING,
            message: other.to_string(),
        },
    })?;
    write_text(&out.join("metrics.log"), &outcome.history.to_log())?;
    let echo = serde_json::json!({ "config": cfg, "train": train_cfg });
    let ck = Checkpoint::from_models(
        &outcome.predictor,
        &outcome.generator,
        train_cfg.schedule,
        train_cfg.lambda_p,
        lambda_dct,
        outcome.k,
        echo,
    )?;
    let path = out.join("checkpoint.json");
    ck.save(&path)?;
    let last = outcome.history.records.last().map(|r| r.loss_theta).unwrap_or(f64::NAN);
    println!(
        "trained {} iterations on {} windows; final loss {last:.6}; checkpoint {}",
        outcome.history.records.len(),
        part.windows.len(),
        path.display()
    );
    Ok(())
}

fn load_checkpoint(cfg: &RunConfig) -> CliResult<Checkpoint> {
    Ok(Checkpoint::load(&cfg.require_checkpoint()?)?)
}

/// File-system friendly rendering of an intensity, e.g. `0.05`.
fn intensity_tag(l: f64) -> String {
    format!("lambda_pi_{l}")
}

fn write_series(dir: &Path, series: &[ScoreSeries]) -> CliResult<()> {
    create_dir(dir)?;
    for s in series {
        write_score_file(&dir.join(format!("{}.csv", s.video_id)), s)?;
    }
    Ok(())
}

fn cmd_eval(common: &Common, checkpoint: Option<PathBuf>, lambda_pi: Option<Vec<f64>>) -> CliResult<()> {
    let cfg = resolve(
        common,
        RunConfig {
            checkpoint,
            lambda_pi,
            ..RunConfig::default()
        },
    )?;
    let lambdas = cfg.lambda_pi_list()?;
    let ck = load_checkpoint(&cfg)?;
    let base = cfg.inference(ck.lambda_dct, ck.k)?;
    let corpus = load_corpus(&cfg, Some(ck.shape.frames), Some(ck.shape.channels), Some(ck.shape.joints))?;
    if !corpus.has_labels() {
        return Err(CliError::usage("eval needs frame labels in data_dir; use `score` for unlabeled data"));
    }
    let test = testing_part(&cfg, &corpus)?;
    let (predictor, generator) = ck.models()?;
    let sched = ck.schedule.build()?;
    let out = cfg.out_dir().join("eval");
    create_dir(&out)?;
    let mut summary = String::from("lambda_pi,auc\n");
    for &l in &lambdas {
        let icfg = InferenceConfig {
            lambda_pi: l,
            ..base.clone()
        };
        let result = evaluate(&test, &predictor, Some(&generator), &sched, &icfg)?;
        let dir = out.join(intensity_tag(l));
        write_series(&dir.join("scores"), &result.series)?;
        let report = serde_json::to_string_pretty(&result.report).map_err(|e| CliError::usage(e.to_string()))?;
        write_text(&dir.join("report.json"), &report)?;
        summary.push_str(&format!("{l},{}\n", result.report.auc));
        println!("lambda_pi {l}: frame AUC {:.4} over {} frames", result.report.auc, result.report.n_frames);
    }
    write_text(&out.join("summary.csv"), &summary)?;
    Ok(())
}

fn cmd_score(common: &Common, checkpoint: Option<PathBuf>, lambda_pi: Option<f64>) -> CliResult<()> {
    let cfg = resolve(
        common,
        RunConfig {
            checkpoint,
            lambda_pi: lambda_pi.map(|l| vec![l]),
            ..RunConfig::default()
        },
    )?;
    let lambdas = cfg.lambda_pi_list()?;
    if lambdas.len() != 1 {
        return Err(CliError::usage("lambda_pi: score takes a single intensity"));
    }
    let ck = load_checkpoint(&cfg)?;
    let icfg = InferenceConfig {
        lambda_pi: lambdas[0],
        ..cfg.inference(ck.lambda_dct, ck.k)?
    };
    let corpus = load_corpus(&cfg, Some(ck.shape.frames), Some(ck.shape.channels), Some(ck.shape.joints))?;
    let test = testing_part(&cfg, &corpus)?;
    let (predictor, generator) = ck.models()?;
    let sched = ck.schedule.build()?;
    let (series, _) = score_corpus(&test, &predictor, Some(&generator), &sched, &icfg)?;
    let dir = cfg.out_dir().join("scores");
    write_series(&dir, &series)?;
    println!("scored {} videos into {}", series.len(), dir.display());
    Ok(())
}

fn cmd_synth(common: &Common) -> CliResult<()> {
    let cfg = resolve(common, RunConfig::default())?;
    let synth = cfg.synth_config()?;
    let corpus = synth_corpus(&synth, cfg.seed())?;
    let out = cfg.out_dir();
    create_dir(&out)?;
    write_corpus(&corpus, &out).map_err(|e| CliError::usage(format!("out_dir: {e}")))?;
    println!(
        "wrote {} videos ({} anomalous) to {}",
        synth.n_videos,
        synth.n_anomalous(),
        out.display()
    );
    Ok(())
}

fn score_files(inputs: &[PathBuf]) -> CliResult<Vec<PathBuf>> {
    let mut files = Vec::new();
    for p in inputs {
        if p.is_dir() {
            let mut found: Vec<PathBuf> = fs::read_dir(p)
                .map_err(|e| CliError::usage(format!("cannot read {}: {e}", p.display())))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| f.extension().is_some_and(|x| x == "csv"))
                .collect();
            found.sort();
            files.extend(found);
        } else {
            files.push(p.clone());
        }
    }
    if files.is_empty() {
        return Err(CliError::usage("plot needs at least one score file"));
    }
    Ok(files)
}

fn cmd_plot(common: &Common, inputs: &[PathBuf]) -> CliResult<()> {
    let cfg = resolve(common, RunConfig::default())?;
    let files = score_files(inputs)?;
    let series = files
        .iter()
        .map(|f| read_score_file(f).map_err(|e| CliError::usage(e.to_string())))
        .collect::<CliResult<Vec<_>>>()?;
    let out = cfg.out_dir();
    create_dir(&out)?;
    for s in &series {
        plot_series(s, &out.join(format!("{}.svg", s.video_id)))?;
    }
    println!("wrote {} plots to {}", series.len(), out.display());
    Ok(())
}
