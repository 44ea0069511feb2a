//! Flat key-value run configuration shared by every command.
//!
//! A config file is flat TOML: one `key = value` per line, no tables.
//! Unknown keys are rejected. Values are resolved as command-line flag,
//! then config file, then the documented default.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::diffusion::ScheduleConfig;
use crate::error::{Error, Result};
use crate::evaluation::InferenceConfig;
use crate::motion_data::{LoadOptions, SynthConfig};
use crate::networks::{NetConfig, TrainConfig};

/// Every key a config file or `--set` flag may carry. `None` means unset.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub data_dir: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    /// Every `holdout_every`-th normal video is held out for testing; 0
    /// keeps the whole corpus for both training and testing.
    pub holdout_every: Option<usize>,

    #[serde(alias = "N")]
    pub window_length: Option<usize>,
    pub stride: Option<usize>,
    pub test_stride: Option<usize>,
    #[serde(alias = "C")]
    pub channels: Option<usize>,
    #[serde(alias = "J")]
    pub joints: Option<usize>,

    #[serde(alias = "T")]
    pub steps: Option<usize>,
    pub beta_start: Option<f64>,
    pub beta_end: Option<f64>,

    pub lambda_p: Option<f64>,
    pub lambda_dct: Option<f64>,
    pub k: Option<usize>,
    pub lambda_pi: Option<Vec<f64>>,
    pub seed: Option<u64>,

    pub max_iters: Option<usize>,
    pub batch_size: Option<usize>,
    pub lr_base: Option<f64>,
    pub lr_decay: Option<f64>,
    pub generator_update_period: Option<usize>,
    pub adversarial: Option<bool>,
    pub predictor_width: Option<usize>,
    pub predictor_depth: Option<usize>,
    pub generator_width: Option<usize>,
    pub generator_depth: Option<usize>,

    pub smoothing_window: Option<usize>,
    pub eval_batch_size: Option<usize>,

    pub n_videos: Option<usize>,
    pub anomaly_ratio: Option<f64>,
    pub frames_per_video: Option<usize>,
    pub persons_per_video: Option<usize>,
    pub anomaly_span: Option<f64>,
    pub jitter_share: Option<f64>,
    pub n_templates: Option<usize>,
}

pub const DEFAULT_WINDOW_LENGTH: usize = 24;
pub const DEFAULT_STRIDE: usize = 4;
pub const DEFAULT_LAMBDA_P: f64 = 0.1;
pub const DEFAULT_LAMBDA_DCT: f64 = 0.1;
pub const DEFAULT_SMOOTHING_WINDOW: usize = 9;

impl RunConfig {
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("{origin}: {}", e.message())))
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text, &path.display().to_string())
    }

    /// Parses one `key=value` assignment, the value in TOML syntax (bare
    /// words are taken as strings).
    pub fn assignment(kv: &str) -> Result<Self> {
        let (key, value) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("expected KEY=VALUE, got {kv:?}")))?;
        let (key, value) = (key.trim(), value.trim());
        let line = format!("{key} = {value}");
        match Self::parse(&line, "--set") {
            Ok(c) => Ok(c),
            Err(first) => {
                let quoted = format!("{key} = {}", toml::Value::String(value.to_string()));
                Self::parse(&quoted, "--set").map_err(|_| first)
            }
        }
    }

    /// Keys set in `over` replace those of `self`.
    pub fn overlay(&self, over: &RunConfig) -> RunConfig {
        let to_map = |c: &RunConfig| match serde_json::to_value(c) {
            Ok(serde_json::Value::Object(m)) => m,
            _ => serde_json::Map::new(),
        };
        let mut base = to_map(self);
        for (k, v) in to_map(over) {
            if !v.is_null() {
                base.insert(k, v);
            }
        }
        serde_json::from_value(serde_json::Value::Object(base)).unwrap_or_else(|_| self.clone())
    }

    /// The configuration as flat TOML with only the set keys.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).unwrap_or_default()
    }

    pub fn require_data_dir(&self) -> Result<PathBuf> {
        let dir = self
            .data_dir
            .clone()
            .ok_or_else(|| Error::Config("missing required key `data_dir`".into()))?;
        if !dir.is_dir() {
            return Err(Error::Config(format!("data_dir: {} is not a directory", dir.display())));
        }
        Ok(dir)
    }

    pub fn require_checkpoint(&self) -> Result<PathBuf> {
        let p = self
            .checkpoint
            .clone()
            .ok_or_else(|| Error::Config("missing required key `checkpoint`".into()))?;
        if !p.is_file() {
            return Err(Error::Config(format!("checkpoint: {} is not a file", p.display())));
        }
        Ok(p)
    }

    pub fn out_dir(&self) -> PathBuf {
        self.out_dir.clone().unwrap_or_else(|| PathBuf::from("out"))
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    pub fn holdout_every(&self) -> usize {
        self.holdout_every.unwrap_or(0)
    }

    pub fn load_options(&self) -> Result<LoadOptions> {
        let opts = LoadOptions {
            window_length: self.window_length.unwrap_or(DEFAULT_WINDOW_LENGTH),
            stride: self.stride.unwrap_or(DEFAULT_STRIDE),
            channels: self.channels.unwrap_or(2),
            joints: self.joints,
        };
        positive("window_length", opts.window_length)?;
        positive("stride", opts.stride)?;
        positive("channels", opts.channels)?;
        if let Some(j) = opts.joints {
            positive("joints", j)?;
        }
        Ok(opts)
    }

    pub fn test_stride(&self) -> Result<usize> {
        let s = self.test_stride.unwrap_or(self.stride.unwrap_or(DEFAULT_STRIDE));
        positive("test_stride", s)?;
        Ok(s)
    }

    pub fn schedule(&self) -> Result<ScheduleConfig> {
        let d = ScheduleConfig::default();
        let s = ScheduleConfig {
            steps: self.steps.unwrap_or(d.steps),
            beta_start: self.beta_start.unwrap_or(d.beta_start),
            beta_end: self.beta_end.unwrap_or(d.beta_end),
        };
        s.build().map_err(|e| Error::Config(format!("steps/beta_start/beta_end: {e}")))?;
        Ok(s)
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let d = TrainConfig::default();
        let net = |w: Option<usize>, dp: Option<usize>, def: NetConfig, wk: &str, dk: &str| -> Result<NetConfig> {
            let c = NetConfig {
                width: w.unwrap_or(def.width),
                depth: dp.unwrap_or(def.depth),
                precision: def.precision,
            };
            positive(wk, c.width)?;
            positive(dk, c.depth)?;
            Ok(c)
        };
        let cfg = TrainConfig {
            max_iters: self.max_iters.unwrap_or(d.max_iters),
            batch_size: self.batch_size.unwrap_or(d.batch_size),
            lr_base: self.lr_base.unwrap_or(d.lr_base),
            lr_decay: self.lr_decay.unwrap_or(d.lr_decay),
            lambda_p: self.lambda_p.unwrap_or(DEFAULT_LAMBDA_P),
            schedule: self.schedule()?,
            k: self.k,
            seed: self.seed(),
            generator_update_period: self.generator_update_period.unwrap_or(d.generator_update_period),
            adversarial: self.adversarial.unwrap_or(d.adversarial),
            predictor: net(
                self.predictor_width,
                self.predictor_depth,
                d.predictor,
                "predictor_width",
                "predictor_depth",
            )?,
            generator: net(
                self.generator_width,
                self.generator_depth,
                d.generator,
                "generator_width",
                "generator_depth",
            )?,
        };
        positive("max_iters", cfg.max_iters)?;
        positive("batch_size", cfg.batch_size)?;
        positive("generator_update_period", cfg.generator_update_period)?;
        if !(cfg.lr_base > 0.0 && cfg.lr_base.is_finite()) {
            return Err(Error::Config(format!("lr_base must be positive, got {}", cfg.lr_base)));
        }
        if !(cfg.lr_decay > 0.0 && cfg.lr_decay <= 1.0) {
            return Err(Error::Config(format!("lr_decay must lie in (0, 1], got {}", cfg.lr_decay)));
        }
        check_lambda("lambda_p", cfg.lambda_p)?;
        if let Some(k) = cfg.k {
            positive("k", k)?;
        }
        if let Some(l) = self.lambda_dct {
            check_fraction("lambda_dct", l)?;
        }
        Ok(cfg)
    }

    /// Inference settings; unset `lambda_dct` and `k` fall back to the
    /// values stored with the model.
    pub fn inference(&self, model_lambda_dct: f64, model_k: usize) -> Result<InferenceConfig> {
        let cfg = InferenceConfig {
            lambda_pi: 0.0,
            lambda_dct: self.lambda_dct.unwrap_or(model_lambda_dct),
            k: self.k.unwrap_or(model_k),
            smoothing_window: self.smoothing_window.unwrap_or(DEFAULT_SMOOTHING_WINDOW),
            seed: self.seed(),
            batch_size: self.eval_batch_size.unwrap_or(256),
        };
        check_fraction("lambda_dct", cfg.lambda_dct)?;
        positive("k", cfg.k)?;
        positive("eval_batch_size", cfg.batch_size)?;
        if cfg.smoothing_window % 2 == 0 {
            return Err(Error::Config(format!(
                "smoothing_window must be odd and positive, got {}",
                cfg.smoothing_window
            )));
        }
        Ok(cfg)
    }

    pub fn lambda_pi_list(&self) -> Result<Vec<f64>> {
        let list = self.lambda_pi.clone().unwrap_or_else(|| vec![0.0]);
        if list.is_empty() {
            return Err(Error::Config("lambda_pi must list at least one intensity".into()));
        }
        for &l in &list {
            check_lambda("lambda_pi", l)?;
        }
        Ok(list)
    }

    pub fn synth_config(&self) -> Result<SynthConfig> {
        let d = SynthConfig::default();
        let cfg = SynthConfig {
            n_videos: self.n_videos.unwrap_or(d.n_videos),
            anomaly_ratio: self.anomaly_ratio.unwrap_or(d.anomaly_ratio),
            window_length: self.window_length.unwrap_or(d.window_length),
            joints: self.joints.unwrap_or(d.joints),
            frames_per_video: self.frames_per_video.unwrap_or(d.frames_per_video),
            persons_per_video: self.persons_per_video.unwrap_or(d.persons_per_video),
            anomaly_span: self.anomaly_span.unwrap_or(d.anomaly_span),
            jitter_share: self.jitter_share.unwrap_or(d.jitter_share),
            n_templates: self.n_templates.unwrap_or(d.n_templates),
            stride: self.stride.unwrap_or(d.stride),
        };
        positive("n_videos", cfg.n_videos)?;
        positive("stride", cfg.stride)?;
        check_fraction("anomaly_ratio", cfg.anomaly_ratio)?;
        check_fraction("anomaly_span", cfg.anomaly_span)?;
        check_fraction("jitter_share", cfg.jitter_share)?;
        if self.channels.is_some_and(|c| c != 2) {
            return Err(Error::Config("channels: synthetic corpora have 2 channels".into()));
        }
        Ok(cfg)
    }
}

fn positive(key: &str, v: usize) -> Result<()> {
    if v == 0 {
        return Err(Error::Config(format!("{key} must be positive")));
    }
    Ok(())
}

fn check_lambda(key: &str, v: f64) -> Result<()> {
    if !(v >= 0.0 && v.is_finite()) {
        return Err(Error::Config(format!("{key} must be finite and non-negative, got {v}")));
    }
    Ok(())
}

fn check_fraction(key: &str, v: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&v) {
        return Err(Error::Config(format!("{key} must lie in [0, 1], got {v}")));
    }
    Ok(())
}
