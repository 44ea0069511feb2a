use std::collections::BTreeMap;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{auc, frame_aggregate, motion_score, smooth, ScoreSeries, WindowScore};
use crate::diffusion::{frequency_guided_generate_batch, window_rng, GenerationConfig, NoisePredictor, VarianceSchedule};
use crate::error::{Error, Result};
use crate::motion_data::{MotionSequence, TrajectoryCorpus};
use crate::perturbation::PerturbationGenerator;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceConfig {
    /// Perturbation intensity applied during reconstruction.
    pub lambda_pi: f64,
    pub lambda_dct: f64,
    pub k: usize,
    pub smoothing_window: usize,
    pub seed: u64,
    /// Windows reconstructed together; does not affect results.
    pub batch_size: usize,
}

impl InferenceConfig {
    pub fn generation(&self) -> GenerationConfig {
        GenerationConfig {
            lambda_p: self.lambda_pi,
            lambda_dct: self.lambda_dct,
            k: self.k,
            record_intermediates: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Frame-level AUC over all videos pooled together.
    pub auc: f64,
    /// AUC of each video holding both normal and anomalous frames.
    pub per_video_auc: BTreeMap<String, f64>,
    pub lambda_pi: f64,
    pub config_echo: InferenceConfig,
    pub n_windows: usize,
    pub n_frames: usize,
}

#[derive(Debug, Clone)]
pub struct EvalOutput {
    pub report: EvalReport,
    /// Smoothed, labeled frame scores per video.
    pub series: Vec<ScoreSeries>,
    pub window_scores: Vec<WindowScore>,
}

/// Reconstruction score of each (normalized) window. Window `i` draws from
/// stream `i` of `cfg.seed`, so scores do not depend on batching.
pub fn score_windows(
    windows: &[MotionSequence],
    predictor: &dyn NoisePredictor,
    generator: Option<&dyn PerturbationGenerator>,
    sched: &VarianceSchedule,
    cfg: &InferenceConfig,
) -> Result<Vec<f64>> {
    let gen_cfg = cfg.generation();
    let batch = cfg.batch_size.max(1);
    let mut scores = Vec::with_capacity(windows.len());
    for (chunk_idx, chunk) in windows.chunks(batch).enumerate() {
        let base = (chunk_idx * batch) as u64;
        let mut rngs: Vec<ChaCha8Rng> = (0..chunk.len() as u64).map(|i| window_rng(cfg.seed, base + i)).collect();
        let results = frequency_guided_generate_batch(chunk, predictor, generator, sched, &gen_cfg, &mut rngs)?;
        for (w, r) in chunk.iter().zip(&results) {
            scores.push(motion_score(w, &r.generated)?);
        }
    }
    Ok(scores)
}

/// Smoothed frame scores of every video, with labels attached when the
/// corpus has them, plus the underlying window scores.
pub fn score_corpus(
    corpus: &TrajectoryCorpus,
    predictor: &dyn NoisePredictor,
    generator: Option<&dyn PerturbationGenerator>,
    sched: &VarianceSchedule,
    cfg: &InferenceConfig,
) -> Result<(Vec<ScoreSeries>, Vec<WindowScore>)> {
    if corpus.windows.is_empty() {
        return Err(Error::invalid("corpus has no windows to score"));
    }
    let windows: Vec<MotionSequence> = corpus.normalized_windows()?.into_iter().map(|(w, _)| w).collect();
    let scores = score_windows(&windows, predictor, generator, sched, cfg)?;
    let window_scores: Vec<WindowScore> = windows
        .iter()
        .zip(&scores)
        .map(|(w, &score)| WindowScore {
            video_id: w.video_id.clone(),
            person_id: w.person_id.clone(),
            start_frame: w.start_frame,
            score,
        })
        .collect();
    let raw = frame_aggregate(&window_scores, corpus.window_length, &corpus.frames_per_video)?;
    let mut series = Vec::with_capacity(raw.len());
    for s in raw {
        let mut s = smooth(&s, cfg.smoothing_window)?;
        if let Some(labels) = &corpus.frame_labels {
            let l = labels
                .get(&s.video_id)
                .ok_or_else(|| Error::invalid(format!("missing labels for video {}", s.video_id)))?;
            s.labels = Some(l.clone());
        }
        series.push(s);
    }
    Ok((series, window_scores))
}

/// Scores every window, aggregates to frames, smooths and computes AUC.
pub fn evaluate(
    corpus: &TrajectoryCorpus,
    predictor: &dyn NoisePredictor,
    generator: Option<&dyn PerturbationGenerator>,
    sched: &VarianceSchedule,
    cfg: &InferenceConfig,
) -> Result<EvalOutput> {
    if corpus.frame_labels.is_none() {
        return Err(Error::invalid("evaluation needs a labeled corpus"));
    }
    let (series, window_scores) = score_corpus(corpus, predictor, generator, sched, cfg)?;
    let (mut all_scores, mut all_labels) = (Vec::new(), Vec::new());
    let mut per_video_auc = BTreeMap::new();
    for s in &series {
        let l = s.labels.as_deref().unwrap_or_default();
        if let Ok(a) = auc(&s.scores, l) {
            per_video_auc.insert(s.video_id.clone(), a);
        }
        all_scores.extend_from_slice(&s.scores);
        all_labels.extend_from_slice(l);
    }
    let report = EvalReport {
        auc: auc(&all_scores, &all_labels)?,
        per_video_auc,
        lambda_pi: cfg.lambda_pi,
        config_echo: cfg.clone(),
        n_windows: window_scores.len(),
        n_frames: all_scores.len(),
    };
    Ok(EvalOutput {
        report,
        series,
        window_scores,
    })
}

/// One evaluation per inference perturbation intensity.
pub fn evaluate_sweep(
    corpus: &TrajectoryCorpus,
    predictor: &dyn NoisePredictor,
    generator: Option<&dyn PerturbationGenerator>,
    sched: &VarianceSchedule,
    cfg: &InferenceConfig,
    lambdas: &[f64],
) -> Result<Vec<EvalOutput>> {
    lambdas
        .iter()
        .map(|&l| {
            let c = InferenceConfig {
                lambda_pi: l,
                ..cfg.clone()
            };
            evaluate(corpus, predictor, generator, sched, &c)
        })
        .collect()
}
