//! Synthetic labeled skeleton corpora for desk-scale experiments.
//!
//! Normal motion is a per-joint sum of up to three low-frequency harmonics
//! drawn from a small set of action templates, with per-person jitter in
//! tempo, phase, amplitude, placement and size. Anomalous videos replace a
//! contiguous span of one person's track with either a frame-shuffled copy
//! of the normal motion or a jitter-dominated trajectory.

use std::collections::BTreeMap;
use std::f64::consts::TAU;

use ndarray::{s, Array2, Array3};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::corpus::{TrajectoryCorpus, Track};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_videos: usize,
    pub anomaly_ratio: f64,
    pub window_length: usize,
    pub joints: usize,
    pub frames_per_video: usize,
    pub persons_per_video: usize,
    /// Fraction of an anomalous video's frames covered by the anomaly.
    pub anomaly_span: f64,
    /// Share of anomalous videos that get jitter rather than shuffling.
    pub jitter_share: f64,
    pub n_templates: usize,
    pub stride: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_videos: 250,
            anomaly_ratio: 0.2,
            window_length: 24,
            joints: 8,
            frames_per_video: 64,
            persons_per_video: 1,
            anomaly_span: 0.5,
            jitter_share: 0.5,
            n_templates: 3,
            stride: 4,
        }
    }
}

impl SynthConfig {
    pub fn n_anomalous(&self) -> usize {
        (self.n_videos as f64 * self.anomaly_ratio).round() as usize
    }

    fn validate(&self) -> Result<()> {
        if self.n_videos == 0 {
            return Err(Error::invalid("synthetic corpus needs at least one video"));
        }
        if !(0.0..=1.0).contains(&self.anomaly_ratio) {
            return Err(Error::invalid("anomaly_ratio must lie in [0, 1]"));
        }
        if self.n_anomalous() >= self.n_videos {
            return Err(Error::invalid(
                "synthetic corpus needs at least one normal video for training",
            ));
        }
        if self.joints == 0 || self.persons_per_video == 0 || self.n_templates == 0 {
            return Err(Error::invalid("joints, persons_per_video and n_templates must be positive"));
        }
        if self.window_length < 2 || self.frames_per_video < self.window_length {
            return Err(Error::invalid("frames_per_video must be at least window_length >= 2"));
        }
        if !(0.0..=1.0).contains(&self.anomaly_span) || !(0.0..=1.0).contains(&self.jitter_share) {
            return Err(Error::invalid("anomaly_span and jitter_share must lie in [0, 1]"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnomalyKind {
    /// Frames permuted within consecutive window-length chunks.
    Shuffled,
    /// High-frequency jitter dominating an attenuated normal motion.
    Jitter,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnomalySpan {
    pub kind: AnomalyKind,
    pub person_id: String,
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub corpus: TrajectoryCorpus,
    pub anomalies: BTreeMap<String, AnomalySpan>,
}

const CHANNELS: usize = 2;

#[derive(Debug, Clone)]
struct Harmonic {
    /// Cycles per frame.
    freq: f64,
    amp: Array2<f64>,
    phase: Array2<f64>,
}

#[derive(Debug, Clone)]
struct ActionTemplate {
    base: Array2<f64>,
    harmonics: Vec<Harmonic>,
}

/// Generator of normal and anomalous skeleton trajectories.
#[derive(Debug, Clone)]
pub struct MotionModel {
    joints: usize,
    templates: Vec<ActionTemplate>,
}

impl MotionModel {
    pub fn new(joints: usize, n_templates: usize, rng: &mut impl Rng) -> Self {
        let templates = (0..n_templates)
            .map(|_| {
                // chain laid out vertically with a random lateral profile
                let base = Array2::from_shape_fn((CHANNELS, joints), |(c, j)| {
                    if c == 1 {
                        if joints > 1 {
                            j as f64 / (joints - 1) as f64 * 2.0 - 1.0
                        } else {
                            0.0
                        }
                    } else {
                        rng.random_range(-0.3..0.3)
                    }
                });
                let f0 = rng.random_range(1.0 / 40.0..1.0 / 20.0);
                let n_harm = rng.random_range(1..=3);
                let harmonics = (1..=n_harm)
                    .map(|h| {
                        let shared: f64 = rng.random_range(0.0..TAU);
                        Harmonic {
                            freq: f0 * h as f64,
                            amp: Array2::from_shape_fn((CHANNELS, joints), |_| {
                                rng.random_range(0.05..0.3) / h as f64
                            }),
                            phase: Array2::from_shape_fn((CHANNELS, joints), |(_, j)| {
                                shared + j as f64 * 0.4 + rng.random_range(-0.3..0.3)
                            }),
                        }
                    })
                    .collect();
                ActionTemplate { base, harmonics }
            })
            .collect();
        Self { joints, templates }
    }

    pub fn joints(&self) -> usize {
        self.joints
    }

    /// A normal track of `len` frames in image-plane units.
    pub fn normal_track(&self, len: usize, rng: &mut impl Rng) -> Array3<f64> {
        let tmpl = &self.templates[rng.random_range(0..self.templates.len())];
        let tempo = 1.0 + Normal::new(0.0, 0.05).unwrap().sample(rng);
        let t0: f64 = rng.random_range(0.0..200.0);
        let jitter = Normal::new(0.0, 0.1).unwrap();
        let amp_jit = Array2::from_shape_fn((CHANNELS, self.joints), |_| 1.0 + jitter.sample(rng));
        let phase_jit = Array2::from_shape_fn((CHANNELS, self.joints), |_| jitter.sample(rng));
        let motion = Array3::from_shape_fn((len, CHANNELS, self.joints), |(i, c, j)| {
            tmpl.base[[c, j]]
                + tmpl
                    .harmonics
                    .iter()
                    .map(|h| {
                        h.amp[[c, j]]
                            * amp_jit[[c, j]]
                            * (TAU * h.freq * tempo * (i as f64 + t0) + h.phase[[c, j]] + phase_jit[[c, j]]).sin()
                    })
                    .sum::<f64>()
        });
        self.place(motion, rng)
    }

    /// A jitter-dominated track: attenuated normal motion plus fast
    /// oscillations and white noise.
    pub fn jitter_track(&self, len: usize, rng: &mut impl Rng) -> Array3<f64> {
        let tmpl = &self.templates[rng.random_range(0..self.templates.len())];
        let phase0: f64 = rng.random_range(0.0..TAU);
        let freq = Array2::from_shape_fn((CHANNELS, self.joints), |_| rng.random_range(0.25..0.45));
        let amp = Array2::from_shape_fn((CHANNELS, self.joints), |_| rng.random_range(0.15..0.3));
        let phase = Array2::from_shape_fn((CHANNELS, self.joints), |_| rng.random_range(0.0..TAU));
        let white = Normal::new(0.0, 0.05).unwrap();
        let mut motion = Array3::zeros((len, CHANNELS, self.joints));
        for i in 0..len {
            for c in 0..CHANNELS {
                for j in 0..self.joints {
                    let slow: f64 = tmpl
                        .harmonics
                        .iter()
                        .map(|h| h.amp[[c, j]] * (TAU * h.freq * i as f64 + h.phase[[c, j]] + phase0).sin())
                        .sum();
                    let fast = amp[[c, j]] * (TAU * freq[[c, j]] * i as f64 + phase[[c, j]]).sin();
                    motion[[i, c, j]] = tmpl.base[[c, j]] + 0.3 * slow + fast + white.sample(rng);
                }
            }
        }
        self.place(motion, rng)
    }

    /// Random image-plane placement and size plus small measurement noise.
    fn place(&self, mut motion: Array3<f64>, rng: &mut impl Rng) -> Array3<f64> {
        let size: f64 = rng.random_range(40.0..80.0);
        let offset = [rng.random_range(50.0..500.0), rng.random_range(50.0..300.0)];
        let noise = Normal::new(0.0, 0.002).unwrap();
        for ((_, c, _), v) in motion.indexed_iter_mut() {
            *v = (*v + noise.sample(rng)) * size + offset[c];
        }
        motion
    }
}

/// Permutes frames within consecutive chunks of `chunk` frames. Each chunk
/// keeps its multiset of poses; no chunk longer than one frame keeps its
/// original order.
pub fn shuffle_frames_chunked(track: &Array3<f64>, chunk: usize, rng: &mut impl Rng) -> Array3<f64> {
    let n = track.dim().0;
    let mut out = track.clone();
    let mut start = 0;
    while start < n {
        let end = (start + chunk.max(1)).min(n);
        let len = end - start;
        if len > 1 {
            let mut perm: Vec<usize> = (0..len).collect();
            loop {
                perm.shuffle(rng);
                if perm.iter().enumerate().any(|(i, &p)| i != p) {
                    break;
                }
            }
            for (dst, &src) in perm.iter().enumerate() {
                out.slice_mut(s![start + dst, .., ..])
                    .assign(&track.slice(s![start + src, .., ..]));
            }
        }
        start = end;
    }
    out
}

pub fn synth_corpus(config: &SynthConfig, seed: u64) -> Result<TrajectoryCorpus> {
    Ok(synth_corpus_annotated(config, seed)?.corpus)
}

/// Generates a labeled corpus together with the anomaly placement of every
/// anomalous video. Identical `(config, seed)` pairs give identical output.
pub fn synth_corpus_annotated(config: &SynthConfig, seed: u64) -> Result<SynthCorpus> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let model = MotionModel::new(config.joints, config.n_templates, &mut rng);

    let n_anom = config.n_anomalous();
    let mut order: Vec<usize> = (0..config.n_videos).collect();
    order.shuffle(&mut rng);
    let mut anomalous = vec![false; config.n_videos];
    for &v in order.iter().take(n_anom) {
        anomalous[v] = true;
    }
    let n_jitter = (n_anom as f64 * config.jitter_share).round() as usize;

    let len = config.frames_per_video;
    let n = config.window_length;
    let mut tracks = Vec::new();
    let mut labels = BTreeMap::new();
    let mut fpv = BTreeMap::new();
    let mut anomalies = BTreeMap::new();
    let mut anomaly_idx = 0usize;
    for v in 0..config.n_videos {
        let video_id = format!("v{v:04}");
        let mut video_labels = vec![0u8; len];
        for p in 0..config.persons_per_video {
            let person_id = format!("{p}");
            let mut data = model.normal_track(len, &mut rng);
            if anomalous[v] && p == 0 {
                let kind = if anomaly_idx < n_jitter {
                    AnomalyKind::Jitter
                } else {
                    AnomalyKind::Shuffled
                };
                anomaly_idx += 1;
                let span = ((config.anomaly_span * len as f64).round() as usize).clamp(n.min(len), len);
                let start = rng.random_range(0..=len - span);
                let end = start + span;
                let replacement = match kind {
                    AnomalyKind::Jitter => model.jitter_track(span, &mut rng),
                    AnomalyKind::Shuffled => {
                        shuffle_frames_chunked(&data.slice(s![start..end, .., ..]).to_owned(), n, &mut rng)
                    }
                };
                data.slice_mut(s![start..end, .., ..]).assign(&replacement);
                video_labels[start..end].iter_mut().for_each(|l| *l = 1);
                anomalies.insert(
                    video_id.clone(),
                    AnomalySpan {
                        kind,
                        person_id: person_id.clone(),
                        start,
                        end,
                    },
                );
            }
            tracks.push(Track {
                video_id: video_id.clone(),
                person_id,
                first_frame: 0,
                data,
            });
        }
        labels.insert(video_id.clone(), video_labels);
        fpv.insert(video_id, len);
    }
    let corpus = TrajectoryCorpus::from_tracks(tracks, Some(labels), fpv, n, config.stride)?;
    Ok(SynthCorpus { corpus, anomalies })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frequency::{dct2, high_frequency_energy_fraction, CondensedMotion};
    use crate::motion_data::normalize_window;
    use crate::motion_data::MotionSequence;

    fn small() -> SynthConfig {
        SynthConfig {
            n_videos: 12,
            anomaly_ratio: 0.5,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let a = synth_corpus(&small(), 7).unwrap();
        let b = synth_corpus(&small(), 7).unwrap();
        assert_eq!(a.windows, b.windows);
        assert_eq!(a.frame_labels, b.frame_labels);
        let c = synth_corpus(&small(), 8).unwrap();
        assert_ne!(a.windows, c.windows);
    }

    #[test]
    fn zero_anomalies_means_zero_labels() {
        let cfg = SynthConfig {
            anomaly_ratio: 0.0,
            ..small()
        };
        let c = synth_corpus(&cfg, 1).unwrap();
        assert!(c.frame_labels.unwrap().values().all(|l| l.iter().all(|&x| x == 0)));
    }

    #[test]
    fn zero_normal_videos_rejected() {
        let cfg = SynthConfig {
            anomaly_ratio: 1.0,
            ..small()
        };
        assert!(synth_corpus(&cfg, 1).is_err());
        let cfg = SynthConfig {
            n_videos: 0,
            ..small()
        };
        assert!(synth_corpus(&cfg, 1).is_err());
    }

    #[test]
    fn anomaly_count_and_labels() {
        let s = synth_corpus_annotated(&small(), 3).unwrap();
        assert_eq!(s.anomalies.len(), 6);
        let labels = s.corpus.frame_labels.as_ref().unwrap();
        for (vid, span) in &s.anomalies {
            let l = &labels[vid];
            assert!(l[span.start..span.end].iter().all(|&x| x == 1));
            assert_eq!(l.iter().filter(|&&x| x == 1).count(), span.end - span.start);
        }
        s.corpus.validate().unwrap();
    }

    fn rows_sorted(a: &Array3<f64>) -> Vec<Vec<u64>> {
        let mut rows: Vec<Vec<u64>> = a
            .outer_iter()
            .map(|f| f.iter().map(|v| v.to_bits()).collect())
            .collect();
        rows.sort();
        rows
    }

    #[test]
    fn shuffled_window_is_a_permutation_of_a_normal_window() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let model = MotionModel::new(8, 3, &mut rng);
        for _ in 0..20 {
            let normal = model.normal_track(24, &mut rng);
            let shuffled = shuffle_frames_chunked(&normal, 24, &mut rng);
            assert_eq!(rows_sorted(&normal), rows_sorted(&shuffled));
            assert_ne!(normal, shuffled);
        }
    }

    fn hf_fraction(data: Array3<f64>) -> f64 {
        let m = MotionSequence::anonymous(data).unwrap();
        let (m, _) = normalize_window(&m).unwrap();
        high_frequency_energy_fraction(&dct2(&CondensedMotion::from_motion(&m)).unwrap(), 0.5)
    }

    #[test]
    fn jitter_windows_carry_more_high_frequency_energy() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let model = MotionModel::new(8, 3, &mut rng);
        let normal: f64 = (0..50).map(|_| hf_fraction(model.normal_track(24, &mut rng))).sum::<f64>() / 50.0;
        let jitter: f64 = (0..50).map(|_| hf_fraction(model.jitter_track(24, &mut rng))).sum::<f64>() / 50.0;
        assert!(jitter > normal, "jitter {jitter} vs normal {normal}");
    }
}
