//! Reconstruction scoring, frame-level aggregation and smoothing, AUC and
//! the end-to-end evaluation protocol.

mod evaluate;
mod io;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use evaluate::{evaluate, evaluate_sweep, score_corpus, score_windows, EvalOutput, EvalReport, InferenceConfig};
pub use io::{read_score_file, write_score_file};

use crate::error::{Error, Result};
use crate::motion_data::MotionSequence;

/// Per-frame scores of one video, with optional binary labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreSeries {
    pub video_id: String,
    pub scores: Vec<f64>,
    pub labels: Option<Vec<u8>>,
}

/// Score of one window, tagged with where it came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowScore {
    pub video_id: String,
    pub person_id: String,
    pub start_frame: usize,
    pub score: f64,
}

/// Squared reconstruction error summed over every entry.
pub fn motion_score(x_o: &MotionSequence, x_g: &MotionSequence) -> Result<f64> {
    if x_o.dims() != x_g.dims() {
        let (a, b) = (x_o.dims(), x_g.dims());
        return Err(Error::ShapeMismatch {
            expected: vec![a.0, a.1, a.2],
            got: vec![b.0, b.1, b.2],
        });
    }
    Ok(x_o.data.iter().zip(x_g.data.iter()).map(|(a, b)| (a - b) * (a - b)).sum())
}

/// Frame scores per video: the mean over a person's windows covering the
/// frame, then the maximum over persons. Frames no window covers take the
/// video's lowest covered score (zero if nothing in the video is covered).
/// The result does not depend on the order of `window_scores`.
pub fn frame_aggregate(
    window_scores: &[WindowScore],
    window_length: usize,
    frames_per_video: &BTreeMap<String, usize>,
) -> Result<Vec<ScoreSeries>> {
    if window_scores.is_empty() {
        return Err(Error::invalid("no window scores to aggregate"));
    }
    if window_length == 0 {
        return Err(Error::invalid("window length must be positive"));
    }
    let mut sorted: Vec<&WindowScore> = window_scores.iter().collect();
    sorted.sort_by(|a, b| {
        (&a.video_id, &a.person_id, a.start_frame)
            .cmp(&(&b.video_id, &b.person_id, b.start_frame))
            .then(a.score.total_cmp(&b.score))
    });

    // video -> person -> (sum, count) per frame
    let mut acc: BTreeMap<&str, BTreeMap<&str, (Vec<f64>, Vec<u32>)>> = BTreeMap::new();
    for w in sorted {
        let frames = *frames_per_video
            .get(&w.video_id)
            .ok_or_else(|| Error::invalid(format!("unknown video {}", w.video_id)))?;
        if w.start_frame + window_length > frames {
            return Err(Error::invalid(format!(
                "window at {} of video {} exceeds its {frames} frames",
                w.start_frame, w.video_id
            )));
        }
        if !w.score.is_finite() {
            return Err(Error::NonFinite(format!("score of video {} at {}", w.video_id, w.start_frame)));
        }
        let (sum, count) = acc
            .entry(&w.video_id)
            .or_default()
            .entry(&w.person_id)
            .or_insert_with(|| (vec![0.0; frames], vec![0; frames]));
        for f in w.start_frame..w.start_frame + window_length {
            sum[f] += w.score;
            count[f] += 1;
        }
    }

    let mut out = Vec::with_capacity(frames_per_video.len());
    for (vid, &frames) in frames_per_video {
        let mut best: Vec<Option<f64>> = vec![None; frames];
        if let Some(persons) = acc.get(vid.as_str()) {
            for (sum, count) in persons.values() {
                for f in 0..frames {
                    if count[f] > 0 {
                        let mean = sum[f] / count[f] as f64;
                        best[f] = Some(best[f].map_or(mean, |b: f64| b.max(mean)));
                    }
                }
            }
        }
        let floor = best.iter().flatten().copied().fold(f64::INFINITY, f64::min);
        let floor = if floor.is_finite() { floor } else { 0.0 };
        out.push(ScoreSeries {
            video_id: vid.clone(),
            scores: best.into_iter().map(|b| b.unwrap_or(floor)).collect(),
            labels: None,
        });
    }
    Ok(out)
}

/// Centered moving average over an odd `window`; near the ends the window
/// is truncated to the available frames.
pub fn smooth(series: &ScoreSeries, window: usize) -> Result<ScoreSeries> {
    if window == 0 || window % 2 == 0 {
        return Err(Error::invalid(format!("smoothing window must be odd and positive, got {window}")));
    }
    let half = window / 2;
    let s = &series.scores;
    let smoothed = (0..s.len())
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(s.len());
            s[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
        })
        .collect();
    Ok(ScoreSeries {
        video_id: series.video_id.clone(),
        scores: smoothed,
        labels: series.labels.clone(),
    })
}

/// Probability that a positive outscores a negative, ties counting half.
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::invalid(format!(
            "{} scores but {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite("auc scores".into()));
    }
    let n_pos = labels.iter().filter(|&&l| l != 0).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::invalid("auc needs both positive and negative labels"));
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut end = i + 1;
        while end < idx.len() && scores[idx[end]] == scores[idx[i]] {
            end += 1;
        }
        // midrank of positions i..end (1-based ranks i+1..=end)
        let mid = (i + 1 + end) as f64 / 2.0;
        let pos = idx[i..end].iter().filter(|&&k| labels[k] != 0).count();
        rank_sum_pos += mid * pos as f64;
        i = end;
    }
    let (p, n) = (n_pos as f64, n_neg as f64);
    Ok((rank_sum_pos - p * (p + 1.0) / 2.0) / (p * n))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;
    use proptest::prelude::*;

    fn brute_auc(scores: &[f64], labels: &[u8]) -> f64 {
        let (mut total, mut pairs) = (0.0, 0.0);
        for (i, &si) in scores.iter().enumerate() {
            for (j, &sj) in scores.iter().enumerate() {
                if labels[i] == 1 && labels[j] == 0 {
                    pairs += 1.0;
                    total += if si > sj {
                        1.0
                    } else if si == sj {
                        0.5
                    } else {
                        0.0
                    };
                }
            }
        }
        total / pairs
    }

    fn ws(video: &str, person: &str, start: usize, score: f64) -> WindowScore {
        WindowScore {
            video_id: video.into(),
            person_id: person.into(),
            start_frame: start,
            score,
        }
    }

    fn series(v: &[f64]) -> ScoreSeries {
        ScoreSeries {
            video_id: "v".into(),
            scores: v.to_vec(),
            labels: None,
        }
    }

    #[test]
    fn motion_score_examples() {
        let a = MotionSequence::anonymous(Array3::from_elem((24, 2, 17), 0.3)).unwrap();
        let b = MotionSequence::anonymous(Array3::from_elem((24, 2, 17), 0.2)).unwrap();
        assert_eq!(motion_score(&a, &a).unwrap(), 0.0);
        assert!((motion_score(&a, &b).unwrap() - 8.16).abs() < 1e-9);
        assert_eq!(motion_score(&a, &b).unwrap(), motion_score(&b, &a).unwrap());
        let c = MotionSequence::anonymous(Array3::zeros((24, 2, 16))).unwrap();
        assert!(motion_score(&a, &c).is_err());
    }

    #[test]
    fn aggregation_examples() {
        let frames = BTreeMap::from([("v".to_string(), 5usize)]);
        let out = frame_aggregate(&[ws("v", "1", 0, 2.0)], 5, &frames).unwrap();
        assert_eq!(out[0].scores, vec![2.0; 5]);

        let frames = BTreeMap::from([("v".to_string(), 3usize)]);
        let out = frame_aggregate(&[ws("v", "1", 0, 1.0), ws("v", "2", 0, 3.0)], 3, &frames).unwrap();
        assert_eq!(out[0].scores, vec![3.0; 3]);

        let frames = BTreeMap::from([("v".to_string(), 4usize)]);
        let out = frame_aggregate(&[ws("v", "1", 0, 1.0), ws("v", "1", 1, 2.0)], 3, &frames).unwrap();
        assert_eq!(out[0].scores, vec![1.0, 1.5, 1.5, 2.0]);
    }

    #[test]
    fn uncovered_frames_take_video_minimum() {
        let frames = BTreeMap::from([("v".to_string(), 8usize), ("w".to_string(), 2usize)]);
        let out = frame_aggregate(&[ws("v", "1", 1, 4.0), ws("v", "2", 3, 1.0)], 2, &frames).unwrap();
        assert_eq!(out[0].scores, vec![1.0, 4.0, 4.0, 1.0, 1.0, 1.0, 1.0, 1.0]);
        assert_eq!(out[1].scores, vec![0.0, 0.0]);
    }

    #[test]
    fn aggregation_errors() {
        let frames = BTreeMap::from([("v".to_string(), 4usize)]);
        assert!(frame_aggregate(&[], 2, &frames).is_err());
        assert!(frame_aggregate(&[ws("v", "1", 3, 1.0)], 2, &frames).is_err());
        assert!(frame_aggregate(&[ws("x", "1", 0, 1.0)], 2, &frames).is_err());
    }

    #[test]
    fn smoothing_examples() {
        let s = series(&[0.0, 0.0, 9.0, 0.0, 0.0]);
        assert_eq!(smooth(&s, 1).unwrap(), s);
        assert_eq!(smooth(&s, 3).unwrap().scores, vec![0.0, 3.0, 3.0, 3.0, 0.0]);
        assert_eq!(smooth(&series(&[2.5; 7]), 5).unwrap().scores, vec![2.5; 7]);
        assert!(smooth(&s, 4).is_err());
        assert!(smooth(&s, 0).is_err());
    }

    #[test]
    fn auc_examples() {
        assert_eq!(auc(&[0.1, 0.9], &[0, 1]).unwrap(), 1.0);
        assert_eq!(auc(&[0.9, 0.1], &[0, 1]).unwrap(), 0.0);
        let s = [0.5, 0.5, 0.2];
        let l = [1, 0, 0];
        assert_eq!(auc(&s, &l).unwrap(), brute_auc(&s, &l));
        assert_eq!(auc(&s, &l).unwrap(), 0.75);
        assert!(auc(&[0.1, 0.2], &[1, 1]).is_err());
        assert!(auc(&[0.1], &[1, 0]).is_err());
    }

    fn scored_labels() -> impl Strategy<Value = (Vec<f64>, Vec<u8>)> {
        (2usize..60).prop_flat_map(|n| {
            (
                proptest::collection::vec((0i32..20).prop_map(|v| v as f64 / 4.0), n),
                proptest::collection::vec(0u8..2, n),
            )
        })
    }

    proptest! {
        #[test]
        fn auc_matches_pairwise_definition((s, mut l) in scored_labels()) {
            l[0] = 0;
            l[1] = 1;
            prop_assert!((auc(&s, &l).unwrap() - brute_auc(&s, &l)).abs() < 1e-12);
        }

        #[test]
        fn auc_is_rank_invariant((s, mut l) in scored_labels(), a in 0.1f64..5.0, b in -3.0f64..3.0) {
            l[0] = 0;
            l[1] = 1;
            let mapped: Vec<f64> = s.iter().map(|v| (a * v + b).exp() + v.powi(3)).collect();
            prop_assert!((auc(&s, &l).unwrap() - auc(&mapped, &l).unwrap()).abs() < 1e-12);
        }

        #[test]
        fn aggregation_is_order_invariant(
            raw in proptest::collection::vec((0usize..2, 0usize..3, 0usize..12, -5.0f64..5.0), 1..30),
            seed in any::<u64>(),
        ) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let frames = BTreeMap::from([("a".to_string(), 16usize), ("b".to_string(), 16usize)]);
            let items: Vec<WindowScore> = raw
                .iter()
                .map(|&(v, p, s, x)| ws(["a", "b"][v], &p.to_string(), s, x))
                .collect();
            let mut shuffled = items.clone();
            shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            prop_assert_eq!(
                frame_aggregate(&items, 5, &frames).unwrap(),
                frame_aggregate(&shuffled, 5, &frames).unwrap()
            );
        }

        #[test]
        fn smoothing_keeps_range_and_mean(
            interior in proptest::collection::vec(-10.0f64..10.0, 50..200),
            edge in -10.0f64..10.0,
            half in 0usize..5,
        ) {
            let w = 2 * half + 1;
            let mut v = vec![edge; w];
            v.extend(&interior);
            v.extend(vec![edge; w]);
            let out = smooth(&series(&v), w).unwrap().scores;
            let (lo, hi) = v.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
            prop_assert!(out.iter().all(|&x| x >= lo - 1e-12 && x <= hi + 1e-12));
            let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
            prop_assert!((mean(&out) - mean(&v)).abs() < 1e-9);
        }
    }
}
