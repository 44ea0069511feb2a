use std::collections::{BTreeMap, BTreeSet};

use ndarray::{s, Array3};

use super::sequence::{normalize_window, MotionSequence, NormalizationParams};
use crate::error::{Error, Result};

/// A contiguous run of frames for one person in one video, `[frames][C][J]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    pub video_id: String,
    pub person_id: String,
    pub first_frame: usize,
    pub data: Array3<f64>,
}

impl Track {
    pub fn len(&self) -> usize {
        self.data.dim().0
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Start offsets of every complete window of length `n` at `stride`, plus
/// the final full window so the tail of the track is always covered.
pub fn window_starts(len: usize, n: usize, stride: usize) -> Vec<usize> {
    if n == 0 || stride == 0 || len < n {
        return Vec::new();
    }
    let last = len - n;
    let mut starts: Vec<usize> = (0..=last).step_by(stride).collect();
    if starts.last() != Some(&last) {
        starts.push(last);
    }
    starts
}

#[derive(Debug, Clone, Default)]
pub struct TrajectoryCorpus {
    pub tracks: Vec<Track>,
    pub windows: Vec<MotionSequence>,
    pub frame_labels: Option<BTreeMap<String, Vec<u8>>>,
    pub frames_per_video: BTreeMap<String, usize>,
    pub window_length: usize,
    pub stride: usize,
}

impl TrajectoryCorpus {
    /// Builds a corpus from tracks, windowing each one. Tracks and windows
    /// are ordered by `(video_id, person_id, start_frame)`.
    pub fn from_tracks(
        mut tracks: Vec<Track>,
        frame_labels: Option<BTreeMap<String, Vec<u8>>>,
        mut frames_per_video: BTreeMap<String, usize>,
        window_length: usize,
        stride: usize,
    ) -> Result<Self> {
        if window_length < 2 {
            return Err(Error::invalid("window_length must be at least 2"));
        }
        if stride == 0 {
            return Err(Error::invalid("stride must be positive"));
        }
        tracks.sort_by(|a, b| {
            (&a.video_id, &a.person_id, a.first_frame).cmp(&(&b.video_id, &b.person_id, b.first_frame))
        });
        for t in &tracks {
            let end = t.first_frame + t.len();
            let entry = frames_per_video.entry(t.video_id.clone()).or_insert(0);
            *entry = (*entry).max(end);
        }
        if let Some(labels) = &frame_labels {
            for (vid, frames) in &frames_per_video {
                match labels.get(vid) {
                    Some(l) if l.len() == *frames => {}
                    Some(l) => {
                        return Err(Error::invalid(format!(
                            "label array for video {vid} has {} entries but the video spans {frames} frames",
                            l.len()
                        )))
                    }
                    None => {
                        return Err(Error::invalid(format!("missing labels for video {vid}")))
                    }
                }
            }
        }
        let mut corpus = Self {
            tracks,
            windows: Vec::new(),
            frame_labels,
            frames_per_video,
            window_length,
            stride,
        };
        corpus.windows = corpus.make_windows(stride);
        Ok(corpus)
    }

    fn make_windows(&self, stride: usize) -> Vec<MotionSequence> {
        let n = self.window_length;
        let mut out = Vec::new();
        for t in &self.tracks {
            for start in window_starts(t.len(), n, stride) {
                let data = t.data.slice(s![start..start + n, .., ..]).to_owned();
                out.push(MotionSequence {
                    data,
                    person_id: t.person_id.clone(),
                    video_id: t.video_id.clone(),
                    start_frame: t.first_frame + start,
                });
            }
        }
        out
    }

    /// Re-segments the same tracks at a different stride.
    pub fn rewindow(&self, stride: usize) -> Result<Self> {
        Self::from_tracks(
            self.tracks.clone(),
            self.frame_labels.clone(),
            self.frames_per_video.clone(),
            self.window_length,
            stride,
        )
    }

    pub fn video_ids(&self) -> Vec<String> {
        self.frames_per_video.keys().cloned().collect()
    }

    pub fn has_labels(&self) -> bool {
        self.frame_labels.is_some()
    }

    /// True when the video has no positive frame label (or no labels at all).
    pub fn is_normal_video(&self, video_id: &str) -> bool {
        match &self.frame_labels {
            Some(l) => l.get(video_id).is_none_or(|v| v.iter().all(|&x| x == 0)),
            None => true,
        }
    }

    /// Restricts the corpus to the given videos, re-windowing at `stride`.
    pub fn subset(&self, videos: &BTreeSet<String>, stride: usize) -> Result<Self> {
        let tracks = self
            .tracks
            .iter()
            .filter(|t| videos.contains(&t.video_id))
            .cloned()
            .collect();
        let labels = self.frame_labels.as_ref().map(|l| {
            l.iter()
                .filter(|(k, _)| videos.contains(*k))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect()
        });
        let fpv = self
            .frames_per_video
            .iter()
            .filter(|(k, _)| videos.contains(*k))
            .map(|(k, v)| (k.clone(), *v))
            .collect();
        Self::from_tracks(tracks, labels, fpv, self.window_length, stride)
    }

    /// Splits a labeled corpus into a normal-only training part and a test
    /// part holding every anomalous video plus a held-out share of the
    /// normal ones. Every `holdout_every`-th normal video (in id order) is
    /// held out.
    pub fn split_train_test(
        &self,
        holdout_every: usize,
        train_stride: usize,
        test_stride: usize,
    ) -> Result<(Self, Self)> {
        if holdout_every == 0 {
            return Err(Error::invalid("holdout_every must be positive"));
        }
        let mut train = BTreeSet::new();
        let mut test = BTreeSet::new();
        let mut normal_idx = 0usize;
        for vid in self.frames_per_video.keys() {
            if self.is_normal_video(vid) {
                if normal_idx % holdout_every == holdout_every - 1 {
                    test.insert(vid.clone());
                } else {
                    train.insert(vid.clone());
                }
                normal_idx += 1;
            } else {
                test.insert(vid.clone());
            }
        }
        if train.is_empty() {
            return Err(Error::invalid("no normal videos left for training"));
        }
        Ok((self.subset(&train, train_stride)?, self.subset(&test, test_stride)?))
    }

    /// Normalized copies of every window together with their parameters.
    pub fn normalized_windows(&self) -> Result<Vec<(MotionSequence, NormalizationParams)>> {
        self.windows.iter().map(normalize_window).collect()
    }

    /// `(N, C, J)` of the windows, if any.
    pub fn window_dims(&self) -> Option<(usize, usize, usize)> {
        self.windows.first().map(|w| w.dims())
    }

    /// Checks the corpus invariants: windows inside their video's frame range
    /// and label lengths matching frame counts.
    pub fn validate(&self) -> Result<()> {
        for w in &self.windows {
            let frames = self.frames_per_video.get(&w.video_id).copied().unwrap_or(0);
            if w.start_frame + w.frames() > frames {
                return Err(Error::invalid(format!(
                    "window at {} of video {} exceeds {} frames",
                    w.start_frame, w.video_id, frames
                )));
            }
        }
        if let Some(labels) = &self.frame_labels {
            for (vid, frames) in &self.frames_per_video {
                if labels.get(vid).map(|l| l.len()) != Some(*frames) {
                    return Err(Error::invalid(format!("label length mismatch for {vid}")));
                }
            }
        }
        Ok(())
    }
}
