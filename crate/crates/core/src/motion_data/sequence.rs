use ndarray::{Array3, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A fixed-length window of poses for one tracked person, laid out as
/// `[frames][channels][joints]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionSequence {
    pub data: Array3<f64>,
    pub person_id: String,
    pub video_id: String,
    pub start_frame: usize,
}

impl MotionSequence {
    pub fn new(
        data: Array3<f64>,
        video_id: impl Into<String>,
        person_id: impl Into<String>,
        start_frame: usize,
    ) -> Result<Self> {
        let (n, c, j) = data.dim();
        if n == 0 || c == 0 || j == 0 {
            return Err(Error::invalid(format!(
                "motion window must have non-empty dimensions, got {n}x{c}x{j}"
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("motion window".into()));
        }
        Ok(Self {
            data,
            person_id: person_id.into(),
            video_id: video_id.into(),
            start_frame,
        })
    }

    /// Wraps raw data without provenance, for intermediate motions.
    pub fn anonymous(data: Array3<f64>) -> Result<Self> {
        Self::new(data, "", "", 0)
    }

    pub fn frames(&self) -> usize {
        self.data.dim().0
    }

    pub fn channels(&self) -> usize {
        self.data.dim().1
    }

    pub fn joints(&self) -> usize {
        self.data.dim().2
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        self.data.dim()
    }

    /// Number of scalar entries, `N * C * J`.
    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn with_data(&self, data: Array3<f64>) -> Self {
        Self {
            data,
            person_id: self.person_id.clone(),
            video_id: self.video_id.clone(),
            start_frame: self.start_frame,
        }
    }
}

/// Per-window centering and scaling that maps a window into `[-1, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationParams {
    /// Per-channel mean over frames and joints.
    pub center: Vec<f64>,
    pub scale: f64,
    /// Set when the window had zero spread and the scale was clamped to 1.
    pub degenerate: bool,
}

/// Centers each channel on its window mean and divides by the largest
/// absolute deviation, so every coordinate lands in `[-1, 1]` and at least
/// one reaches the boundary.
pub fn normalize_window(m: &MotionSequence) -> Result<(MotionSequence, NormalizationParams)> {
    if m.data.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("normalize_window input".into()));
    }
    let center: Vec<f64> = m
        .data
        .axis_iter(Axis(1))
        .map(|ch| ch.mean().unwrap_or(0.0))
        .collect();
    let mut out = m.data.clone();
    for (c, mut ch) in out.axis_iter_mut(Axis(1)).enumerate() {
        ch.mapv_inplace(|v| v - center[c]);
    }
    let max_dev = out.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    let (scale, degenerate) = if max_dev > 0.0 {
        (max_dev, false)
    } else {
        (1.0, true)
    };
    out.mapv_inplace(|v| (v / scale).clamp(-1.0, 1.0));
    Ok((
        m.with_data(out),
        NormalizationParams {
            center,
            scale,
            degenerate,
        },
    ))
}

pub fn denormalize_window(m: &MotionSequence, params: &NormalizationParams) -> MotionSequence {
    let mut out = m.data.mapv(|v| v * params.scale);
    for (c, mut ch) in out.axis_iter_mut(Axis(1)).enumerate() {
        let shift = params.center.get(c).copied().unwrap_or(0.0);
        ch.mapv_inplace(|v| v + shift);
    }
    m.with_data(out)
}
