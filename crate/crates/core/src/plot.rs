//! Score-curve images: frame index against anomaly score, with labeled
//! anomalous spans shaded.

use std::path::Path;

use plotters::prelude::*;

use crate::error::{Error, Result};
use crate::evaluation::ScoreSeries;

/// Fill of shaded anomalous spans.
pub const SPAN_COLOR: RGBColor = RGBColor(255, 200, 200);
const CURVE_COLOR: RGBColor = RGBColor(30, 80, 200);

/// Maximal runs `[start, end)` of frames labeled anomalous.
pub fn label_spans(labels: &[u8]) -> Vec<(usize, usize)> {
    let mut spans = Vec::new();
    let mut start = None;
    for (i, &l) in labels.iter().enumerate() {
        match (l != 0, start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                spans.push((s, i));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        spans.push((s, labels.len()));
    }
    spans
}

/// Renders one SVG curve for `series`.
pub fn plot_series(series: &ScoreSeries, path: &Path) -> Result<()> {
    if series.scores.is_empty() {
        return Err(Error::invalid(format!("video {} has no scores", series.video_id)));
    }
    let draw_err = |e: String| Error::invalid(format!("plotting {}: {e}", path.display()));
    let n = series.scores.len();
    let lo = series.scores.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = series.scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let pad = if hi > lo { (hi - lo) * 0.05 } else { lo.abs().max(1.0) * 0.05 };
    let (y0, y1) = (lo - pad, hi + pad);

    let root = SVGBackend::new(path, (800, 300)).into_drawing_area();
    root.fill(&WHITE).map_err(|e| draw_err(e.to_string()))?;
    let mut chart = ChartBuilder::on(&root)
        .caption(&series.video_id, ("sans-serif", 18))
        .margin(10)
        .x_label_area_size(30)
        .y_label_area_size(50)
        .build_cartesian_2d(0f64..n.max(2) as f64 - 1.0, y0..y1)
        .map_err(|e| draw_err(e.to_string()))?;
    chart
        .configure_mesh()
        .x_desc("frame")
        .y_desc("score")
        .disable_mesh()
        .draw()
        .map_err(|e| draw_err(e.to_string()))?;
    if let Some(labels) = &series.labels {
        let spans = label_spans(labels);
        chart
            .draw_series(spans.into_iter().map(|(s, e)| {
                Rectangle::new([(s as f64 - 0.5, y0), (e as f64 - 0.5, y1)], SPAN_COLOR.filled())
            }))
            .map_err(|e| draw_err(e.to_string()))?;
    }
    chart
        .draw_series(LineSeries::new(
            series.scores.iter().enumerate().map(|(i, &s)| (i as f64, s)),
            CURVE_COLOR.stroke_width(2),
        ))
        .map_err(|e| draw_err(e.to_string()))?;
    root.present().map_err(|e| draw_err(e.to_string()))?;
    Ok(())
}
