use std::fs;
use std::path::Path;

use super::ScoreSeries;
use crate::error::{Error, Result};

const HEADER_WITH_LABELS: &str = "frame_idx,score,label";
const HEADER: &str = "frame_idx,score";

/// Writes `frame_idx,score[,label]` rows under a header line.
pub fn write_score_file(path: &Path, series: &ScoreSeries) -> Result<()> {
    let mut out = String::new();
    match &series.labels {
        Some(labels) => {
            out.push_str(HEADER_WITH_LABELS);
            out.push('\n');
            for (i, (s, l)) in series.scores.iter().zip(labels).enumerate() {
                out.push_str(&format!("{i},{s},{l}\n"));
            }
        }
        None => {
            out.push_str(HEADER);
            out.push('\n');
            for (i, s) in series.scores.iter().enumerate() {
                out.push_str(&format!("{i},{s}\n"));
            }
        }
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Reads a score file; the video id is the file stem.
pub fn read_score_file(path: &Path) -> Result<ScoreSeries> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let parse_err = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or_else(|| parse_err(1, "empty score file".into()))?;
    let with_labels = match header.trim() {
        HEADER_WITH_LABELS => true,
        HEADER => false,
        other => return Err(parse_err(1, format!("unexpected header {other:?}"))),
    };
    let mut scores = Vec::new();
    let mut labels = Vec::new();
    for (i, line) in lines {
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let expected = if with_labels { 3 } else { 2 };
        if fields.len() != expected {
            return Err(parse_err(i + 1, format!("expected {expected} fields, found {}", fields.len())));
        }
        let idx: usize = fields[0]
            .parse()
            .map_err(|_| parse_err(i + 1, format!("bad frame index {:?}", fields[0])))?;
        if idx != scores.len() {
            return Err(parse_err(i + 1, format!("frame index {idx} out of sequence")));
        }
        let score: f64 = fields[1]
            .parse()
            .map_err(|_| parse_err(i + 1, format!("bad score {:?}", fields[1])))?;
        if !score.is_finite() {
            return Err(parse_err(i + 1, "non-finite score".into()));
        }
        scores.push(score);
        if with_labels {
            match fields[2] {
                "0" => labels.push(0),
                "1" => labels.push(1),
                other => return Err(parse_err(i + 1, format!("bad label {other:?}"))),
            }
        }
    }
    if scores.is_empty() {
        return Err(parse_err(1, "score file has no rows".into()));
    }
    let video_id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(ScoreSeries {
        video_id,
        scores,
        labels: with_labels.then_some(labels),
    })
}
