//! Per-person trajectory CSV files and per-video label files.
//!
//! A corpus directory holds one `<video_id>_<person_id>.csv` file per tracked
//! person. Each row is `frame_idx, x_1, y_1, [c_1,] ..., x_J, y_J[, c_J]`;
//! confidence columns are detected from the column count. Frame labels, when
//! present, live in `labels/<video_id>.txt` with one `0`/`1` per line.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::Array3;

use super::corpus::{TrajectoryCorpus, Track};
use crate::error::{Error, Result};

pub const LABEL_DIR: &str = "labels";

#[derive(Debug, Clone)]
pub struct LoadOptions {
    pub window_length: usize,
    pub stride: usize,
    /// Coordinate channels per joint (2 for image-plane x/y, 3 for x/y/z).
    pub channels: usize,
    /// Joint count; when `None` it is inferred from the column count,
    /// preferring the layout without confidence columns.
    pub joints: Option<usize>,
}

impl LoadOptions {
    pub fn new(window_length: usize, stride: usize) -> Self {
        Self {
            window_length,
            stride,
            channels: 2,
            joints: None,
        }
    }
}

pub fn load_trajectories(root: &Path, window_length: usize, stride: usize) -> Result<TrajectoryCorpus> {
    load_trajectories_with(root, &LoadOptions::new(window_length, stride))
}

pub fn load_trajectories_with(root: &Path, opts: &LoadOptions) -> Result<TrajectoryCorpus> {
    if opts.window_length < 2 {
        return Err(Error::invalid("window_length must be at least 2"));
    }
    if !(2..=3).contains(&opts.channels) {
        return Err(Error::invalid("channels must be 2 or 3"));
    }
    let mut files: Vec<PathBuf> = fs::read_dir(root)
        .map_err(|e| Error::io(root, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x == "csv"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::EmptyCorpus(root.to_path_buf()));
    }

    let mut tracks = Vec::new();
    let mut joints = opts.joints;
    for path in &files {
        let (video_id, person_id) = parse_track_name(path)?;
        let rows = read_rows(path, opts.channels, &mut joints)?;
        tracks.extend(rows_to_tracks(&video_id, &person_id, rows, opts.channels, joints.unwrap_or(0)));
    }

    let label_dir = root.join(LABEL_DIR);
    let (labels, frames_per_video) = if label_dir.is_dir() {
        let labels = read_label_dir(&label_dir)?;
        let fpv = labels.iter().map(|(k, v)| (k.clone(), v.len())).collect();
        (Some(labels), fpv)
    } else {
        (None, BTreeMap::new())
    };
    TrajectoryCorpus::from_tracks(tracks, labels, frames_per_video, opts.window_length, opts.stride)
}

fn parse_track_name(path: &Path) -> Result<(String, String)> {
    let stem = path
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| Error::invalid(format!("bad file name {}", path.display())))?;
    match stem.rsplit_once('_') {
        Some((v, p)) if !v.is_empty() && !p.is_empty() => Ok((v.to_string(), p.to_string())),
        _ => Err(Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            msg: "file name must be <video_id>_<person_id>.csv".into(),
        }),
    }
}

struct Row {
    frame: usize,
    /// `[C][J]` coordinates, row-major.
    coords: Vec<f64>,
    /// Per-joint confidence, all ones when the file has no confidence columns.
    conf: Vec<f64>,
}

fn detect_layout(cols: usize, channels: usize, joints: Option<usize>) -> Option<(usize, bool)> {
    let k = cols.checked_sub(1)?;
    if k == 0 {
        return None;
    }
    match joints {
        Some(j) if k == j * channels => Some((j, false)),
        Some(j) if k == j * (channels + 1) => Some((j, true)),
        Some(_) => None,
        None if k % channels == 0 => Some((k / channels, false)),
        None if k % (channels + 1) == 0 => Some((k / (channels + 1), true)),
        None => None,
    }
}

fn read_rows(path: &Path, channels: usize, joints: &mut Option<usize>) -> Result<Vec<Row>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .flexible(true)
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            msg: e.to_string(),
        })?;
    let mut rows = Vec::new();
    let mut layout: Option<(usize, bool, usize)> = None;
    for rec in reader.records() {
        let rec = rec.map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.position().map_or(0, |p| p.line() as usize),
            msg: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let perr = |msg: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            msg,
        };
        let (j, has_conf, cols) = match layout {
            Some(l) => l,
            None => {
                let (j, c) = detect_layout(rec.len(), channels, *joints).ok_or_else(|| {
                    perr(format!("cannot interpret {} columns as a pose row", rec.len()))
                })?;
                *joints = Some(j);
                layout = Some((j, c, rec.len()));
                (j, c, rec.len())
            }
        };
        if rec.len() != cols {
            return Err(perr(format!("expected {cols} columns, found {}", rec.len())));
        }
        let mut values = Vec::with_capacity(cols);
        for (i, field) in rec.iter().enumerate() {
            let v: f64 = field
                .parse()
                .map_err(|_| perr(format!("column {}: non-numeric value {field:?}", i + 1)))?;
            if !v.is_finite() {
                return Err(perr(format!("column {}: non-finite value", i + 1)));
            }
            values.push(v);
        }
        let frame = values[0];
        if frame < 0.0 || frame.fract() != 0.0 {
            return Err(perr(format!("invalid frame index {frame}")));
        }
        let per_joint = if has_conf { channels + 1 } else { channels };
        let mut coords = vec![0.0; channels * j];
        let mut conf = vec![1.0; j];
        for joint in 0..j {
            let base = 1 + joint * per_joint;
            for c in 0..channels {
                coords[c * j + joint] = values[base + c];
            }
            if has_conf {
                conf[joint] = values[base + channels];
            }
        }
        rows.push(Row {
            frame: frame as usize,
            coords,
            conf,
        });
    }
    rows.sort_by_key(|r| r.frame);
    rows.dedup_by_key(|r| r.frame);
    Ok(rows)
}

/// Splits rows into runs of consecutive frames and fills missing joints.
fn rows_to_tracks(video: &str, person: &str, rows: Vec<Row>, channels: usize, joints: usize) -> Vec<Track> {
    let mut out = Vec::new();
    let mut start = 0;
    while start < rows.len() {
        let mut end = start + 1;
        while end < rows.len() && rows[end].frame == rows[end - 1].frame + 1 {
            end += 1;
        }
        let seg = &rows[start..end];
        let mut data = Array3::zeros((seg.len(), channels, joints));
        for (i, r) in seg.iter().enumerate() {
            for c in 0..channels {
                for j in 0..joints {
                    data[[i, c, j]] = r.coords[c * joints + j];
                }
            }
        }
        let conf: Vec<&[f64]> = seg.iter().map(|r| r.conf.as_slice()).collect();
        fill_missing_joints(&mut data, &conf);
        out.push(Track {
            video_id: video.to_string(),
            person_id: person.to_string(),
            first_frame: seg[0].frame,
            data,
        });
        start = end;
    }
    out
}

/// Replaces joints with zero confidence by linear interpolation over time,
/// holding the nearest observation at the ends. A joint that is never
/// observed takes the per-frame centroid of the observed joints.
pub fn fill_missing_joints(data: &mut Array3<f64>, conf: &[&[f64]]) {
    let (n, channels, joints) = data.dim();
    let mut never_seen = Vec::new();
    for j in 0..joints {
        let seen: Vec<usize> = (0..n).filter(|&i| conf[i][j] > 0.0).collect();
        if seen.is_empty() {
            never_seen.push(j);
            continue;
        }
        if seen.len() == n {
            continue;
        }
        for i in 0..n {
            if conf[i][j] > 0.0 {
                continue;
            }
            let next = seen.partition_point(|&s| s < i);
            for c in 0..channels {
                data[[i, c, j]] = if next == 0 {
                    data[[seen[0], c, j]]
                } else if next == seen.len() {
                    data[[seen[seen.len() - 1], c, j]]
                } else {
                    let (a, b) = (seen[next - 1], seen[next]);
                    let w = (i - a) as f64 / (b - a) as f64;
                    data[[a, c, j]] * (1.0 - w) + data[[b, c, j]] * w
                };
            }
        }
    }
    if never_seen.len() == joints || never_seen.is_empty() {
        return;
    }
    for i in 0..n {
        for c in 0..channels {
            let (sum, cnt) = (0..joints)
                .filter(|j| !never_seen.contains(j))
                .fold((0.0, 0usize), |(s, k), j| (s + data[[i, c, j]], k + 1));
            for &j in &never_seen {
                data[[i, c, j]] = sum / cnt as f64;
            }
        }
    }
}

fn read_label_dir(dir: &Path) -> Result<BTreeMap<String, Vec<u8>>> {
    let mut out = BTreeMap::new();
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "txt"))
        .collect();
    files.sort();
    for path in files {
        let vid = path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or_default()
            .to_string();
        out.insert(vid, read_labels(&path)?);
    }
    Ok(out)
}

pub fn read_labels(path: &Path) -> Result<Vec<u8>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| match l.trim() {
            "0" => Ok(0),
            "1" => Ok(1),
            other => Err(Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                msg: format!("label must be 0 or 1, got {other:?}"),
            }),
        })
        .collect()
}

/// Writes the corpus tracks and labels in the layout read by
/// [`load_trajectories`]. Values are printed with round-trip precision.
pub fn write_corpus(corpus: &TrajectoryCorpus, root: &Path) -> Result<()> {
    fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    let mut by_file: BTreeMap<(String, String), Vec<&Track>> = BTreeMap::new();
    for t in &corpus.tracks {
        by_file
            .entry((t.video_id.clone(), t.person_id.clone()))
            .or_default()
            .push(t);
    }
    for ((vid, pid), tracks) in by_file {
        let path = root.join(format!("{vid}_{pid}.csv"));
        let mut buf = String::new();
        for t in tracks {
            let (n, c, j) = t.data.dim();
            for i in 0..n {
                buf.push_str(&(t.first_frame + i).to_string());
                for joint in 0..j {
                    for ch in 0..c {
                        buf.push(',');
                        buf.push_str(&t.data[[i, ch, joint]].to_string());
                    }
                }
                buf.push('\n');
            }
        }
        fs::write(&path, buf).map_err(|e| Error::io(&path, e))?;
    }
    if let Some(labels) = &corpus.frame_labels {
        let dir = root.join(LABEL_DIR);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        for (vid, l) in labels {
            let path = dir.join(format!("{vid}.txt"));
            let mut f = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
            let text: String = l.iter().map(|v| format!("{v}\n")).collect();
            f.write_all(text.as_bytes()).map_err(|e| Error::io(&path, e))?;
        }
    }
    Ok(())
}
