//! Sequence directories and per-frame output records.
//!
//! A sequence directory holds `frame_<j>.pgm`, `.ppm` or `.dfm1` files plus
//! `gt.txt`. Frames are ordered by `j`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::tracker::FrameResult;
use super::Frame;
use crate::error::{Error, Result};
use crate::image::GrayImage;
use crate::io::annotations::{self, Annotation};
use crate::io::{dfm1, pnm};
use crate::numerics::ScoreMap;

#[derive(Clone, Debug)]
pub struct Sequence {
    pub name: String,
    pub frames: Vec<Frame>,
    pub annotations: Vec<Annotation>,
}

impl Sequence {
    /// Ground truth for `frame_index`, if annotated.
    pub fn ground_truth(&self, frame_index: usize) -> Option<&Annotation> {
        self.annotations.iter().find(|a| a.frame_index == frame_index)
    }
}

/// Lists `frame_<j>.<ext>` files in `dir`, sorted by `j`.
pub fn frame_files(dir: &Path) -> Result<Vec<(usize, PathBuf)>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut out = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let Some(name) = path.file_name().and_then(|n| n.to_str()) else {
            continue;
        };
        let Some(rest) = name.strip_prefix("frame_") else {
            continue;
        };
        let Some((num, ext)) = rest.split_once('.') else {
            continue;
        };
        if !matches!(ext, "pgm" | "ppm" | "dfm1") {
            continue;
        }
        if let Ok(j) = num.parse::<usize>() {
            out.push((j, path));
        }
    }
    out.sort();
    if let Some(w) = out.windows(2).find(|w| w[0].0 == w[1].0) {
        return Err(Error::Format {
            path: dir.display().to_string(),
            msg: format!("frame {} appears more than once", w[0].0),
        });
    }
    Ok(out)
}

/// Reads one frame file; DFM1 cells cover `feature_stride` pixels.
pub fn load_frame(index: usize, path: &Path, feature_stride: f64) -> Result<Frame> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("dfm1") => Frame::features(index, dfm1::read(path)?, feature_stride),
        _ => Ok(Frame::image(index, pnm::read(path)?)),
    }
}

pub fn load_sequence(dir: &Path, feature_stride: f64) -> Result<Sequence> {
    let files = frame_files(dir)?;
    if files.is_empty() {
        return Err(Error::Format {
            path: dir.display().to_string(),
            msg: "no frame_<j>.pgm/.ppm/.dfm1 files".into(),
        });
    }
    let frames = files
        .iter()
        .map(|(j, p)| load_frame(*j, p, feature_stride))
        .collect::<Result<Vec<_>>>()?;
    let annotations = annotations::read(&dir.join("gt.txt"))?;
    if annotations.is_empty() {
        return Err(Error::Format {
            path: dir.join("gt.txt").display().to_string(),
            msg: "no annotations".into(),
        });
    }
    let name = dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(Sequence {
        name,
        frames,
        annotations,
    })
}

/// Version tag of the `track` JSON-lines layout.
pub const TRACK_SCHEMA: &str = "dfp-track/1";

/// One line of `track` output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub frame_index: usize,
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
    pub confidence: f64,
    pub updated: bool,
}

impl From<&FrameResult> for FrameRecord {
    fn from(r: &FrameResult) -> Self {
        FrameRecord {
            frame_index: r.frame_index,
            cx: r.target.cx,
            cy: r.target.cy,
            w: r.target.w,
            h: r.target.h,
            confidence: r.confidence,
            updated: r.updated,
        }
    }
}

impl FrameRecord {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("plain struct serializes")
    }
}

/// Score map as an 8-bit image, min-max normalized.
pub fn score_image(scores: &ScoreMap<f64>) -> GrayImage {
    let lo = scores.as_slice().iter().copied().fold(f64::INFINITY, f64::min);
    let hi = scores.max_value();
    let span = if hi > lo { hi - lo } else { 1.0 };
    let (h, w) = scores.dims();
    GrayImage::from_fn(w, h, |r, c| (scores.get(r, c) - lo) / span)
}

pub fn write_score_dump(dir: &Path, result: &FrameResult) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join(format!("scores_{:05}.pgm", result.frame_index));
    pnm::write_pgm(&path, &score_image(&result.scores))
}
