//! Loading episodes from a frame directory or a TSV manifest.
//!
//! A directory source holds image files whose stems are integers
//! (`000001.png`); they are ordered numerically. A manifest source is a
//! UTF-8 text file with one `path<TAB>timestamp_seconds` record per line,
//! paths relative to the manifest's directory.

use std::fs;
use std::path::{Path, PathBuf};

use image::RgbImage;
use thiserror::Error;

use crate::model::{Frame, ModelError, VideoMeta};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("EMPTY_SOURCE: no frames found in {0}")]
    EmptySource(PathBuf),
    #[error("DIM_MISMATCH: {path} is {got:?}, expected {expected:?}")]
    DimMismatch { path: PathBuf, expected: (u32, u32), got: (u32, u32) },
    #[error("BAD_MANIFEST: line {line}: {reason}")]
    BadManifest { line: usize, reason: String },
    #[error("INDEX_OUT_OF_RANGE: {index} not in [0, {frame_count})")]
    IndexOutOfRange { index: i64, frame_count: usize },
    #[error("DECODE_FAILURE: {path}: {reason}")]
    DecodeFailure { path: PathBuf, reason: String },
    #[error("invalid source metadata: {0}")]
    Meta(#[from] ModelError),
    #[error("io error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl IngestError {
    pub fn code(&self) -> &'static str {
        match self {
            Self::EmptySource(_) => "EMPTY_SOURCE",
            Self::DimMismatch { .. } => "DIM_MISMATCH",
            Self::BadManifest { .. } => "BAD_MANIFEST",
            Self::IndexOutOfRange { .. } => "INDEX_OUT_OF_RANGE",
            Self::DecodeFailure { .. } => "DECODE_FAILURE",
            Self::Meta(_) => "INVALID_META",
            Self::Io { .. } => "IO_ERROR",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct FrameEntry {
    path: PathBuf,
    timestamp: Option<f64>,
}

/// Read-only, ordered view over the frames of one episode.
#[derive(Debug, Clone)]
pub struct FrameSource {
    pub root: PathBuf,
    pub meta: VideoMeta,
    entries: Vec<FrameEntry>,
}

const IMAGE_EXTENSIONS: &[&str] = &["png", "jpg", "jpeg"];

fn is_image(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
        .unwrap_or(false)
}

/// Open a frame directory or manifest file. `fps_hint` supplies timestamps
/// (`index / fps`) when the source carries none.
pub fn open_frame_source(path: impl AsRef<Path>, fps_hint: f64) -> Result<FrameSource, IngestError> {
    let path = path.as_ref();
    let entries = if path.is_dir() {
        list_directory(path)?
    } else if path.is_file() {
        read_manifest(path)?
    } else {
        return Err(IngestError::EmptySource(path.to_path_buf()));
    };
    if entries.is_empty() {
        return Err(IngestError::EmptySource(path.to_path_buf()));
    }

    let mut dims = None;
    for entry in &entries {
        let got = image::image_dimensions(&entry.path).map_err(|e| IngestError::DecodeFailure {
            path: entry.path.clone(),
            reason: e.to_string(),
        })?;
        match dims {
            None => dims = Some(got),
            Some(expected) if expected != got => {
                return Err(IngestError::DimMismatch { path: entry.path.clone(), expected, got });
            }
            Some(_) => {}
        }
    }
    let (width, height) = dims.expect("non-empty entries");
    let meta = VideoMeta::new(entries.len(), width, height, fps_hint, path.display().to_string())?;
    Ok(FrameSource { root: path.to_path_buf(), meta, entries })
}

fn list_directory(dir: &Path) -> Result<Vec<FrameEntry>, IngestError> {
    let io_err = |source| IngestError::Io { path: dir.to_path_buf(), source };
    let mut numbered = Vec::new();
    for item in fs::read_dir(dir).map_err(io_err)? {
        let path = item.map_err(io_err)?.path();
        if !path.is_file() || !is_image(&path) {
            continue;
        }
        let Some(n) = path.file_stem().and_then(|s| s.to_str()).and_then(|s| s.parse::<u64>().ok()) else {
            continue;
        };
        numbered.push((n, path));
    }
    numbered.sort();
    Ok(numbered.into_iter().map(|(_, path)| FrameEntry { path, timestamp: None }).collect())
}

fn read_manifest(file: &Path) -> Result<Vec<FrameEntry>, IngestError> {
    let text = fs::read_to_string(file).map_err(|e| IngestError::BadManifest { line: 0, reason: e.to_string() })?;
    let base = file.parent().unwrap_or(Path::new("."));
    let mut entries: Vec<FrameEntry> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let bad = |reason: String| IngestError::BadManifest { line: line_no, reason };
        let (p, ts) = line.split_once('\t').ok_or_else(|| bad("expected path<TAB>timestamp".into()))?;
        let timestamp: f64 = ts.trim().parse().map_err(|_| bad(format!("bad timestamp {ts:?}")))?;
        if !(timestamp.is_finite() && timestamp >= 0.0) {
            return Err(bad(format!("timestamp {timestamp} must be finite and >= 0")));
        }
        if let Some(prev) = entries.last().and_then(|e| e.timestamp) {
            if timestamp <= prev {
                return Err(bad(format!("timestamp {timestamp} does not increase over {prev}")));
            }
        }
        let p = PathBuf::from(p);
        let path = if p.is_absolute() { p } else { base.join(p) };
        entries.push(FrameEntry { path, timestamp: Some(timestamp) });
    }
    Ok(entries)
}

impl FrameSource {
    pub fn frame_count(&self) -> usize {
        self.meta.frame_count
    }

    pub fn timestamp(&self, index: usize) -> f64 {
        self.entries[index]
            .timestamp
            .unwrap_or(index as f64 / self.meta.fps)
    }

    pub fn frame_path(&self, index: usize) -> &Path {
        &self.entries[index].path
    }

    /// Decode frame `index` as 8-bit RGB.
    pub fn read_frame(&self, index: i64) -> Result<Frame, IngestError> {
        let frame_count = self.frame_count();
        let idx = usize::try_from(index)
            .ok()
            .filter(|&i| i < frame_count)
            .ok_or(IngestError::IndexOutOfRange { index, frame_count })?;
        let path = &self.entries[idx].path;
        let pixels: RgbImage = image::open(path)
            .map_err(|e| IngestError::DecodeFailure { path: path.clone(), reason: e.to_string() })?
            .into_rgb8();
        let expected = (self.meta.width, self.meta.height);
        if pixels.dimensions() != expected {
            return Err(IngestError::DimMismatch { path: path.clone(), expected, got: pixels.dimensions() });
        }
        Ok(Frame { index: idx, timestamp: self.timestamp(idx), pixels })
    }
}
