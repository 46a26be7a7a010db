//! Temporal clips built by sliding a fixed-length window over annotated
//! frames.
//!
//! `overlap` is the number of frames shared by consecutive clips, so the
//! window advances by `frames_per_clip - overlap` frames each step.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClipConfig {
    pub frames_per_clip: usize,
    pub overlap: usize,
}

impl ClipConfig {
    pub const TRAIN: ClipConfig = ClipConfig {
        frames_per_clip: 3,
        overlap: 2,
    };
    pub const TEST: ClipConfig = ClipConfig {
        frames_per_clip: 3,
        overlap: 0,
    };

    pub fn new(frames_per_clip: usize, overlap: usize) -> Result<Self> {
        let cfg = ClipConfig {
            frames_per_clip,
            overlap,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.frames_per_clip == 0 {
            return Err(Error::Parameter("frames_per_clip must be at least 1".into()));
        }
        if self.overlap >= self.frames_per_clip {
            return Err(Error::Parameter(format!(
                "overlap {} must be smaller than frames_per_clip {}",
                self.overlap, self.frames_per_clip
            )));
        }
        Ok(())
    }

    pub fn stride(&self) -> usize {
        self.frames_per_clip - self.overlap
    }

    pub fn clip_count(&self, n: usize) -> usize {
        if n < self.frames_per_clip {
            0
        } else {
            (n - self.frames_per_clip) / self.stride() + 1
        }
    }
}

impl Default for ClipConfig {
    fn default() -> Self {
        ClipConfig::TRAIN
    }
}

/// Start positions of every full window over a list of `n` frames.
pub fn window_starts(n: usize, cfg: &ClipConfig) -> Result<Vec<usize>> {
    cfg.validate()?;
    if n < cfg.frames_per_clip {
        return Err(Error::InsufficientFrames {
            needed: cfg.frames_per_clip,
            got: n,
        });
    }
    Ok((0..cfg.clip_count(n)).map(|i| i * cfg.stride()).collect())
}

/// One preprocessed annotated frame.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotatedFrame {
    pub frame_index: usize,
    pub depth: Array2<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DepthClip {
    pub video_id: String,
    pub source_indices: Vec<usize>,
    pub frames: Vec<Array2<f32>>,
}

impl DepthClip {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// (height, width) of each frame.
    pub fn frame_dim(&self) -> (usize, usize) {
        self.frames.first().map(|f| f.dim()).unwrap_or((0, 0))
    }
}

/// Builds clips over frames ordered by strictly increasing frame index.
/// Trailing frames that do not fill a window are dropped.
pub fn build_clips(video_id: &str, frames: &[AnnotatedFrame], cfg: &ClipConfig) -> Result<Vec<DepthClip>> {
    if let Some(pair) = frames.windows(2).find(|w| w[1].frame_index <= w[0].frame_index) {
        return Err(Error::Consistency(format!(
            "frame indices must be strictly increasing ({} then {})",
            pair[0].frame_index, pair[1].frame_index
        )));
    }
    if let Some(first) = frames.first() {
        let dim = first.depth.dim();
        if let Some(f) = frames.iter().find(|f| f.depth.dim() != dim) {
            return Err(Error::Shape(format!(
                "frame {} is {:?}, expected {:?}",
                f.frame_index,
                f.depth.dim(),
                dim
            )));
        }
    }
    let starts = window_starts(frames.len(), cfg)?;
    Ok(starts
        .into_iter()
        .map(|s| {
            let window = &frames[s..s + cfg.frames_per_clip];
            DepthClip {
                video_id: video_id.to_string(),
                source_indices: window.iter().map(|f| f.frame_index).collect(),
                frames: window.iter().map(|f| f.depth.clone()).collect(),
            }
        })
        .collect())
}

/// Nominal clip length in seconds, counting `cadence` raw frames per
/// annotated frame.
pub fn clip_duration(cfg: &ClipConfig, cadence: usize, fps: f64) -> f64 {
    (cfg.frames_per_clip * cadence) as f64 / fps
}
