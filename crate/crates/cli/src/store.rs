//! Prepared clips on disk: a JSON index plus three `.npy` arrays per clip,
//! each shaped `(channels, frames, height, width)`.

use std::fs;
use std::path::PathBuf;

use limbpose_core::clips::ClipConfig;
use limbpose_core::dataset::{FrameSpec, Preprocess};
use limbpose_core::geometry::Pose;
use limbpose_core::targets::MapGenConfig;
use limbpose_nets::Tensor;
use ndarray::Array4;
use ndarray_npy::{read_npy, write_npy};
use serde::{Deserialize, Serialize};

use crate::config::{ClipSettings, PipelineConfig};
use crate::pipeline::ClipData;
use crate::{CliError, Result};

pub const INDEX_FILE: &str = "index.json";

/// Settings that determine the prepared artifacts; training and evaluation
/// refuse to run when they differ from the active configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreparedSettings {
    pub frame: FrameSpec,
    pub preprocess: Preprocess,
    pub cadence: usize,
    pub clips: ClipSettings,
    pub maps: MapGenConfig,
    pub split_seed: u64,
}

impl PreparedSettings {
    pub fn of(cfg: &PipelineConfig) -> Self {
        PreparedSettings {
            frame: cfg.frame,
            preprocess: cfg.preprocess,
            cadence: cfg.cadence,
            clips: cfg.clips,
            maps: cfg.maps,
            split_seed: cfg.split.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipEntry {
    /// File stem of the clip's arrays.
    pub id: String,
    pub video_id: String,
    pub source_indices: Vec<usize>,
    /// Visible annotated joints per frame, working coordinates.
    pub ground_truth: Vec<Pose>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Validation, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }

    pub fn clip_config(self, clips: &ClipSettings) -> ClipConfig {
        match self {
            Split::Train => clips.train,
            Split::Validation | Split::Test => clips.test,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipIndex {
    pub settings: PreparedSettings,
    pub train: Vec<ClipEntry>,
    pub validation: Vec<ClipEntry>,
    pub test: Vec<ClipEntry>,
}

impl ClipIndex {
    pub fn entries(&self, split: Split) -> &[ClipEntry] {
        match split {
            Split::Train => &self.train,
            Split::Validation => &self.validation,
            Split::Test => &self.test,
        }
    }

    pub fn entries_mut(&mut self, split: Split) -> &mut Vec<ClipEntry> {
        match split {
            Split::Train => &mut self.train,
            Split::Validation => &mut self.validation,
            Split::Test => &mut self.test,
        }
    }
}

/// Directory layout of prepared data.
#[derive(Debug, Clone)]
pub struct Store {
    pub root: PathBuf,
}

impl Store {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Store { root: root.into() }
    }

    pub fn index_path(&self) -> PathBuf {
        self.root.join(INDEX_FILE)
    }

    fn clip_dir(&self) -> PathBuf {
        self.root.join("clips")
    }

    fn array_path(&self, id: &str, kind: &str) -> PathBuf {
        self.clip_dir().join(format!("{id}.{kind}.npy"))
    }

    pub fn write_clip(&self, id: &str, clip: &ClipData) -> Result<()> {
        let dir = self.clip_dir();
        fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
        for (kind, t) in [("depth", &clip.depth), ("affinity", &clip.affinity), ("confidence", &clip.confidence)] {
            let path = self.array_path(id, kind);
            write_npy(&path, &tensor_to_array(t)).map_err(|e| CliError::format(&path, e))?;
        }
        Ok(())
    }

    pub fn read_clip(&self, entry: &ClipEntry) -> Result<ClipData> {
        let read = |kind: &str| -> Result<Tensor> {
            let path = self.array_path(&entry.id, kind);
            let a: Array4<f32> = read_npy(&path).map_err(|e| CliError::format(&path, e))?;
            array_to_tensor(a)
        };
        let clip = ClipData {
            video_id: entry.video_id.clone(),
            source_indices: entry.source_indices.clone(),
            depth: read("depth")?,
            affinity: read("affinity")?,
            confidence: read("confidence")?,
            ground_truth: entry.ground_truth.clone(),
        };
        let t = clip.depth.dims()[0];
        if t != clip.frames() || clip.ground_truth.len() != t {
            return Err(CliError::format(
                self.array_path(&entry.id, "depth"),
                format!("{t} frames stored for {} indexed", clip.frames()),
            ));
        }
        Ok(clip)
    }

    pub fn write_index(&self, index: &ClipIndex) -> Result<()> {
        fs::create_dir_all(&self.root).map_err(|e| CliError::io(&self.root, e))?;
        let path = self.index_path();
        let text = serde_json::to_string_pretty(index).expect("index serializes");
        fs::write(&path, text).map_err(|e| CliError::io(&path, e))
    }

    /// Loads the index, failing with a dependency error when `prepare` has
    /// not run and a validation error when it ran with other settings.
    pub fn load_index(&self, cfg: &PipelineConfig) -> Result<ClipIndex> {
        let path = self.index_path();
        if !path.is_file() {
            return Err(CliError::Dependency(format!(
                "no prepared data at {}; run `prepare` first",
                self.root.display()
            )));
        }
        let text = fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
        let index: ClipIndex = serde_json::from_str(&text).map_err(|e| CliError::format(&path, e))?;
        if index.settings != PreparedSettings::of(cfg) {
            return Err(CliError::Validation(format!(
                "{} was prepared with different frame, clip, map or split settings; run `prepare` again",
                path.display()
            )));
        }
        Ok(index)
    }

    pub fn load_split(&self, index: &ClipIndex, split: Split) -> Result<Vec<ClipData>> {
        index.entries(split).iter().map(|e| self.read_clip(e)).collect()
    }
}

fn tensor_to_array(t: &Tensor) -> Array4<f32> {
    let [_, c, f, h, w] = t.shape;
    Array4::from_shape_vec((c, f, h, w), t.sample(0).to_vec()).expect("tensor length matches its shape")
}

fn array_to_tensor(a: Array4<f32>) -> Result<Tensor> {
    let (c, f, h, w) = a.dim();
    Ok(Tensor::from_vec([1, c, f, h, w], a.iter().copied().collect())?)
}

/// File stem from a video id and the first source frame.
pub fn clip_id_of(split: Split, video_id: &str, first: usize) -> String {
    format!("{}-{video_id}-{first:06}", split.name())
}
