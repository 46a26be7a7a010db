//! Declarative pipeline configuration, read from a single TOML file.
//!
//! Relative paths are resolved against the directory holding the file, and
//! the resolved configuration is embedded in every checkpoint and report.

use std::fs;
use std::path::{Path, PathBuf};

use limbpose_core::clips::ClipConfig;
use limbpose_core::dataset::{FrameSpec, Preprocess, ANNOTATION_CADENCE};
use limbpose_core::linker::LinkerParams;
use limbpose_core::targets::MapGenConfig;
use limbpose_nets::train::TrainConfig;
use limbpose_nets::{DetectionNetSpec, RegressionInput, RegressionNetSpec};
use serde::{Deserialize, Serialize};

use crate::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    /// Dataset manifest listing `<video_dir> <annotations.csv>` pairs.
    pub manifest: PathBuf,
    /// Root of prepared data, checkpoints, logs and reports.
    pub output: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            manifest: PathBuf::from("manifest.txt"),
            output: PathBuf::from("runs"),
        }
    }
}

impl Paths {
    pub fn prepared(&self) -> PathBuf {
        self.output.join("prepared")
    }

    pub fn checkpoints(&self) -> PathBuf {
        self.output.join("checkpoints")
    }

    pub fn logs(&self) -> PathBuf {
        self.output.join("logs")
    }

    pub fn reports(&self) -> PathBuf {
        self.output.join("reports")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClipSettings {
    pub train: ClipConfig,
    /// Used for validation and test clips.
    pub test: ClipConfig,
}

impl Default for ClipSettings {
    fn default() -> Self {
        ClipSettings {
            train: ClipConfig::TRAIN,
            test: ClipConfig::TEST,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSettings {
    pub seed: u64,
}

impl Default for SplitSettings {
    fn default() -> Self {
        SplitSettings { seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectionSettings {
    pub base_width: usize,
    pub skip_connections: bool,
    pub seed: u64,
    pub train: TrainConfig,
}

impl Default for DetectionSettings {
    fn default() -> Self {
        DetectionSettings {
            base_width: 64,
            skip_connections: false,
            seed: 0,
            train: TrainConfig::detection(),
        }
    }
}

/// Where the full variant's regression stage gets its affinity input
/// during training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AffinityInput {
    /// Inference of the trained detection network.
    #[default]
    Detection,
    /// Ground-truth affinity maps.
    GroundTruth,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegressionSettings {
    pub channels: Vec<usize>,
    pub kernels: Vec<usize>,
    pub affinity_input: AffinityInput,
    pub seed: u64,
    pub train: TrainConfig,
}

impl Default for RegressionSettings {
    fn default() -> Self {
        RegressionSettings {
            channels: vec![64, 128, 256, 256, 256],
            kernels: vec![3, 3, 3, 3, 1],
            affinity_input: AffinityInput::Detection,
            seed: 0,
            train: TrainConfig::regression(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationSettings {
    /// Threshold binarizing predicted and target maps for DSC and recall.
    pub mask_threshold: f32,
    /// Significance level of paired comparisons between reports.
    pub alpha: f64,
    pub overlays: bool,
}

impl Default for EvaluationSettings {
    fn default() -> Self {
        EvaluationSettings {
            mask_threshold: 0.5,
            alpha: 0.05,
            overlays: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub paths: Paths,
    pub frame: FrameSpec,
    pub preprocess: Preprocess,
    /// Raw frames between two annotated frames.
    pub cadence: usize,
    pub clips: ClipSettings,
    pub maps: MapGenConfig,
    pub split: SplitSettings,
    pub detection: DetectionSettings,
    pub regression: RegressionSettings,
    pub linker: LinkerParams,
    pub evaluation: EvaluationSettings,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            paths: Paths::default(),
            frame: FrameSpec::default(),
            preprocess: Preprocess::default(),
            cadence: ANNOTATION_CADENCE,
            clips: ClipSettings::default(),
            maps: MapGenConfig::default(),
            split: SplitSettings::default(),
            detection: DetectionSettings::default(),
            regression: RegressionSettings::default(),
            linker: LinkerParams::default(),
            evaluation: EvaluationSettings::default(),
        }
    }
}

impl PipelineConfig {
    /// Parses TOML and resolves relative paths against `base`.
    pub fn from_toml(text: &str, base: &Path) -> Result<Self> {
        let mut cfg: PipelineConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.paths.manifest = base.join(&cfg.paths.manifest);
        cfg.paths.output = base.join(&cfg.paths.output);
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_toml(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("configuration serializes")
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("configuration serializes")
    }

    /// Checks every sub-configuration and that the manifest exists.
    pub fn validate(&self) -> Result<()> {
        self.validate_settings()?;
        if !self.paths.manifest.is_file() {
            return Err(CliError::Config(format!(
                "manifest {} does not exist",
                self.paths.manifest.display()
            )));
        }
        Ok(())
    }

    /// Checks everything except the filesystem.
    pub fn validate_settings(&self) -> Result<()> {
        let wrap = |what: &str, e: &dyn std::fmt::Display| CliError::Config(format!("{what}: {e}"));
        self.frame.validate().map_err(|e| wrap("frame", &e))?;
        if !(self.preprocess.depth_scale > 0.0 && self.preprocess.depth_scale.is_finite()) {
            return Err(CliError::Config(format!(
                "preprocess: depth_scale must be positive, got {}",
                self.preprocess.depth_scale
            )));
        }
        if self.cadence == 0 {
            return Err(CliError::Config("cadence must be at least 1".into()));
        }
        self.clips.train.validate().map_err(|e| wrap("clips.train", &e))?;
        self.clips.test.validate().map_err(|e| wrap("clips.test", &e))?;
        if self.clips.train.frames_per_clip != self.clips.test.frames_per_clip {
            return Err(CliError::Config(format!(
                "clips: training and test clips differ in length ({} vs {})",
                self.clips.train.frames_per_clip, self.clips.test.frames_per_clip
            )));
        }
        self.maps.validate().map_err(|e| wrap("maps", &e))?;
        self.linker.validate().map_err(|e| wrap("linker", &e))?;
        self.detection_spec().validate().map_err(|e| wrap("detection", &e))?;
        self.regression_spec(RegressionInput::DepthAndAffinity)
            .validate()
            .map_err(|e| wrap("regression", &e))?;
        self.detection.train.validate().map_err(|e| wrap("detection.train", &e))?;
        self.regression.train.validate().map_err(|e| wrap("regression.train", &e))?;
        if !(0.0..=1.0).contains(&self.evaluation.mask_threshold) {
            return Err(CliError::Config(format!(
                "evaluation: mask_threshold {} outside [0, 1]",
                self.evaluation.mask_threshold
            )));
        }
        if !(self.evaluation.alpha > 0.0 && self.evaluation.alpha < 1.0) {
            return Err(CliError::Config(format!(
                "evaluation: alpha {} outside (0, 1)",
                self.evaluation.alpha
            )));
        }
        Ok(())
    }

    pub fn frames_per_clip(&self) -> usize {
        self.clips.train.frames_per_clip
    }

    pub fn detection_spec(&self) -> DetectionNetSpec {
        DetectionNetSpec {
            base_width: self.detection.base_width,
            skip_connections: self.detection.skip_connections,
            ..DetectionNetSpec::new(self.frame.height, self.frame.width, self.frames_per_clip())
        }
    }

    pub fn regression_spec(&self, input: RegressionInput) -> RegressionNetSpec {
        RegressionNetSpec {
            channels: self.regression.channels.clone(),
            kernels: self.regression.kernels.clone(),
            ..RegressionNetSpec::new(self.frame.height, self.frame.width, self.frames_per_clip(), input)
        }
    }
}
