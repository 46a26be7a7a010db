//! Glue between datasets, networks, the linker and the metrics: clip
//! assembly with targets, training samples, and clip-level evaluation.

use std::collections::BTreeMap;

use limbpose_core::clips::{build_clips, AnnotatedFrame, ClipConfig};
use limbpose_core::dataset::{AnnotationRecord, FrameSpec};
use limbpose_core::geometry::Pose;
use limbpose_core::linker::{estimate_pose, LinkerParams, PoseEstimate};
use limbpose_core::metrics::{binarize, MetricsCollector};
use limbpose_core::synth::SyntheticSequence;
use limbpose_core::targets::{build_target_stack, MapGenConfig, MapKind, MapStack};
use limbpose_core::{dataset::Preprocess, Limb, SkeletonModel, NUM_MAPS};
use limbpose_nets::infer::{clip_to_tensor, regression_input, stack_to_tensor, tensor_to_stack, Variant};
use limbpose_nets::train::Samples;
use limbpose_nets::{Network, RegressionInput, Task, Tensor};

use crate::{CliError, Result};

/// A clip with its depth input, both target stacks and the annotated poses
/// (visible joints, working coordinates).
#[derive(Debug, Clone)]
pub struct ClipData {
    pub video_id: String,
    pub source_indices: Vec<usize>,
    pub depth: Tensor,
    pub affinity: Tensor,
    pub confidence: Tensor,
    pub ground_truth: Vec<Pose>,
}

impl ClipData {
    pub fn frames(&self) -> usize {
        self.source_indices.len()
    }
}

/// Builds clips over `frames` and attaches targets from `records`, which
/// must annotate every frame.
pub fn assemble_clips(
    video_id: &str,
    frames: &[AnnotatedFrame],
    records: &[AnnotationRecord],
    clip_cfg: &ClipConfig,
    maps: &MapGenConfig,
    spec: &FrameSpec,
) -> Result<Vec<ClipData>> {
    let by_index: BTreeMap<usize, &AnnotationRecord> = records.iter().map(|r| (r.frame_index, r)).collect();
    let mut out = Vec::new();
    for clip in build_clips(video_id, frames, clip_cfg)? {
        let recs = clip
            .source_indices
            .iter()
            .map(|i| {
                by_index.get(i).map(|r| (*r).clone()).ok_or_else(|| {
                    CliError::Validation(format!("video `{video_id}` frame {i} has no annotation"))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let affinity = build_target_stack(&recs, &clip.source_indices, MapKind::Affinity, maps, spec)?;
        let confidence = build_target_stack(&recs, &clip.source_indices, MapKind::Confidence, maps, spec)?;
        out.push(ClipData {
            video_id: video_id.to_string(),
            depth: clip_to_tensor(&clip)?,
            affinity: stack_to_tensor(&affinity),
            confidence: stack_to_tensor(&confidence),
            ground_truth: recs.iter().map(AnnotationRecord::pose).collect(),
            source_indices: clip.source_indices,
        });
    }
    Ok(out)
}

pub fn synthetic_clips(
    seq: &SyntheticSequence,
    pre: &Preprocess,
    clip_cfg: &ClipConfig,
    maps: &MapGenConfig,
) -> Result<Vec<ClipData>> {
    assemble_clips(
        &seq.video_id,
        &seq.annotated_frames(pre),
        &seq.records,
        clip_cfg,
        maps,
        &seq.frame,
    )
}

/// Depth clips paired with affinity targets.
pub fn detection_samples(clips: &[ClipData]) -> Samples {
    let mut s = Samples::default();
    for c in clips {
        s.push(c.depth.clone(), c.affinity.clone());
    }
    s
}

/// Where the affinity half of a 21-channel regression input comes from.
pub enum AffinitySource<'a> {
    GroundTruth,
    Detection(&'a mut Network),
}

/// Regression inputs paired with confidence targets.
pub fn regression_samples(clips: &[ClipData], input: RegressionInput, source: AffinitySource) -> Result<Samples> {
    let mut s = Samples::default();
    let mut source = source;
    for c in clips {
        let x = match (input, &mut source) {
            (RegressionInput::DepthOnly, _) => c.depth.clone(),
            (RegressionInput::DepthAndAffinity, AffinitySource::GroundTruth) => {
                regression_input(&c.depth, &c.affinity)?
            }
            (RegressionInput::DepthAndAffinity, AffinitySource::Detection(det)) => {
                let aff = det.predict(&c.depth)?;
                regression_input(&c.depth, &aff)?
            }
        };
        s.push(x, c.confidence.clone());
    }
    Ok(s)
}

#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub linker: LinkerParams,
    /// Threshold used to binarize predicted and target maps for DSC and recall.
    pub mask_threshold: f32,
    /// Zero the predicted maps of this limb before linking.
    pub ablate: Option<Limb>,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            linker: LinkerParams::default(),
            mask_threshold: 0.5,
            ablate: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ClipResult {
    pub video_id: String,
    pub source_indices: Vec<usize>,
    /// Maps handed to the linker.
    pub maps: MapStack,
    pub estimates: Vec<PoseEstimate>,
    pub seconds_per_image: f64,
}

/// Runs one variant over clips, feeding `collector` with DSC/recall of the
/// linker input against the targets of the same kind, per-limb RMSD and
/// timing.
pub fn evaluate_clips(
    variant: Variant,
    mut detection: Option<&mut Network>,
    mut regression: Option<&mut Network>,
    clips: &[ClipData],
    opts: &EvalOptions,
    collector: &mut MetricsCollector,
) -> Result<Vec<ClipResult>> {
    let skeleton = SkeletonModel::new();
    let mut out = Vec::with_capacity(clips.len());
    for c in clips {
        let start = std::time::Instant::now();
        let (mut maps, target) = match variant {
            Variant::DetectionOnly => {
                let det = need(detection.as_deref_mut(), Task::Detection)?;
                (tensor_to_stack(&det.predict(&c.depth)?, 0, MapKind::Affinity)?, &c.affinity)
            }
            Variant::Full => {
                let det = need(detection.as_deref_mut(), Task::Detection)?;
                let aff = det.predict(&c.depth)?;
                let reg = need(regression.as_deref_mut(), Task::Regression)?;
                let conf = reg.predict(&regression_input(&c.depth, &aff)?)?;
                (tensor_to_stack(&conf, 0, MapKind::Confidence)?, &c.confidence)
            }
            Variant::RegressionOnly => {
                let reg = need(regression.as_deref_mut(), Task::Regression)?;
                let conf = reg.predict(&c.depth)?;
                (tensor_to_stack(&conf, 0, MapKind::Confidence)?, &c.confidence)
            }
        };
        if let Some(limb) = opts.ablate {
            maps.zero_channels(&skeleton.limb_channels(limb));
        }
        let estimates = estimate_pose(&maps, &opts.linker, &skeleton)?;
        let seconds = start.elapsed().as_secs_f64() / c.frames() as f64;
        let target = tensor_to_stack(target, 0, maps.kind)?;
        for t in 0..c.frames() {
            for ch in 0..NUM_MAPS {
                let pred = binarize(maps.map(t, ch), opts.mask_threshold);
                let gt = binarize(target.map(t, ch), opts.mask_threshold);
                collector.add_detection(ch, pred.view(), gt.view())?;
            }
            collector.add_pose(&estimates[t].pose(), &c.ground_truth[t]);
        }
        collector.add_timing(seconds);
        out.push(ClipResult {
            video_id: c.video_id.clone(),
            source_indices: c.source_indices.clone(),
            maps,
            estimates,
            seconds_per_image: seconds,
        });
    }
    Ok(out)
}

fn need(net: Option<&mut Network>, task: Task) -> Result<&mut Network> {
    let net = net.ok_or_else(|| CliError::Dependency(format!("a {task:?} network is required")))?;
    if net.task() != task {
        return Err(CliError::Validation(format!("expected a {task:?} network, got {:?}", net.task())));
    }
    Ok(net)
}
