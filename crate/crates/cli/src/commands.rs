//! The pipeline commands: synth, prepare, train, evaluate and infer.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use limbpose_core::clips::{build_clips, AnnotatedFrame};
use limbpose_core::dataset::{
    check_cadence, frame_path, group_by_video, list_frames, load_annotations, load_depth_frame_with, make_split,
    AnnotationRecord, FrameSpec, Manifest, Preprocess,
};
use limbpose_core::linker::{estimate_pose, FramePoseRecord, PoseEstimate, VideoPoses};
use limbpose_core::metrics::{
    aggregate_report, paired_ttest, rmsd, write_detection_csv, write_limb_csv, EvaluationReport, MetricsCollector,
    StatTestConfig, TTestOutcome,
};
use limbpose_core::synth::{challenge_variant, generate_sequence, write_dataset, ChallengeKind, PuppetConfig};
use limbpose_core::{Limb, SkeletonModel};
use limbpose_nets::checkpoint::{load_checkpoint, save_checkpoint};
use limbpose_nets::infer::{infer, Variant};
use limbpose_nets::train::{train, write_log_csv, TrainReport};
use limbpose_nets::{NetSpec, Network, RegressionInput, Task};
use serde::{Deserialize, Serialize};

use crate::config::{AffinityInput, PipelineConfig};
use crate::pipeline::{detection_samples, evaluate_clips, regression_samples, AffinitySource, ClipData, EvalOptions};
use crate::render::write_overlay;
use crate::store::{clip_id_of, ClipEntry, ClipIndex, PreparedSettings, Split, Store};
use crate::{CliError, Result};

/// Overall median RMSD (working pixels at 128x96) published for the full
/// spatio-temporal pipeline on the clinical dataset.
pub const REFERENCE_MEDIAN_RMSD: f64 = 9.06;
/// Relative tolerance when checking a run against the reference.
pub const REFERENCE_TOLERANCE: f64 = 0.15;

// ---------------------------------------------------------------- synth

#[derive(Debug, Clone)]
pub struct SynthOptions {
    pub output: PathBuf,
    pub videos: usize,
    /// Annotated frames per video.
    pub length: usize,
    pub seed: u64,
    pub frame: FrameSpec,
    pub noise: f64,
    pub occlusion_probability: f64,
    pub challenge: Option<ChallengeKind>,
}

impl Default for SynthOptions {
    fn default() -> Self {
        SynthOptions {
            output: PathBuf::from("synth"),
            videos: 4,
            length: 20,
            seed: 0,
            frame: FrameSpec::native(128, 96, 30.0),
            noise: 2.0,
            occlusion_probability: 0.0,
            challenge: None,
        }
    }
}

/// Writes a synthetic dataset and, unless one exists, a starter
/// `pipeline.toml` next to its manifest.
pub fn synth(opts: &SynthOptions) -> Result<Manifest> {
    if opts.videos == 0 {
        return Err(CliError::Config("at least one video is required".into()));
    }
    opts.frame.validate()?;
    let configs: Vec<PuppetConfig> = (0..opts.videos)
        .map(|i| {
            let cfg = PuppetConfig {
                length: opts.length,
                noise: opts.noise,
                occlusion_probability: opts.occlusion_probability,
                seed: opts.seed + i as u64,
                ..PuppetConfig::for_frame(opts.frame)
            };
            cfg.validate().map(|_| cfg)
        })
        .collect::<limbpose_core::Result<_>>()?;
    let sequences = configs
        .iter()
        .enumerate()
        .map(|(i, cfg)| {
            let id = format!("synth_{i:03}");
            match opts.challenge {
                Some(kind) => challenge_variant(cfg, &id, kind),
                None => generate_sequence(cfg, &id),
            }
        })
        .collect::<limbpose_core::Result<Vec<_>>>()?;
    let manifest = write_dataset(&opts.output, &sequences)?;
    let config_path = opts.output.join("pipeline.toml");
    if !config_path.exists() {
        let mut cfg = PipelineConfig {
            frame: opts.frame,
            preprocess: Preprocess {
                depth_scale: 0.01,
                ..Preprocess::default()
            },
            ..PipelineConfig::default()
        };
        cfg.paths.manifest = PathBuf::from("manifest.txt");
        cfg.paths.output = PathBuf::from("runs");
        fs::write(&config_path, cfg.to_toml()).map_err(|e| CliError::io(&config_path, e))?;
    }
    log::info!("wrote {} synthetic videos to {}", sequences.len(), opts.output.display());
    Ok(manifest)
}

// -------------------------------------------------------------- prepare

/// Validates the dataset, splits it and writes clips with their targets.
/// Every problem found in the dataset is reported at once, before anything
/// is written.
pub fn prepare(cfg: &PipelineConfig) -> Result<ClipIndex> {
    cfg.validate()?;
    let manifest = Manifest::load(&cfg.paths.manifest)?;
    if manifest.entries.is_empty() {
        return Err(CliError::Config(format!(
            "manifest {} lists no videos",
            cfg.paths.manifest.display()
        )));
    }
    let mut problems = Vec::new();
    let mut records = Vec::new();
    for entry in &manifest.entries {
        let recs = match load_annotations(&entry.annotations, &cfg.frame) {
            Ok(r) => r,
            Err(e) => {
                problems.push(format!("video {}: {e}", entry.video_id));
                continue;
            }
        };
        if recs.is_empty() {
            problems.push(format!("video {}: no annotations", entry.video_id));
        }
        for r in recs.iter().filter(|r| r.video_id != entry.video_id) {
            problems.push(format!(
                "video {}: annotation file lists frame {} of video {}",
                entry.video_id, r.frame_index, r.video_id
            ));
        }
        problems.extend(check_cadence(&recs, cfg.cadence));
        for r in &recs {
            if !frame_path(&entry.frames_dir, r.frame_index).is_file() {
                problems.push(format!("video {}: frame {} is missing", entry.video_id, r.frame_index));
            }
        }
        records.extend(recs);
    }
    if !problems.is_empty() {
        return Err(CliError::Validation(problems.join("\n")));
    }

    let split = make_split(&records, cfg.split.seed, cfg.frames_per_clip())?;
    let by_video = group_by_video(&records);
    let store = Store::new(cfg.paths.prepared());
    let mut index = ClipIndex {
        settings: PreparedSettings::of(cfg),
        train: Vec::new(),
        validation: Vec::new(),
        test: Vec::new(),
    };
    for (video, parts) in &split.videos {
        let entry = manifest.get(video).expect("split videos come from the manifest");
        for kind in Split::ALL {
            let indices = match kind {
                Split::Train => &parts.train,
                Split::Validation => &parts.validation,
                Split::Test => &parts.test,
            };
            let clip_cfg = kind.clip_config(&cfg.clips);
            if clip_cfg.clip_count(indices.len()) == 0 {
                log::warn!("video {video}: {} {} frames form no clip", indices.len(), kind.name());
                continue;
            }
            let frames = indices
                .iter()
                .map(|&i| {
                    Ok(AnnotatedFrame {
                        frame_index: i,
                        depth: load_depth_frame_with(&frame_path(&entry.frames_dir, i), &cfg.frame, &cfg.preprocess)?,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let clips = crate::pipeline::assemble_clips(video, &frames, &by_video[video], &clip_cfg, &cfg.maps, &cfg.frame)?;
            for clip in clips {
                let id = clip_id_of(kind, video, clip.source_indices[0]);
                store.write_clip(&id, &clip)?;
                index.entries_mut(kind).push(ClipEntry {
                    id,
                    video_id: clip.video_id,
                    source_indices: clip.source_indices,
                    ground_truth: clip.ground_truth,
                });
            }
        }
    }
    for kind in Split::ALL {
        log::info!("{} clips: {}", kind.name(), index.entries(kind).len());
    }
    store.write_index(&index)?;
    Ok(index)
}

// ---------------------------------------------------------------- train

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Detect,
    Regress,
}

pub fn checkpoint_path(cfg: &PipelineConfig, task: Task, variant: Variant) -> PathBuf {
    let name = match (task, variant) {
        (Task::Detection, _) => "detection",
        (Task::Regression, Variant::RegressionOnly) => "regression-only",
        (Task::Regression, _) => "regression-full",
    };
    cfg.paths.checkpoints().join(format!("{name}.ckpt"))
}

/// The network spec the configuration prescribes for one stage.
pub fn expected_spec(cfg: &PipelineConfig, task: Task, variant: Variant) -> NetSpec {
    match task {
        Task::Detection => NetSpec::Detection(cfg.detection_spec()),
        Task::Regression => NetSpec::Regression(cfg.regression_spec(regression_input(variant))),
    }
}

fn regression_input(variant: Variant) -> RegressionInput {
    match variant {
        Variant::RegressionOnly => RegressionInput::DepthOnly,
        _ => RegressionInput::DepthAndAffinity,
    }
}

/// Loads a checkpoint and checks it against the configuration.
pub fn load_network(cfg: &PipelineConfig, task: Task, variant: Variant) -> Result<Network> {
    let path = checkpoint_path(cfg, task, variant);
    if !path.is_file() {
        return Err(CliError::Dependency(format!(
            "{} checkpoint {} not found; train that stage first",
            task_name(task),
            path.display()
        )));
    }
    let (net, header) = load_checkpoint(&path)?;
    let expected = expected_spec(cfg, task, variant);
    if header.spec != expected {
        return Err(CliError::Validation(format!(
            "checkpoint {} does not match the configuration: stored {}, configured {}",
            path.display(),
            describe_spec(&header.spec),
            describe_spec(&expected)
        )));
    }
    Ok(net)
}

fn affinity_source(det: Option<&mut Network>) -> AffinitySource<'_> {
    match det {
        Some(det) => AffinitySource::Detection(det),
        None => AffinitySource::GroundTruth,
    }
}

fn task_name(task: Task) -> &'static str {
    match task {
        Task::Detection => "detection",
        Task::Regression => "regression",
    }
}

fn describe_spec(spec: &NetSpec) -> String {
    match spec {
        NetSpec::Detection(d) => format!(
            "detection {}x{}x{} frames, base width {}, skips {}",
            d.width, d.height, d.frames, d.base_width, d.skip_connections
        ),
        NetSpec::Regression(r) => format!(
            "regression {}x{}x{} frames, {:?} input, widths {:?}, kernels {:?}",
            r.width, r.height, r.frames, r.input, r.channels, r.kernels
        ),
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: PathBuf,
    pub log: PathBuf,
    pub report: TrainReport,
}

/// Trains one stage of a variant on the prepared training split, selecting
/// weights on the validation split.
pub fn train_stage(cfg: &PipelineConfig, stage: Stage, variant: Variant) -> Result<TrainOutcome> {
    cfg.validate_settings()?;
    let task = match (stage, variant) {
        (Stage::Detect, Variant::RegressionOnly) => {
            return Err(CliError::Config("the regression-only variant has no detection stage".into()))
        }
        (Stage::Regress, Variant::DetectionOnly) => {
            return Err(CliError::Config("the detection-only variant has no regression stage".into()))
        }
        (Stage::Detect, _) => Task::Detection,
        (Stage::Regress, _) => Task::Regression,
    };
    let mut detection = if task == Task::Regression
        && variant == Variant::Full
        && cfg.regression.affinity_input == AffinityInput::Detection
    {
        Some(load_network(cfg, Task::Detection, Variant::Full)?)
    } else {
        None
    };
    let store = Store::new(cfg.paths.prepared());
    let index = store.load_index(cfg)?;
    for kind in [Split::Train, Split::Validation] {
        if index.entries(kind).is_empty() {
            return Err(CliError::Validation(format!("the prepared {} split has no clips", kind.name())));
        }
    }
    let train_clips = store.load_split(&index, Split::Train)?;
    let val_clips = store.load_split(&index, Split::Validation)?;

    let (mut net, tc) = match task {
        Task::Detection => (
            Network::detection(cfg.detection_spec(), cfg.detection.seed)?,
            &cfg.detection.train,
        ),
        Task::Regression => (
            Network::regression(cfg.regression_spec(regression_input(variant)), cfg.regression.seed)?,
            &cfg.regression.train,
        ),
    };
    let (train_set, val_set) = match task {
        Task::Detection => (detection_samples(&train_clips), detection_samples(&val_clips)),
        Task::Regression => {
            let input = regression_input(variant);
            let train_set = regression_samples(&train_clips, input, affinity_source(detection.as_mut()))?;
            let val_set = regression_samples(&val_clips, input, affinity_source(detection.as_mut()))?;
            (train_set, val_set)
        }
    };
    drop((train_clips, val_clips));
    log::info!(
        "training {} for the {variant:?} variant: {} training and {} validation clips, {} parameters",
        task_name(task),
        train_set.len(),
        val_set.len(),
        net.param_count()
    );
    let report = train(&mut net, &train_set, &val_set, tc, |_| {})?;

    let checkpoint = checkpoint_path(cfg, task, variant);
    let log_path = cfg
        .paths
        .logs()
        .join(checkpoint.with_extension("csv").file_name().expect("checkpoint has a file name"));
    for dir in [cfg.paths.checkpoints(), cfg.paths.logs()] {
        fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
    }
    let extra = serde_json::json!({
        "config": cfg.to_json(),
        "variant": variant,
        "best_epoch": report.best_epoch,
        "best_metric": report.best_metric,
        "initial_loss": report.initial_loss,
        "final_loss": report.final_loss,
    });
    save_checkpoint(&checkpoint, &mut net, extra)?;
    write_log_csv(&log_path, &report.log)?;
    Ok(TrainOutcome {
        checkpoint,
        log: log_path,
        report,
    })
}

// ------------------------------------------------------------- evaluate

#[derive(Debug, Clone, Default)]
pub struct EvaluateOptions {
    pub overlays: bool,
    pub ablate: Option<Limb>,
    /// Report file of another run to compare with a paired t-test.
    pub compare: Option<PathBuf>,
    /// Check the overall median RMSD against the published reference.
    pub reference_check: bool,
}

/// Per-limb RMSD of one evaluated frame; the pairing key for comparisons.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRmsd {
    pub video_id: String,
    pub frame_index: usize,
    /// In `Limb::ALL` order; `None` when undefined.
    pub rmsd: [Option<f64>; 4],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportFile {
    pub variant: Variant,
    pub ablated: Option<Limb>,
    pub config: serde_json::Value,
    pub report: EvaluationReport,
    pub frames: Vec<FrameRmsd>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimbComparison {
    pub limb: Limb,
    pub pairs: usize,
    pub outcome: Option<TTestOutcome>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReferenceCheck {
    pub reference: f64,
    pub measured: Option<f64>,
    pub relative_error: Option<f64>,
    pub within_tolerance: bool,
}

#[derive(Debug, Clone)]
pub struct EvaluationOutput {
    pub dir: PathBuf,
    pub file: ReportFile,
    pub comparison: Option<Vec<LimbComparison>>,
    pub reference: Option<ReferenceCheck>,
}

pub fn report_dir(cfg: &PipelineConfig, variant: Variant, ablate: Option<Limb>) -> PathBuf {
    let name = match variant {
        Variant::Full => "full",
        Variant::DetectionOnly => "detection-only",
        Variant::RegressionOnly => "regression-only",
    };
    match ablate {
        Some(limb) => cfg.paths.reports().join(format!("{name}-without-{}", limb.name())),
        None => cfg.paths.reports().join(name),
    }
}

/// Evaluates a variant on the prepared test split. Checkpoints are checked
/// against the configuration before any inference runs.
pub fn evaluate(cfg: &PipelineConfig, variant: Variant, opts: &EvaluateOptions) -> Result<EvaluationOutput> {
    cfg.validate_settings()?;
    if opts.reference_check && variant != Variant::Full {
        return Err(CliError::Config("the reference check applies to the full variant only".into()));
    }
    let baseline = opts.compare.as_deref().map(read_report).transpose()?;
    let mut detection = match variant {
        Variant::Full | Variant::DetectionOnly => Some(load_network(cfg, Task::Detection, variant)?),
        Variant::RegressionOnly => None,
    };
    let mut regression = match variant {
        Variant::Full | Variant::RegressionOnly => Some(load_network(cfg, Task::Regression, variant)?),
        Variant::DetectionOnly => None,
    };
    let store = Store::new(cfg.paths.prepared());
    let index = store.load_index(cfg)?;
    if index.test.is_empty() {
        return Err(CliError::Validation("the prepared test split has no clips".into()));
    }
    let clips = store.load_split(&index, Split::Test)?;
    let eval_opts = EvalOptions {
        linker: cfg.linker,
        mask_threshold: cfg.evaluation.mask_threshold,
        ablate: opts.ablate,
    };
    let mut collector = MetricsCollector::new();
    let results = evaluate_clips(
        variant,
        detection.as_mut(),
        regression.as_mut(),
        &clips,
        &eval_opts,
        &mut collector,
    )?;
    let report = aggregate_report(&collector, [cfg.frame.width, cfg.frame.height]);
    let frames = frame_rmsds(&clips, results.iter().map(|r| r.estimates.as_slice()));

    let dir = report_dir(cfg, variant, opts.ablate);
    fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
    let file = ReportFile {
        variant,
        ablated: opts.ablate,
        config: cfg.to_json(),
        report,
        frames,
    };
    write_report(&dir, &file)?;
    if opts.overlays || cfg.evaluation.overlays {
        let overlay_dir = dir.join("overlays");
        fs::create_dir_all(&overlay_dir).map_err(|e| CliError::io(&overlay_dir, e))?;
        for (clip, res) in clips.iter().zip(&results) {
            let [t, h, w] = clip.depth.dims();
            for k in 0..t {
                let plane = &clip.depth.sample(0)[k * h * w..(k + 1) * h * w];
                let depth = ndarray::ArrayView2::from_shape((h, w), plane).expect("plane matches frame size");
                let path = overlay_dir.join(format!("{}_{:06}.png", clip.video_id, clip.source_indices[k]));
                write_overlay(&path, depth, &res.estimates[k].pose())?;
            }
        }
    }
    let comparison = baseline.map(|b| compare_reports(&file, &b, cfg.evaluation.alpha)).transpose()?;
    if let Some(c) = &comparison {
        write_json(&dir.join("comparison.json"), c)?;
    }
    let reference = opts.reference_check.then(|| reference_check(&file.report));
    if let Some(r) = &reference {
        write_json(&dir.join("reference.json"), r)?;
    }
    Ok(EvaluationOutput {
        dir,
        file,
        comparison,
        reference,
    })
}

fn frame_rmsds<'a>(clips: &[ClipData], estimates: impl Iterator<Item = &'a [PoseEstimate]>) -> Vec<FrameRmsd> {
    let mut out = Vec::new();
    for (clip, est) in clips.iter().zip(estimates) {
        for (k, e) in est.iter().enumerate() {
            let pred = e.pose();
            out.push(FrameRmsd {
                video_id: clip.video_id.clone(),
                frame_index: clip.source_indices[k],
                rmsd: Limb::ALL.map(|l| rmsd(&pred, &clip.ground_truth[k], l).value),
            });
        }
    }
    out
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("report serializes");
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn write_report(dir: &Path, file: &ReportFile) -> Result<()> {
    write_json(&dir.join("report.json"), file)?;
    let det = dir.join("detection.csv");
    let f = fs::File::create(&det).map_err(|e| CliError::io(&det, e))?;
    write_detection_csv(&file.report, f).map_err(|e| CliError::io(&det, e))?;
    let limbs = dir.join("limbs.csv");
    let f = fs::File::create(&limbs).map_err(|e| CliError::io(&limbs, e))?;
    write_limb_csv(&file.report, f).map_err(|e| CliError::io(&limbs, e))
}

pub fn read_report(path: &Path) -> Result<ReportFile> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::format(path, e))
}

/// Paired t-test per limb over frames evaluated by both runs with a defined
/// RMSD in each.
pub fn compare_reports(a: &ReportFile, b: &ReportFile, alpha: f64) -> Result<Vec<LimbComparison>> {
    let lookup: BTreeMap<(&str, usize), &FrameRmsd> =
        b.frames.iter().map(|f| ((f.video_id.as_str(), f.frame_index), f)).collect();
    let cfg = StatTestConfig { alpha };
    Limb::ALL
        .iter()
        .map(|&limb| {
            let (xs, ys): (Vec<f64>, Vec<f64>) = a
                .frames
                .iter()
                .filter_map(|f| {
                    let other = lookup.get(&(f.video_id.as_str(), f.frame_index))?;
                    Some((f.rmsd[limb.index()]?, other.rmsd[limb.index()]?))
                })
                .unzip();
            let outcome = if xs.len() >= 2 {
                Some(paired_ttest(&xs, &ys, &cfg)?)
            } else {
                None
            };
            Ok(LimbComparison {
                limb,
                pairs: xs.len(),
                outcome,
            })
        })
        .collect()
}

pub fn reference_check(report: &EvaluationReport) -> ReferenceCheck {
    let measured = report.overall_rmsd_median;
    let relative_error = measured.map(|m| (m - REFERENCE_MEDIAN_RMSD).abs() / REFERENCE_MEDIAN_RMSD);
    ReferenceCheck {
        reference: REFERENCE_MEDIAN_RMSD,
        measured,
        relative_error,
        within_tolerance: relative_error.is_some_and(|e| e <= REFERENCE_TOLERANCE),
    }
}

// ---------------------------------------------------------------- infer

/// Estimated poses of one video, coordinates in native pixels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceOutput {
    pub variant: Variant,
    /// `[width, height]` of the coordinate frame.
    pub resolution: [usize; 2],
    pub poses: VideoPoses,
    pub mean_seconds_per_image: f64,
}

/// Runs a trained variant over every frame of a video that sits on the
/// annotation cadence, in non-overlapping test clips. Trailing frames that
/// do not fill a clip are skipped.
pub fn infer_video(cfg: &PipelineConfig, variant: Variant, video_id: &str) -> Result<InferenceOutput> {
    cfg.validate()?;
    let manifest = Manifest::load(&cfg.paths.manifest)?;
    let entry = manifest
        .get(video_id)
        .ok_or_else(|| CliError::Validation(format!("video `{video_id}` is not in the manifest")))?;
    let mut detection = match variant {
        Variant::Full | Variant::DetectionOnly => Some(load_network(cfg, Task::Detection, variant)?),
        Variant::RegressionOnly => None,
    };
    let mut regression = match variant {
        Variant::Full | Variant::RegressionOnly => Some(load_network(cfg, Task::Regression, variant)?),
        Variant::DetectionOnly => None,
    };
    let frames = list_frames(&entry.frames_dir)?
        .into_iter()
        .filter(|i| i % cfg.cadence == 0)
        .map(|i| {
            Ok(AnnotatedFrame {
                frame_index: i,
                depth: load_depth_frame_with(&frame_path(&entry.frames_dir, i), &cfg.frame, &cfg.preprocess)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let clips = build_clips(video_id, &frames, &cfg.clips.test)?;
    let skeleton = SkeletonModel::new();
    let mut out = Vec::new();
    let mut seconds = Vec::new();
    for clip in &clips {
        let inf = infer(variant, detection.as_mut(), regression.as_mut(), clip)?;
        seconds.push(inf.seconds_per_image);
        for (k, est) in estimate_pose(&inf.maps, &cfg.linker, &skeleton)?.iter().enumerate() {
            out.push(FramePoseRecord::from_estimate(clip.source_indices[k], &to_native(est, &cfg.frame)));
        }
    }
    Ok(InferenceOutput {
        variant,
        resolution: [cfg.frame.native_width, cfg.frame.native_height],
        poses: VideoPoses {
            video_id: video_id.to_string(),
            frames: out,
        },
        mean_seconds_per_image: seconds.iter().sum::<f64>() / seconds.len().max(1) as f64,
    })
}

fn to_native(est: &PoseEstimate, spec: &FrameSpec) -> PoseEstimate {
    let mut e = est.clone();
    for c in e.joints.iter_mut().flatten() {
        c.position = spec.to_native(c.position);
    }
    for link in e.connections.iter_mut().flatten() {
        link.from.position = spec.to_native(link.from.position);
        link.to.position = spec.to_native(link.to.position);
    }
    e
}

/// Annotation records of every manifest video, keyed by video id.
pub fn load_all_annotations(manifest: &Manifest, spec: &FrameSpec) -> Result<BTreeMap<String, Vec<AnnotationRecord>>> {
    let mut out = BTreeMap::new();
    for e in &manifest.entries {
        out.insert(e.video_id.clone(), load_annotations(&e.annotations, spec)?);
    }
    Ok(out)
}
