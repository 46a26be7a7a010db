//! Depth frames, joint annotations and data splits.
//!
//! On disk a video is a directory of 16-bit grayscale PNGs named
//! `frame_%06d.png` by raw frame index, plus an annotation CSV with one row
//! per (frame, joint) at native sensor resolution. Coordinates are scaled to
//! the working resolution at load time and back when saving.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use image::{DynamicImage, ImageBuffer, Luma};
use ndarray::{Array2, ArrayView2};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::{Point, Pose};
use crate::skeleton::{SkeletonModel, JOINT_NAMES, NUM_JOINTS};
use crate::{Error, Result};

pub const ANNOTATION_HEADER: [&str; 6] = ["video_id", "frame_index", "joint", "x", "y", "visible"];

/// Raw frames between two annotated frames.
pub const ANNOTATION_CADENCE: usize = 5;

/// Working and native frame geometry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameSpec {
    pub width: usize,
    pub height: usize,
    pub native_width: usize,
    pub native_height: usize,
    pub fps: f64,
}

impl Default for FrameSpec {
    fn default() -> Self {
        FrameSpec {
            width: 128,
            height: 96,
            native_width: 640,
            native_height: 480,
            fps: 30.0,
        }
    }
}

impl FrameSpec {
    /// A spec whose working resolution equals the native one.
    pub fn native(width: usize, height: usize, fps: f64) -> Self {
        FrameSpec {
            width,
            height,
            native_width: width,
            native_height: height,
            fps,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 || self.native_width == 0 || self.native_height == 0 {
            return Err(Error::Parameter("frame dimensions must be positive".into()));
        }
        if !(self.fps > 0.0) {
            return Err(Error::Parameter(format!("fps must be positive, got {}", self.fps)));
        }
        // Aspect must survive the resize up to one working pixel of rounding.
        let expected_h = self.width as f64 * self.native_height as f64 / self.native_width as f64;
        if (expected_h - self.height as f64).abs() > 1.0 {
            return Err(Error::Parameter(format!(
                "{}x{} does not preserve the native {}x{} aspect ratio",
                self.width, self.height, self.native_width, self.native_height
            )));
        }
        Ok(())
    }

    pub fn scale_x(&self) -> f64 {
        self.width as f64 / self.native_width as f64
    }

    pub fn scale_y(&self) -> f64 {
        self.height as f64 / self.native_height as f64
    }

    pub fn to_working(&self, p: Point) -> Point {
        Point::new(p.x * self.scale_x(), p.y * self.scale_y())
    }

    pub fn to_native(&self, p: Point) -> Point {
        Point::new(p.x / self.scale_x(), p.y / self.scale_y())
    }

    pub fn in_native_bounds(&self, p: Point) -> bool {
        p.x >= 0.0 && p.y >= 0.0 && p.x < self.native_width as f64 && p.y < self.native_height as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Interpolation {
    #[default]
    Bilinear,
    Nearest,
}

/// Per-frame preprocessing applied after decoding.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Preprocess {
    pub interpolation: Interpolation,
    /// Multiplier applied to raw depth values before mean removal.
    pub depth_scale: f64,
}

impl Default for Preprocess {
    fn default() -> Self {
        Preprocess {
            interpolation: Interpolation::Bilinear,
            depth_scale: 1.0,
        }
    }
}

pub fn frame_file_name(frame_index: usize) -> String {
    format!("frame_{frame_index:06}.png")
}

pub fn frame_path(video_dir: &Path, frame_index: usize) -> PathBuf {
    video_dir.join(frame_file_name(frame_index))
}

/// Decodes a single-channel PNG into raw (unscaled, native-size) depth.
pub fn read_depth_png(path: &Path) -> Result<Array2<f32>> {
    let img = image::open(path).map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::Format {
            path: path.to_path_buf(),
            message: other.to_string(),
        },
    })?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data: Vec<f32> = match img {
        DynamicImage::ImageLuma16(buf) => buf.into_raw().into_iter().map(f32::from).collect(),
        DynamicImage::ImageLuma8(buf) => buf.into_raw().into_iter().map(f32::from).collect(),
        other => {
            return Err(Error::Format {
                path: path.to_path_buf(),
                message: format!("expected a single-channel depth image, got {:?}", other.color()),
            })
        }
    };
    Ok(Array2::from_shape_vec((h, w), data).expect("buffer matches image size"))
}

pub fn write_depth_png(path: &Path, depth: ArrayView2<u16>) -> Result<()> {
    let (h, w) = depth.dim();
    let buf: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_raw(w as u32, h as u32, depth.iter().copied().collect())
            .expect("buffer matches image size");
    buf.save(path).map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::Format {
            path: path.to_path_buf(),
            message: other.to_string(),
        },
    })
}

/// Loads a depth frame resized to the working resolution with the per-frame
/// mean removed.
pub fn load_depth_frame(path: &Path, spec: &FrameSpec) -> Result<Array2<f32>> {
    load_depth_frame_with(path, spec, &Preprocess::default())
}

pub fn load_depth_frame_with(path: &Path, spec: &FrameSpec, pre: &Preprocess) -> Result<Array2<f32>> {
    let raw = read_depth_png(path)?;
    Ok(preprocess_frame(raw.view(), spec, pre))
}

pub fn preprocess_frame(raw: ArrayView2<f32>, spec: &FrameSpec, pre: &Preprocess) -> Array2<f32> {
    let resized = resize(raw, spec.height, spec.width, pre.interpolation);
    let scale = pre.depth_scale;
    let mut out = resized.mapv(|v| v as f64 * scale);
    let mean = out.mean().unwrap_or(0.0);
    out.mapv_inplace(|v| v - mean);
    out.mapv(|v| v as f32)
}

/// Resamples `src` to `out_h` x `out_w` with pixel-center alignment.
pub fn resize(src: ArrayView2<f32>, out_h: usize, out_w: usize, mode: Interpolation) -> Array2<f32> {
    let (in_h, in_w) = src.dim();
    if (in_h, in_w) == (out_h, out_w) {
        return src.to_owned();
    }
    let sy = in_h as f64 / out_h as f64;
    let sx = in_w as f64 / out_w as f64;
    match mode {
        Interpolation::Nearest => Array2::from_shape_fn((out_h, out_w), |(i, j)| {
            let y = (((i as f64 + 0.5) * sy) as usize).min(in_h - 1);
            let x = (((j as f64 + 0.5) * sx) as usize).min(in_w - 1);
            src[(y, x)]
        }),
        Interpolation::Bilinear => {
            // Precompute the horizontal taps once per column.
            let taps_x: Vec<(usize, usize, f64)> = (0..out_w)
                .map(|j| source_taps((j as f64 + 0.5) * sx - 0.5, in_w))
                .collect();
            let mut out = Array2::zeros((out_h, out_w));
            for i in 0..out_h {
                let (y0, y1, fy) = source_taps((i as f64 + 0.5) * sy - 0.5, in_h);
                for (j, &(x0, x1, fx)) in taps_x.iter().enumerate() {
                    let top = src[(y0, x0)] as f64 * (1.0 - fx) + src[(y0, x1)] as f64 * fx;
                    let bottom = src[(y1, x0)] as f64 * (1.0 - fx) + src[(y1, x1)] as f64 * fx;
                    out[(i, j)] = (top * (1.0 - fy) + bottom * fy) as f32;
                }
            }
            out
        }
    }
}

fn source_taps(pos: f64, len: usize) -> (usize, usize, f64) {
    let pos = pos.clamp(0.0, (len - 1) as f64);
    let i0 = pos.floor() as usize;
    let i1 = (i0 + 1).min(len - 1);
    (i0, i1, pos - i0 as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct JointAnnotation {
    pub position: Option<Point>,
    pub visible: bool,
}

impl JointAnnotation {
    pub fn visible_at(p: Point) -> Self {
        JointAnnotation {
            position: Some(p),
            visible: true,
        }
    }

    pub fn hidden() -> Self {
        JointAnnotation::default()
    }

    /// Position when the joint is visible.
    pub fn visible_position(&self) -> Option<Point> {
        if self.visible {
            self.position
        } else {
            None
        }
    }
}

/// Annotation of one frame, coordinates at working resolution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub video_id: String,
    pub frame_index: usize,
    pub joints: [JointAnnotation; NUM_JOINTS],
}

impl AnnotationRecord {
    pub fn new(video_id: impl Into<String>, frame_index: usize) -> Self {
        AnnotationRecord {
            video_id: video_id.into(),
            frame_index,
            joints: [JointAnnotation::hidden(); NUM_JOINTS],
        }
    }

    pub fn pose(&self) -> Pose {
        Pose::new(self.joints.map(|j| j.visible_position()))
    }
}

#[derive(Debug, Deserialize)]
struct CsvRow {
    video_id: String,
    frame_index: usize,
    joint: String,
    x: Option<f64>,
    y: Option<f64>,
    visible: u8,
}

pub fn load_annotations(path: &Path, spec: &FrameSpec) -> Result<Vec<AnnotationRecord>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_annotations(file, spec)
}

/// Parses annotation CSV from any reader; see [`load_annotations`].
pub fn read_annotations<R: Read>(reader: R, spec: &FrameSpec) -> Result<Vec<AnnotationRecord>> {
    let skeleton = SkeletonModel::new();
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers().map_err(|e| csv_error(1, e))?.clone();
    if headers.iter().collect::<Vec<_>>() != ANNOTATION_HEADER {
        return Err(Error::Schema {
            row: 1,
            message: format!("expected header `{}`", ANNOTATION_HEADER.join(",")),
        });
    }

    let mut frames: BTreeMap<(String, usize), AnnotationRecord> = BTreeMap::new();
    let mut seen: BTreeSet<(String, usize, usize)> = BTreeSet::new();
    for (i, row) in rdr.deserialize::<CsvRow>().enumerate() {
        // Header is row 1.
        let row_no = i + 2;
        let row = row.map_err(|e| csv_error(row_no, e))?;
        let jid = skeleton.joint_index(&row.joint).map_err(|_| Error::Schema {
            row: row_no,
            message: format!("unknown joint `{}`", row.joint),
        })?;
        let visible = match row.visible {
            0 => false,
            1 => true,
            v => {
                return Err(Error::Schema {
                    row: row_no,
                    message: format!("visible must be 0 or 1, got {v}"),
                })
            }
        };
        let position = match (row.x, row.y) {
            (Some(x), Some(y)) => {
                let p = Point::new(x, y);
                if !spec.in_native_bounds(p) {
                    return Err(Error::Validation {
                        row: row_no,
                        message: format!(
                            "({x}, {y}) outside the native {}x{} frame",
                            spec.native_width, spec.native_height
                        ),
                    });
                }
                Some(spec.to_working(p))
            }
            (None, None) => None,
            _ => {
                return Err(Error::Schema {
                    row: row_no,
                    message: "x and y must be given together".into(),
                })
            }
        };
        if visible && position.is_none() {
            return Err(Error::Schema {
                row: row_no,
                message: "visible joint without coordinates".into(),
            });
        }
        if !seen.insert((row.video_id.clone(), row.frame_index, jid)) {
            return Err(Error::Validation {
                row: row_no,
                message: format!("duplicate {} entry for frame {}", row.joint, row.frame_index),
            });
        }
        let record = frames
            .entry((row.video_id.clone(), row.frame_index))
            .or_insert_with(|| AnnotationRecord::new(row.video_id.clone(), row.frame_index));
        record.joints[jid] = JointAnnotation { position, visible };
    }
    Ok(frames.into_values().collect())
}

fn csv_error(row: usize, e: csv::Error) -> Error {
    Error::Schema {
        row,
        message: e.to_string(),
    }
}

pub fn save_annotations(path: &Path, records: &[AnnotationRecord], spec: &FrameSpec) -> Result<()> {
    let mut buf = Vec::new();
    write_annotations(&mut buf, records, spec)?;
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

/// Writes every joint of every record, coordinates converted to native
/// resolution.
pub fn write_annotations<W: Write>(writer: W, records: &[AnnotationRecord], spec: &FrameSpec) -> Result<()> {
    let mut sorted: Vec<&AnnotationRecord> = records.iter().collect();
    sorted.sort_by(|a, b| (&a.video_id, a.frame_index).cmp(&(&b.video_id, b.frame_index)));
    let mut wtr = csv::Writer::from_writer(writer);
    let to_io = |e: csv::Error| Error::io("<annotation csv>", std::io::Error::other(e));
    wtr.write_record(ANNOTATION_HEADER).map_err(to_io)?;
    for rec in sorted {
        for (jid, joint) in rec.joints.iter().enumerate() {
            let (x, y) = match joint.position.map(|p| spec.to_native(p)) {
                Some(p) => (p.x.to_string(), p.y.to_string()),
                None => (String::new(), String::new()),
            };
            let frame = rec.frame_index.to_string();
            let visible = if joint.visible { "1" } else { "0" };
            wtr.write_record([rec.video_id.as_str(), &frame, JOINT_NAMES[jid], &x, &y, visible])
                .map_err(to_io)?;
        }
    }
    wtr.flush().map_err(|e| Error::io("<annotation csv>", e))
}

/// Groups records by video, each group sorted by frame index.
pub fn group_by_video(records: &[AnnotationRecord]) -> BTreeMap<String, Vec<AnnotationRecord>> {
    let mut out: BTreeMap<String, Vec<AnnotationRecord>> = BTreeMap::new();
    for r in records {
        out.entry(r.video_id.clone()).or_default().push(r.clone());
    }
    for v in out.values_mut() {
        v.sort_by_key(|r| r.frame_index);
    }
    out
}

/// Reports every place where consecutive annotated frames of a video are not
/// exactly `cadence` raw frames apart. Empty when the dataset is consistent.
pub fn check_cadence(records: &[AnnotationRecord], cadence: usize) -> Vec<String> {
    let mut problems = Vec::new();
    for (video, recs) in group_by_video(records) {
        for pair in recs.windows(2) {
            let gap = pair[1].frame_index - pair[0].frame_index;
            if gap != cadence {
                problems.push(format!(
                    "video {video}: frames {} and {} are {gap} apart (expected {cadence})",
                    pair[0].frame_index, pair[1].frame_index
                ));
            }
        }
    }
    problems
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct VideoSplit {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

/// Annotated frame indices per video and partition.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub videos: BTreeMap<String, VideoSplit>,
}

pub const TEST_FRACTION: f64 = 0.25;
pub const VALIDATION_FRACTION: f64 = 0.20;

/// Sizes of (train, validation, test) for `n` annotated frames.
pub fn split_sizes(n: usize) -> (usize, usize, usize) {
    let test = (n as f64 * TEST_FRACTION).round() as usize;
    let validation = (n as f64 * VALIDATION_FRACTION).round() as usize;
    (n - test - validation, validation, test)
}

/// Splits each video's annotated frames: the chronologically last quarter
/// is the test set, a seeded uniform sample of the rest is the validation
/// set and the remainder is used for training.
pub fn make_split(records: &[AnnotationRecord], seed: u64, min_frames: usize) -> Result<DatasetSplit> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut split = DatasetSplit::default();
    for (video, recs) in group_by_video(records) {
        let n = recs.len();
        if n < min_frames {
            return Err(Error::VideoRejected {
                video_id: video,
                reason: format!("{n} annotated frames cannot form a clip of {min_frames}"),
            });
        }
        let frames: Vec<usize> = recs.iter().map(|r| r.frame_index).collect();
        let (_, n_val, n_test) = split_sizes(n);
        let pool = &frames[..n - n_test];
        let mut picked = sample(&mut rng, pool.len(), n_val).into_vec();
        picked.sort_unstable();
        let picked_set: BTreeSet<usize> = picked.iter().copied().collect();
        let validation = picked.iter().map(|&i| pool[i]).collect();
        let train = pool
            .iter()
            .enumerate()
            .filter(|(i, _)| !picked_set.contains(i))
            .map(|(_, &f)| f)
            .collect();
        split.videos.insert(
            video,
            VideoSplit {
                train,
                validation,
                test: frames[n - n_test..].to_vec(),
            },
        );
    }
    Ok(split)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub video_id: String,
    pub frames_dir: PathBuf,
    pub annotations: PathBuf,
}

/// Dataset manifest: one `<video_dir> <annotations.csv>` pair per line,
/// relative paths resolved against the manifest's directory. The video id is
/// the last component of the video directory.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Manifest> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let parts: Vec<&str> = line.split_whitespace().collect();
            let [dir, csv] = parts[..] else {
                return Err(Error::Schema {
                    row: i + 1,
                    message: "expected `<video_dir> <annotations.csv>`".into(),
                });
            };
            let frames_dir = base.join(dir);
            let video_id = frames_dir
                .file_name()
                .and_then(|s| s.to_str())
                .ok_or_else(|| Error::Schema {
                    row: i + 1,
                    message: format!("cannot derive a video id from `{dir}`"),
                })?
                .to_string();
            entries.push(ManifestEntry {
                video_id,
                frames_dir,
                annotations: base.join(csv),
            });
        }
        Ok(Manifest { entries })
    }

    /// Writes the manifest with paths relative to its own directory when
    /// possible.
    pub fn save(&self, path: &Path) -> Result<()> {
        let base = path.parent().unwrap_or(Path::new("."));
        let rel = |p: &Path| p.strip_prefix(base).unwrap_or(p).display().to_string();
        let mut text = String::new();
        for e in &self.entries {
            text.push_str(&format!("{} {}\n", rel(&e.frames_dir), rel(&e.annotations)));
        }
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn get(&self, video_id: &str) -> Option<&ManifestEntry> {
        self.entries.iter().find(|e| e.video_id == video_id)
    }
}

/// Sorted raw frame indices present in a video directory.
pub fn list_frames(video_dir: &Path) -> Result<Vec<usize>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(video_dir).map_err(|e| Error::io(video_dir, e))? {
        let entry = entry.map_err(|e| Error::io(video_dir, e))?;
        let name = entry.file_name();
        let Some(name) = name.to_str() else { continue };
        if let Some(idx) = name
            .strip_prefix("frame_")
            .and_then(|s| s.strip_suffix(".png"))
            .and_then(|s| s.parse::<usize>().ok())
        {
            out.push(idx);
        }
    }
    out.sort_unstable();
    Ok(out)
}
