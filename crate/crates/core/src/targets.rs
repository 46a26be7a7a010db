//! Ground-truth maps for the two networks.
//!
//! Affinity maps are binary: a disk of radius `r_d` around each joint and a
//! rectangle of total thickness `r_d` along each connection. Confidence maps
//! keep the same supports (radius `r`) but carry a Gaussian profile with
//! peak value 1: radial around joints, and along the axis (from the segment
//! midpoint) for connections.
//!
//! Pixel `(row, col)` is centred at the continuous point `(x = col, y = row)`.

use std::path::Path;

use image::{GrayImage, Luma};
use ndarray::{s, Array2, Array4, ArrayView2, ArrayViewMut2};
use serde::{Deserialize, Serialize};

use crate::dataset::{AnnotationRecord, FrameSpec};
use crate::geometry::{segment_frame, Point};
use crate::skeleton::{SkeletonModel, NUM_CONNECTIONS, NUM_JOINTS, NUM_MAPS};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MapGenConfig {
    /// Radius of affinity disks and thickness of affinity rectangles.
    pub affinity_radius: f64,
    /// Radius of confidence disks and thickness of confidence rectangles.
    pub confidence_radius: f64,
    /// Gaussian standard deviation; three times `confidence_radius` when unset.
    pub sigma: Option<f64>,
}

impl Default for MapGenConfig {
    fn default() -> Self {
        MapGenConfig {
            affinity_radius: 6.0,
            confidence_radius: 6.0,
            sigma: None,
        }
    }
}

impl MapGenConfig {
    pub fn sigma(&self) -> f64 {
        self.sigma.unwrap_or(3.0 * self.confidence_radius)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.affinity_radius >= 0.0) || !(self.confidence_radius >= 0.0) {
            return Err(Error::Parameter("map radii must be non-negative".into()));
        }
        if !(self.sigma() > 0.0) {
            return Err(Error::Parameter("sigma must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MapKind {
    Affinity,
    Confidence,
}

/// Per-clip stack of maps with shape `(H, W, T, 20)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MapStack {
    pub data: Array4<f32>,
    pub kind: MapKind,
}

impl MapStack {
    pub fn zeros(height: usize, width: usize, frames: usize, kind: MapKind) -> Self {
        MapStack {
            data: Array4::zeros((height, width, frames, NUM_MAPS)),
            kind,
        }
    }

    pub fn shape(&self) -> (usize, usize, usize, usize) {
        self.data.dim()
    }

    pub fn frames(&self) -> usize {
        self.data.dim().2
    }

    pub fn map(&self, t: usize, channel: usize) -> ArrayView2<'_, f32> {
        self.data.slice(s![.., .., t, channel])
    }

    pub fn map_mut(&mut self, t: usize, channel: usize) -> ArrayViewMut2<'_, f32> {
        self.data.slice_mut(s![.., .., t, channel])
    }

    /// Channels `channels` of every frame set to zero.
    pub fn zero_channels(&mut self, channels: &[usize]) {
        for &c in channels {
            self.data.slice_mut(s![.., .., .., c]).fill(0.0);
        }
    }

    /// Writes each map as an 8-bit PNG (`t{t}_{channel:02}_{name}.png`),
    /// values in [0, 1] mapped to [0, 255].
    pub fn export_pngs(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let skeleton = SkeletonModel::new();
        let (h, w, frames, channels) = self.shape();
        for t in 0..frames {
            for c in 0..channels {
                let name = if c < NUM_JOINTS {
                    skeleton.joint_name(c)?.to_string()
                } else {
                    skeleton.connection_name(c - NUM_JOINTS)?
                };
                let map = self.map(t, c);
                let img = GrayImage::from_fn(w as u32, h as u32, |x, y| {
                    let v = map[(y as usize, x as usize)].clamp(0.0, 1.0);
                    Luma([(v * 255.0).round() as u8])
                });
                let path = dir.join(format!("t{t}_{c:02}_{name}.png"));
                img.save(&path).map_err(|e| Error::Format {
                    path: path.clone(),
                    message: e.to_string(),
                })?;
            }
        }
        Ok(())
    }
}

// Pixel rows/cols whose centres can lie within `radius` of the given span.
fn pixel_range(lo: f64, hi: f64, radius: f64, len: usize) -> std::ops::Range<usize> {
    let start = (lo - radius).ceil().max(0.0);
    let end = (hi + radius).floor() + 1.0;
    let end = end.min(len as f64);
    if end <= start {
        0..0
    } else {
        start as usize..end as usize
    }
}

fn fill_disk(center: Point, radius: f64, spec: &FrameSpec, value: impl Fn(f64) -> f64) -> Array2<f64> {
    let mut map = Array2::zeros((spec.height, spec.width));
    let r_sq = radius * radius;
    for i in pixel_range(center.y, center.y, radius, spec.height) {
        for j in pixel_range(center.x, center.x, radius, spec.width) {
            let d_sq = center.distance_sq(Point::new(j as f64, i as f64));
            if d_sq <= r_sq {
                map[(i, j)] = value(d_sq);
            }
        }
    }
    map
}

fn fill_band(
    p1: Point,
    p2: Point,
    thickness: f64,
    spec: &FrameSpec,
    value: impl Fn(f64) -> f64,
) -> Array2<f64> {
    let mut map = Array2::zeros((spec.height, spec.width));
    if p1 == p2 {
        log::warn!("degenerate connection at ({}, {}); emitting an empty map", p1.x, p1.y);
        return map;
    }
    let half = thickness / 2.0;
    let rows = pixel_range(p1.y.min(p2.y), p1.y.max(p2.y), half, spec.height);
    let cols = pixel_range(p1.x.min(p2.x), p1.x.max(p2.x), half, spec.width);
    for i in rows {
        for j in cols.clone() {
            let (t, perp) = segment_frame(Point::new(j as f64, i as f64), p1, p2).expect("non-degenerate");
            if perp <= half && (0.0..=1.0).contains(&t) {
                map[(i, j)] = value(t);
            }
        }
    }
    map
}

pub fn affinity_joint_map(center: Option<Point>, cfg: &MapGenConfig, spec: &FrameSpec) -> Array2<f64> {
    match center {
        Some(c) => fill_disk(c, cfg.affinity_radius, spec, |_| 1.0),
        None => Array2::zeros((spec.height, spec.width)),
    }
}

pub fn affinity_connection_map(
    p1: Option<Point>,
    p2: Option<Point>,
    cfg: &MapGenConfig,
    spec: &FrameSpec,
) -> Array2<f64> {
    match (p1, p2) {
        (Some(a), Some(b)) => fill_band(a, b, cfg.affinity_radius, spec, |_| 1.0),
        _ => Array2::zeros((spec.height, spec.width)),
    }
}

pub fn confidence_joint_map(center: Option<Point>, cfg: &MapGenConfig, spec: &FrameSpec) -> Array2<f64> {
    let two_var = 2.0 * cfg.sigma() * cfg.sigma();
    match center {
        Some(c) => fill_disk(c, cfg.confidence_radius, spec, |d_sq| (-d_sq / two_var).exp()),
        None => Array2::zeros((spec.height, spec.width)),
    }
}

pub fn confidence_connection_map(
    p1: Option<Point>,
    p2: Option<Point>,
    cfg: &MapGenConfig,
    spec: &FrameSpec,
) -> Array2<f64> {
    let two_var = 2.0 * cfg.sigma() * cfg.sigma();
    match (p1, p2) {
        (Some(a), Some(b)) => {
            let len = a.distance(b);
            fill_band(a, b, cfg.confidence_radius, spec, |t| {
                let u = (t - 0.5) * len;
                (-u * u / two_var).exp()
            })
        }
        _ => Array2::zeros((spec.height, spec.width)),
    }
}

/// The 20 maps of one annotated frame in channel order.
pub fn frame_maps(record: &AnnotationRecord, kind: MapKind, cfg: &MapGenConfig, spec: &FrameSpec) -> Vec<Array2<f64>> {
    let skeleton = SkeletonModel::new();
    let pos = |j: usize| record.joints[j].visible_position();
    let mut maps = Vec::with_capacity(NUM_MAPS);
    for j in 0..NUM_JOINTS {
        maps.push(match kind {
            MapKind::Affinity => affinity_joint_map(pos(j), cfg, spec),
            MapKind::Confidence => confidence_joint_map(pos(j), cfg, spec),
        });
    }
    for c in 0..NUM_CONNECTIONS {
        let (a, b) = skeleton.connection_endpoints(c).expect("valid connection");
        maps.push(match kind {
            MapKind::Affinity => affinity_connection_map(pos(a), pos(b), cfg, spec),
            MapKind::Confidence => confidence_connection_map(pos(a), pos(b), cfg, spec),
        });
    }
    maps
}

/// Target stack for a clip; `records[t]` must annotate `source_indices[t]`.
pub fn build_target_stack(
    records: &[AnnotationRecord],
    source_indices: &[usize],
    kind: MapKind,
    cfg: &MapGenConfig,
    spec: &FrameSpec,
) -> Result<MapStack> {
    if records.len() != source_indices.len() {
        return Err(Error::Consistency(format!(
            "{} records for a clip of {} frames",
            records.len(),
            source_indices.len()
        )));
    }
    if let Some(first) = records.first() {
        if let Some(r) = records.iter().find(|r| r.video_id != first.video_id) {
            return Err(Error::Consistency(format!(
                "records mix videos `{}` and `{}`",
                first.video_id, r.video_id
            )));
        }
    }
    for (r, &idx) in records.iter().zip(source_indices) {
        if r.frame_index != idx {
            return Err(Error::Consistency(format!(
                "record for frame {} aligned with clip frame {idx}",
                r.frame_index
            )));
        }
    }
    let mut stack = MapStack::zeros(spec.height, spec.width, records.len(), kind);
    for (t, rec) in records.iter().enumerate() {
        for (c, map) in frame_maps(rec, kind, cfg, spec).into_iter().enumerate() {
            stack.map_mut(t, c).assign(&map.mapv(|v| v as f32));
        }
    }
    Ok(stack)
}
