//! Skeleton overlays on depth frames.

use std::path::Path;

use image::{Rgb, RgbImage};
use imageproc::drawing::{draw_filled_circle_mut, draw_line_segment_mut};
use limbpose_core::geometry::Pose;
use limbpose_core::{Limb, SkeletonModel, NUM_CONNECTIONS};
use ndarray::ArrayView2;

use crate::{CliError, Result};

/// One color per limb in `Limb::ALL` order.
pub const LIMB_COLORS: [[u8; 3]; 4] = [[230, 25, 75], [60, 180, 75], [0, 130, 200], [245, 130, 48]];

/// Depth as gray, stretched so the smallest value is white and the largest
/// black (near surfaces appear bright).
pub fn depth_to_rgb(depth: ArrayView2<f32>) -> RgbImage {
    let (h, w) = depth.dim();
    let (lo, hi) = depth
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let v = depth[(y as usize, x as usize)];
        let g = if hi > lo {
            (255.0 * (hi - v) / (hi - lo)).round().clamp(0.0, 255.0) as u8
        } else {
            255
        };
        Rgb([g, g, g])
    })
}

/// Draws connections as lines and joints as dots, colored by limb.
pub fn draw_pose(img: &mut RgbImage, pose: &Pose, radius: i32) {
    let skeleton = SkeletonModel::new();
    for cid in 0..NUM_CONNECTIONS {
        let (a, b) = skeleton.connection_endpoints(cid).expect("connection index in range");
        let limb = skeleton.limb_of(a).expect("joint index in range");
        if let (Some(p), Some(q)) = (pose.joints[a], pose.joints[b]) {
            draw_line_segment_mut(
                img,
                (p.x as f32, p.y as f32),
                (q.x as f32, q.y as f32),
                Rgb(LIMB_COLORS[limb.index()]),
            );
        }
    }
    for limb in Limb::ALL {
        for p in pose.limb(limb).into_iter().flatten() {
            draw_filled_circle_mut(
                img,
                (p.x.round() as i32, p.y.round() as i32),
                radius,
                Rgb(LIMB_COLORS[limb.index()]),
            );
        }
    }
}

pub fn write_overlay(path: &Path, depth: ArrayView2<f32>, pose: &Pose) -> Result<()> {
    let mut img = depth_to_rgb(depth);
    draw_pose(&mut img, pose, 1);
    img.save(path).map_err(|e| CliError::format(path, e))
}
