//! Conversions between clips/map stacks and tensors, and timed inference.

use std::time::Instant;

use limbpose_core::clips::DepthClip;
use limbpose_core::targets::{MapKind, MapStack};
use limbpose_core::NUM_MAPS;
use ndarray::{Array4, ArrayView4};
use serde::{Deserialize, Serialize};

use crate::model::{Network, Task};
use crate::tensor::Tensor;
use crate::{NetError, Result};

/// `(H, W, T, C)` array to a batch of one.
pub fn hwtc_to_tensor(a: ArrayView4<f32>) -> Tensor {
    let (h, w, t, c) = a.dim();
    let mut out = Tensor::zeros([1, c, t, h, w]);
    for ((i, j, k, ch), &v) in a.indexed_iter() {
        out.data[((ch * t + k) * h + i) * w + j] = v;
    }
    out
}

/// Sample `n` of a tensor as an `(H, W, T, C)` array.
pub fn tensor_to_hwtc(x: &Tensor, n: usize) -> Array4<f32> {
    let [_, c, t, h, w] = x.shape;
    let s = x.sample(n);
    Array4::from_shape_fn((h, w, t, c), |(i, j, k, ch)| s[((ch * t + k) * h + i) * w + j])
}

pub fn clip_to_tensor(clip: &DepthClip) -> Result<Tensor> {
    let (h, w) = clip.frame_dim();
    let t = clip.len();
    if t == 0 {
        return Err(NetError::Shape("empty clip".into()));
    }
    let mut data = Vec::with_capacity(t * h * w);
    for f in &clip.frames {
        if f.dim() != (h, w) {
            return Err(NetError::Shape("clip frames differ in size".into()));
        }
        data.extend(f.iter().copied());
    }
    Tensor::from_vec([1, 1, t, h, w], data)
}

pub fn stack_to_tensor(stack: &MapStack) -> Tensor {
    hwtc_to_tensor(stack.data.view())
}

pub fn tensor_to_stack(x: &Tensor, n: usize, kind: MapKind) -> Result<MapStack> {
    if x.channels() != NUM_MAPS {
        return Err(NetError::Shape(format!("expected {NUM_MAPS} channels, got {:?}", x.shape)));
    }
    Ok(MapStack {
        data: tensor_to_hwtc(x, n),
        kind,
    })
}

/// Depth with the affinity maps stacked behind it: 21 channels.
pub fn regression_input(depth: &Tensor, affinity: &Tensor) -> Result<Tensor> {
    Tensor::concat_channels(depth, affinity)
}

/// Which networks an end-to-end run uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// Detection, then regression on depth + affinity.
    Full,
    /// Affinity maps of the detection network are the final output.
    DetectionOnly,
    /// Regression on depth alone.
    RegressionOnly,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Inference {
    pub maps: MapStack,
    /// Affinity maps of the detection stage when it ran.
    pub affinity: Option<MapStack>,
    pub seconds_per_image: f64,
}

/// Runs one clip through the networks of a variant in evaluation mode.
pub fn infer(
    variant: Variant,
    detection: Option<&mut Network>,
    regression: Option<&mut Network>,
    clip: &DepthClip,
) -> Result<Inference> {
    let missing = |what: &str| NetError::Parameter(format!("{variant:?} inference needs a {what} network"));
    let check = |net: &Network, task: Task| {
        if net.task() != task {
            return Err(NetError::Parameter(format!("expected a {task:?} network")));
        }
        Ok(())
    };
    let depth = clip_to_tensor(clip)?;
    let start = Instant::now();
    let (maps, affinity) = match variant {
        Variant::Full | Variant::DetectionOnly => {
            let det = detection.ok_or_else(|| missing("detection"))?;
            check(det, Task::Detection)?;
            let aff = det.predict(&depth)?;
            if variant == Variant::DetectionOnly {
                (tensor_to_stack(&aff, 0, MapKind::Affinity)?, None)
            } else {
                let reg = regression.ok_or_else(|| missing("regression"))?;
                check(reg, Task::Regression)?;
                let conf = reg.predict(&regression_input(&depth, &aff)?)?;
                (
                    tensor_to_stack(&conf, 0, MapKind::Confidence)?,
                    Some(tensor_to_stack(&aff, 0, MapKind::Affinity)?),
                )
            }
        }
        Variant::RegressionOnly => {
            let reg = regression.ok_or_else(|| missing("regression"))?;
            check(reg, Task::Regression)?;
            let conf = reg.predict(&depth)?;
            (tensor_to_stack(&conf, 0, MapKind::Confidence)?, None)
        }
    };
    let seconds_per_image = start.elapsed().as_secs_f64() / clip.len() as f64;
    log::info!(
        "{} frames {:?}: {:.4} s per image",
        clip.video_id,
        clip.source_indices,
        seconds_per_image
    );
    Ok(Inference {
        maps,
        affinity,
        seconds_per_image,
    })
}
