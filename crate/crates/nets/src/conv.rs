//! 3-D convolution and transposed convolution via im2col + GEMM.
//!
//! Column matrices are built in chunks of whole output rows so that the
//! scratch buffer stays bounded for wide layers at full resolution.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::layers::{Layer, Mode, Param};
use crate::tensor::Tensor;
use crate::{NetError, Result};

/// Upper bound on the floats held by one column chunk.
const CHUNK_FLOATS: usize = 1 << 23;

/// Kernel, stride and padding in `[T, H, W]` order. Padding is given as
/// `(before, after)` per axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvGeometry {
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
    pub pad: [(usize, usize); 3],
}

impl ConvGeometry {
    pub fn cube(k: usize, pad: usize) -> Self {
        ConvGeometry {
            kernel: [k; 3],
            stride: [1; 3],
            pad: [(pad, pad); 3],
        }
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == [1; 3] && self.stride == [1; 3] && self.pad == [(0, 0); 3]
    }

    pub fn kernel_volume(&self) -> usize {
        self.kernel.iter().product()
    }

    /// Output dims of a convolution over `input`.
    pub fn out_dims(&self, input: [usize; 3]) -> Result<[usize; 3]> {
        let mut out = [0; 3];
        for a in 0..3 {
            let span = input[a] + self.pad[a].0 + self.pad[a].1;
            if span < self.kernel[a] || self.stride[a] == 0 {
                return Err(NetError::Shape(format!(
                    "input {input:?} too small for kernel {:?}",
                    self.kernel
                )));
            }
            out[a] = (span - self.kernel[a]) / self.stride[a] + 1;
        }
        Ok(out)
    }

    /// Output dims of a transposed convolution over `input`.
    pub fn transposed_out_dims(&self, input: [usize; 3]) -> Result<[usize; 3]> {
        let mut out = [0; 3];
        for a in 0..3 {
            let full = input[a].saturating_sub(1) * self.stride[a] + self.kernel[a];
            let crop = self.pad[a].0 + self.pad[a].1;
            if input[a] == 0 || full <= crop {
                return Err(NetError::Shape(format!("input {input:?} too small to upsample")));
            }
            out[a] = full - crop;
        }
        Ok(out)
    }
}

/// Mapping between an image `[c, T, H, W]` and its column matrix
/// `[c * kernel_volume, To * Ho * Wo]`.
struct Im2Col {
    c: usize,
    img: [usize; 3],
    col: [usize; 3],
    g: ConvGeometry,
}

impl Im2Col {
    fn k(&self) -> usize {
        self.c * self.g.kernel_volume()
    }

    fn rows(&self) -> usize {
        self.col[0] * self.col[1]
    }

    fn cols_len(&self) -> usize {
        self.rows() * self.col[2]
    }

    fn rows_per_chunk(&self) -> usize {
        (CHUNK_FLOATS / (self.k() * self.col[2]).max(1)).clamp(1, self.rows())
    }

    /// Valid output column range for kernel offset `d` along W.
    fn w_range(&self, d: usize) -> (usize, usize) {
        let (s, p, iw, wo) = (self.g.stride[2], self.g.pad[2].0, self.img[2], self.col[2]);
        let lo = if p > d { (p - d).div_ceil(s) } else { 0 };
        let hi = if iw + p > d { ((iw + p - d - 1) / s + 1).min(wo) } else { 0 };
        (lo.min(hi), hi)
    }

    /// Visits every (k row, chunk row, source row offset) triple.
    fn for_each_row(&self, r0: usize, r1: usize, mut f: impl FnMut(usize, usize, Option<usize>, usize)) {
        let [it, ih, iw] = self.img;
        let [kt, kh, kw] = self.g.kernel;
        let [st, sh, _] = self.g.stride;
        let (pt, ph) = (self.g.pad[0].0, self.g.pad[1].0);
        let ho_n = self.col[1];
        let mut k = 0;
        for ci in 0..self.c {
            for dt in 0..kt {
                for dh in 0..kh {
                    for dw in 0..kw {
                        for (ri, r) in (r0..r1).enumerate() {
                            let (to, ho) = (r / ho_n, r % ho_n);
                            let ti = (to * st + dt).wrapping_sub(pt);
                            let hi = (ho * sh + dh).wrapping_sub(ph);
                            let src = (ti < it && hi < ih).then(|| ((ci * it + ti) * ih + hi) * iw);
                            f(k, ri, src, dw);
                        }
                        k += 1;
                    }
                }
            }
        }
    }

    fn fill(&self, img: &[f32], r0: usize, r1: usize, cols: &mut [f32]) {
        let wo = self.col[2];
        let l = (r1 - r0) * wo;
        let (s, p) = (self.g.stride[2], self.g.pad[2].0);
        self.for_each_row(r0, r1, |k, ri, src, dw| {
            let out = &mut cols[k * l + ri * wo..k * l + (ri + 1) * wo];
            let Some(base) = src else {
                out.fill(0.0);
                return;
            };
            let (lo, hi) = self.w_range(dw);
            out[..lo].fill(0.0);
            out[hi..].fill(0.0);
            let row = &img[base..base + self.img[2]];
            if s == 1 {
                let start = lo + dw - p;
                out[lo..hi].copy_from_slice(&row[start..start + hi - lo]);
            } else {
                for (w, o) in out[lo..hi].iter_mut().enumerate() {
                    *o = row[(w + lo) * s + dw - p];
                }
            }
        });
    }

    fn scatter(&self, cols: &[f32], r0: usize, r1: usize, img: &mut [f32]) {
        let wo = self.col[2];
        let l = (r1 - r0) * wo;
        let (s, p) = (self.g.stride[2], self.g.pad[2].0);
        self.for_each_row(r0, r1, |k, ri, src, dw| {
            let Some(base) = src else { return };
            let (lo, hi) = self.w_range(dw);
            let from = &cols[k * l + ri * wo..k * l + (ri + 1) * wo];
            let iw = self.img[2];
            let row = &mut img[base..base + iw];
            for w in lo..hi {
                row[w * s + dw - p] += from[w];
            }
        });
    }
}

/// `C = alpha * A * B + beta * C` on strided row-major views.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    (rsa, csa): (usize, usize),
    b: &[f32],
    (rsb, csb): (usize, usize),
    beta: f32,
    c: &mut [f32],
    (rsc, csc): (usize, usize),
) {
    if m == 0 || n == 0 {
        return;
    }
    let last = |rs: usize, cs: usize, r: usize, cc: usize| (r - 1) * rs + (cc - 1) * cs;
    if k > 0 {
        assert!(a.len() > last(rsa, csa, m, k) && b.len() > last(rsb, csb, k, n));
    }
    assert!(c.len() > last(rsc, csc, m, n));
    // SAFETY: the asserts above keep every strided access inside the slices,
    // and `c` does not alias `a` or `b` because it is borrowed mutably.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            csc as isize,
        );
    }
}

fn he_normal(rng: &mut impl Rng, n: usize, fan_in: usize, gain: f64) -> Vec<f32> {
    let std = (gain / fan_in.max(1) as f64).sqrt();
    let dist = Normal::new(0.0, std).expect("finite std");
    (0..n).map(|_| dist.sample(rng) as f32).collect()
}

pub struct Conv3d {
    pub cin: usize,
    pub cout: usize,
    pub geom: ConvGeometry,
    /// `[cout, cin * kernel_volume]`.
    pub weight: Param,
    pub bias: Option<Param>,
    input: Option<Tensor>,
}

impl Conv3d {
    /// He-normal weights; the bias, when present, starts at zero.
    pub fn new(cin: usize, cout: usize, geom: ConvGeometry, bias: bool, rng: &mut impl Rng) -> Self {
        let k = cin * geom.kernel_volume();
        Conv3d {
            cin,
            cout,
            geom,
            weight: Param::new(he_normal(rng, cout * k, k, 2.0), vec![cout, k]),
            bias: bias.then(|| Param::new(vec![0.0; cout], vec![cout])),
            input: None,
        }
    }

    fn im2col(&self, input: [usize; 3]) -> Result<Im2Col> {
        Ok(Im2Col {
            c: self.cin,
            img: input,
            col: self.geom.out_dims(input)?,
            g: self.geom,
        })
    }
}

impl Layer for Conv3d {
    fn out_shape(&self, input: [usize; 5]) -> Result<[usize; 5]> {
        if input[1] != self.cin {
            return Err(NetError::Shape(format!(
                "convolution expects {} input channels, got {:?}",
                self.cin, input
            )));
        }
        let [t, h, w] = self.geom.out_dims([input[2], input[3], input[4]])?;
        Ok([input[0], self.cout, t, h, w])
    }

    fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let shape = self.out_shape(x.shape)?;
        let mut y = Tensor::zeros(shape);
        let map = self.im2col(x.dims())?;
        let (k, p) = (map.k(), map.cols_len());
        let wo = map.col[2];
        let mut cols = Vec::new();
        for n in 0..x.batch() {
            let xs = x.sample(n);
            let ys = y.sample_mut(n);
            if self.geom.is_pointwise() {
                gemm(self.cout, k, p, &self.weight.value, (k, 1), xs, (p, 1), 0.0, ys, (p, 1));
            } else {
                let step = map.rows_per_chunk();
                for r0 in (0..map.rows()).step_by(step) {
                    let r1 = (r0 + step).min(map.rows());
                    let l = (r1 - r0) * wo;
                    cols.resize(k * l, 0.0);
                    map.fill(xs, r0, r1, &mut cols);
                    gemm(self.cout, k, l, &self.weight.value, (k, 1), &cols, (l, 1), 0.0, &mut ys[r0 * wo..], (p, 1));
                }
            }
            if let Some(b) = &self.bias {
                for (c, chunk) in ys.chunks_mut(p).enumerate() {
                    chunk.iter_mut().for_each(|v| *v += b.value[c]);
                }
            }
        }
        if mode == Mode::Train {
            self.input = Some(x.clone());
        }
        Ok(y)
    }

    fn backward(&mut self, grad: &Tensor) -> Tensor {
        let x = self
            .input
            .take()
            .expect("convolution: backward called without a training forward pass");
        let map = self.im2col(x.dims()).expect("shape checked in forward");
        let (k, p) = (map.k(), map.cols_len());
        let wo = map.col[2];
        let mut dx = Tensor::zeros(x.shape);
        let mut cols = Vec::new();
        let mut dcols = Vec::new();
        for n in 0..x.batch() {
            let xs = x.sample(n);
            let gs = grad.sample(n);
            let dxs = dx.sample_mut(n);
            if self.geom.is_pointwise() {
                gemm(self.cout, p, k, gs, (p, 1), xs, (1, p), 1.0, &mut self.weight.grad, (k, 1));
                gemm(k, self.cout, p, &self.weight.value, (1, k), gs, (p, 1), 0.0, dxs, (p, 1));
            } else {
                let step = map.rows_per_chunk();
                for r0 in (0..map.rows()).step_by(step) {
                    let r1 = (r0 + step).min(map.rows());
                    let l = (r1 - r0) * wo;
                    cols.resize(k * l, 0.0);
                    dcols.resize(k * l, 0.0);
                    map.fill(xs, r0, r1, &mut cols);
                    let g = &gs[r0 * wo..];
                    gemm(self.cout, l, k, g, (p, 1), &cols, (1, l), 1.0, &mut self.weight.grad, (k, 1));
                    gemm(k, self.cout, l, &self.weight.value, (1, k), g, (p, 1), 0.0, &mut dcols, (l, 1));
                    map.scatter(&dcols, r0, r1, dxs);
                }
            }
            if let Some(b) = &mut self.bias {
                for (c, chunk) in gs.chunks(p).enumerate() {
                    b.grad[c] += chunk.iter().sum::<f32>();
                }
            }
        }
        dx
    }

    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param)) {
        f(&mut self.weight);
        if let Some(b) = &mut self.bias {
            f(b);
        }
    }
}

pub struct ConvTranspose3d {
    pub cin: usize,
    pub cout: usize,
    pub geom: ConvGeometry,
    /// `[cin, cout * kernel_volume]`.
    pub weight: Param,
    pub bias: Option<Param>,
    input: Option<Tensor>,
}

impl ConvTranspose3d {
    pub fn new(cin: usize, cout: usize, geom: ConvGeometry, bias: bool, rng: &mut impl Rng) -> Self {
        let k = cout * geom.kernel_volume();
        // Each output sees cin * prod(kernel / stride) inputs on average.
        let fan_in: usize = cin
            * (0..3)
                .map(|a| geom.kernel[a].div_ceil(geom.stride[a]))
                .product::<usize>();
        ConvTranspose3d {
            cin,
            cout,
            geom,
            weight: Param::new(he_normal(rng, cin * k, fan_in, 2.0), vec![cin, k]),
            bias: bias.then(|| Param::new(vec![0.0; cout], vec![cout])),
            input: None,
        }
    }

    fn im2col(&self, input: [usize; 3]) -> Result<Im2Col> {
        let out = self.geom.transposed_out_dims(input)?;
        let map = Im2Col {
            c: self.cout,
            img: out,
            col: input,
            g: self.geom,
        };
        if self.geom.out_dims(out)? != input {
            return Err(NetError::Shape(format!(
                "transposed convolution of {input:?} is not invertible with {:?}",
                self.geom
            )));
        }
        Ok(map)
    }
}

impl Layer for ConvTranspose3d {
    fn out_shape(&self, input: [usize; 5]) -> Result<[usize; 5]> {
        if input[1] != self.cin {
            return Err(NetError::Shape(format!(
                "transposed convolution expects {} input channels, got {:?}",
                self.cin, input
            )));
        }
        let [t, h, w] = self.im2col([input[2], input[3], input[4]])?.img;
        Ok([input[0], self.cout, t, h, w])
    }

    fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let shape = self.out_shape(x.shape)?;
        let map = self.im2col(x.dims())?;
        let mut y = Tensor::zeros(shape);
        let (k, p_in) = (map.k(), map.cols_len());
        let p_out = y.plane();
        let wi = map.col[2];
        let mut cols = Vec::new();
        for n in 0..x.batch() {
            let xs = x.sample(n);
            let ys = y.sample_mut(n);
            let step = map.rows_per_chunk();
            for r0 in (0..map.rows()).step_by(step) {
                let r1 = (r0 + step).min(map.rows());
                let l = (r1 - r0) * wi;
                cols.resize(k * l, 0.0);
                gemm(k, self.cin, l, &self.weight.value, (1, k), &xs[r0 * wi..], (p_in, 1), 0.0, &mut cols, (l, 1));
                map.scatter(&cols, r0, r1, ys);
            }
            if let Some(b) = &self.bias {
                for (c, chunk) in ys.chunks_mut(p_out).enumerate() {
                    chunk.iter_mut().for_each(|v| *v += b.value[c]);
                }
            }
        }
        if mode == Mode::Train {
            self.input = Some(x.clone());
        }
        Ok(y)
    }

    fn backward(&mut self, grad: &Tensor) -> Tensor {
        let x = self
            .input
            .take()
            .expect("transposed convolution: backward called without a training forward pass");
        let map = self.im2col(x.dims()).expect("shape checked in forward");
        let (k, p_in) = (map.k(), map.cols_len());
        let p_out = grad.plane();
        let wi = map.col[2];
        let mut dx = Tensor::zeros(x.shape);
        let mut cols = Vec::new();
        for n in 0..x.batch() {
            let xs = x.sample(n);
            let gs = grad.sample(n);
            let dxs = dx.sample_mut(n);
            let step = map.rows_per_chunk();
            for r0 in (0..map.rows()).step_by(step) {
                let r1 = (r0 + step).min(map.rows());
                let l = (r1 - r0) * wi;
                cols.resize(k * l, 0.0);
                map.fill(gs, r0, r1, &mut cols);
                gemm(self.cin, k, l, &self.weight.value, (k, 1), &cols, (l, 1), 0.0, &mut dxs[r0 * wi..], (p_in, 1));
                gemm(self.cin, l, k, &xs[r0 * wi..], (p_in, 1), &cols, (1, l), 1.0, &mut self.weight.grad, (k, 1));
            }
            if let Some(b) = &mut self.bias {
                for (c, chunk) in gs.chunks(p_out).enumerate() {
                    b.grad[c] += chunk.iter().sum::<f32>();
                }
            }
        }
        dx
    }

    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param)) {
        f(&mut self.weight);
        if let Some(b) = &mut self.bias {
            f(b);
        }
    }
}
