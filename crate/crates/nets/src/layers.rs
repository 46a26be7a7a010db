//! Layer trait and the non-convolutional layers.

use crate::tensor::Tensor;
use crate::{NetError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics, activations cached for `backward`.
    Train,
    /// Running statistics, nothing cached.
    Eval,
}

/// A trainable tensor with its accumulated gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub value: Vec<f32>,
    pub grad: Vec<f32>,
    pub shape: Vec<usize>,
}

impl Param {
    pub fn new(value: Vec<f32>, shape: Vec<usize>) -> Self {
        debug_assert_eq!(value.len(), shape.iter().product::<usize>());
        Param {
            grad: vec![0.0; value.len()],
            value,
            shape,
        }
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }
}

pub trait Layer: Send {
    /// Output shape for an input shape, without computing anything.
    fn out_shape(&self, input: [usize; 5]) -> Result<[usize; 5]>;
    fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor>;
    /// Gradient with respect to the input of the last training forward
    /// pass; parameter gradients are accumulated.
    fn backward(&mut self, grad: &Tensor) -> Tensor;
    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param));
    /// Non-trainable state that still belongs in a checkpoint.
    fn visit_buffers(&mut self, _f: &mut dyn FnMut(&mut Vec<f32>)) {}
}

fn missing_cache(layer: &str) -> ! {
    panic!("{layer}: backward called without a training forward pass")
}

pub struct Relu {
    out: Option<Tensor>,
}

impl Relu {
    pub fn new() -> Self {
        Relu { out: None }
    }
}

impl Default for Relu {
    fn default() -> Self {
        Relu::new()
    }
}

impl Layer for Relu {
    fn out_shape(&self, input: [usize; 5]) -> Result<[usize; 5]> {
        Ok(input)
    }

    fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let y = x.map(|v| v.max(0.0));
        if mode == Mode::Train {
            self.out = Some(y.clone());
        }
        Ok(y)
    }

    fn backward(&mut self, grad: &Tensor) -> Tensor {
        let y = self.out.take().unwrap_or_else(|| missing_cache("relu"));
        let data = grad
            .data
            .iter()
            .zip(&y.data)
            .map(|(&g, &v)| if v > 0.0 { g } else { 0.0 })
            .collect();
        Tensor {
            shape: grad.shape,
            data,
        }
    }

    fn visit_params(&mut self, _f: &mut dyn FnMut(&mut Param)) {}
}

/// Per-channel batch normalization over `(N, T, H, W)`.
pub struct BatchNorm3d {
    pub channels: usize,
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Vec<f32>,
    pub running_var: Vec<f32>,
    pub momentum: f32,
    pub eps: f32,
    cache: Option<(Tensor, Vec<f32>)>,
}

impl BatchNorm3d {
    pub fn new(channels: usize) -> Self {
        BatchNorm3d {
            channels,
            gamma: Param::new(vec![1.0; channels], vec![channels]),
            beta: Param::new(vec![0.0; channels], vec![channels]),
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            momentum: 0.1,
            eps: 1e-5,
            cache: None,
        }
    }
}

impl Layer for BatchNorm3d {
    fn out_shape(&self, input: [usize; 5]) -> Result<[usize; 5]> {
        if input[1] != self.channels {
            return Err(NetError::Shape(format!(
                "batch norm over {} channels got {:?}",
                self.channels, input
            )));
        }
        Ok(input)
    }

    fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        self.out_shape(x.shape)?;
        let (n, c, plane) = (x.batch(), self.channels, x.plane());
        let count = (n * plane) as f64;
        let mut y = Tensor::zeros(x.shape);
        match mode {
            Mode::Train => {
                let mut xhat = Tensor::zeros(x.shape);
                let mut invstd = vec![0.0f32; c];
                for ch in 0..c {
                    let (mut sum, mut sum_sq) = (0.0f64, 0.0f64);
                    for s in 0..n {
                        let off = (s * c + ch) * plane;
                        for &v in &x.data[off..off + plane] {
                            sum += v as f64;
                            sum_sq += (v as f64) * (v as f64);
                        }
                    }
                    let mean = sum / count;
                    let var = (sum_sq / count - mean * mean).max(0.0);
                    let inv = 1.0 / (var + self.eps as f64).sqrt();
                    invstd[ch] = inv as f32;
                    let (g, b) = (self.gamma.value[ch], self.beta.value[ch]);
                    for s in 0..n {
                        let off = (s * c + ch) * plane;
                        for i in off..off + plane {
                            let h = ((x.data[i] as f64 - mean) * inv) as f32;
                            xhat.data[i] = h;
                            y.data[i] = g * h + b;
                        }
                    }
                    let m = self.momentum;
                    let unbiased = if count > 1.0 { var * count / (count - 1.0) } else { var };
                    self.running_mean[ch] = (1.0 - m) * self.running_mean[ch] + m * mean as f32;
                    self.running_var[ch] = (1.0 - m) * self.running_var[ch] + m * unbiased as f32;
                }
                self.cache = Some((xhat, invstd));
            }
            Mode::Eval => {
                for ch in 0..c {
                    let inv = 1.0 / (self.running_var[ch] + self.eps).sqrt();
                    let scale = self.gamma.value[ch] * inv;
                    let shift = self.beta.value[ch] - self.running_mean[ch] * scale;
                    for s in 0..n {
                        let off = (s * c + ch) * plane;
                        for i in off..off + plane {
                            y.data[i] = x.data[i] * scale + shift;
                        }
                    }
                }
            }
        }
        Ok(y)
    }

    fn backward(&mut self, grad: &Tensor) -> Tensor {
        let (xhat, invstd) = self.cache.take().unwrap_or_else(|| missing_cache("batch norm"));
        let (n, c, plane) = (grad.batch(), self.channels, grad.plane());
        let count = (n * plane) as f64;
        let mut dx = Tensor::zeros(grad.shape);
        for ch in 0..c {
            let (mut sum_g, mut sum_gx) = (0.0f64, 0.0f64);
            for s in 0..n {
                let off = (s * c + ch) * plane;
                for i in off..off + plane {
                    sum_g += grad.data[i] as f64;
                    sum_gx += (grad.data[i] * xhat.data[i]) as f64;
                }
            }
            self.beta.grad[ch] += sum_g as f32;
            self.gamma.grad[ch] += sum_gx as f32;
            let k = self.gamma.value[ch] as f64 * invstd[ch] as f64 / count;
            let (mg, mgx) = (sum_g, sum_gx);
            for s in 0..n {
                let off = (s * c + ch) * plane;
                for i in off..off + plane {
                    let g = grad.data[i] as f64;
                    dx.data[i] = (k * (count * g - mg - xhat.data[i] as f64 * mgx)) as f32;
                }
            }
        }
        dx
    }

    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param)) {
        f(&mut self.gamma);
        f(&mut self.beta);
    }

    fn visit_buffers(&mut self, f: &mut dyn FnMut(&mut Vec<f32>)) {
        f(&mut self.running_mean);
        f(&mut self.running_var);
    }
}

pub struct Sequential {
    pub layers: Vec<Box<dyn Layer>>,
}

impl Sequential {
    pub fn new(layers: Vec<Box<dyn Layer>>) -> Self {
        Sequential { layers }
    }
}

impl Layer for Sequential {
    fn out_shape(&self, input: [usize; 5]) -> Result<[usize; 5]> {
        self.layers.iter().try_fold(input, |s, l| l.out_shape(s))
    }

    fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let mut layers = self.layers.iter_mut();
        let Some(first) = layers.next() else {
            return Ok(x.clone());
        };
        let mut y = first.forward(x, mode)?;
        for l in layers {
            y = l.forward(&y, mode)?;
        }
        Ok(y)
    }

    fn backward(&mut self, grad: &Tensor) -> Tensor {
        let mut layers = self.layers.iter_mut().rev();
        let Some(last) = layers.next() else {
            return grad.clone();
        };
        let mut g = last.backward(grad);
        for l in layers {
            g = l.backward(&g);
        }
        g
    }

    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param)) {
        for l in &mut self.layers {
            l.visit_params(f);
        }
    }

    fn visit_buffers(&mut self, f: &mut dyn FnMut(&mut Vec<f32>)) {
        for l in &mut self.layers {
            l.visit_buffers(f);
        }
    }
}

/// Two parallel branches on the same input, concatenated along channels and
/// passed through a fusion stage.
pub struct Branches {
    pub a: Sequential,
    pub b: Sequential,
    pub fuse: Sequential,
    split: usize,
}

impl Branches {
    pub fn new(a: Sequential, b: Sequential, fuse: Sequential) -> Self {
        Branches { a, b, fuse, split: 0 }
    }
}

impl Layer for Branches {
    fn out_shape(&self, input: [usize; 5]) -> Result<[usize; 5]> {
        let sa = self.a.out_shape(input)?;
        let sb = self.b.out_shape(input)?;
        if sa[2..] != sb[2..] {
            return Err(NetError::Shape(format!("branch outputs {sa:?} and {sb:?} differ")));
        }
        let mut s = sa;
        s[1] += sb[1];
        self.fuse.out_shape(s)
    }

    fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let ya = self.a.forward(x, mode)?;
        let yb = self.b.forward(x, mode)?;
        self.split = ya.channels();
        let cat = Tensor::concat_channels(&ya, &yb)?;
        drop((ya, yb));
        self.fuse.forward(&cat, mode)
    }

    fn backward(&mut self, grad: &Tensor) -> Tensor {
        let g = self.fuse.backward(grad);
        let (ga, gb) = g.split_channels(self.split);
        drop(g);
        let mut dx = self.a.backward(&ga);
        dx.add_assign(&self.b.backward(&gb));
        dx
    }

    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.a.visit_params(f);
        self.b.visit_params(f);
        self.fuse.visit_params(f);
    }

    fn visit_buffers(&mut self, f: &mut dyn FnMut(&mut Vec<f32>)) {
        self.a.visit_buffers(f);
        self.b.visit_buffers(f);
        self.fuse.visit_buffers(f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(shape: [usize; 5]) -> Tensor {
        let n: usize = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|i| ((i * 37) % 11) as f32 - 4.0).collect()).unwrap()
    }

    #[test]
    fn batch_norm_normalizes_in_training() {
        let mut bn = BatchNorm3d::new(2);
        let x = ramp([2, 2, 1, 3, 3]);
        let y = bn.forward(&x, Mode::Train).unwrap();
        for ch in 0..2 {
            let vals: Vec<f64> = (0..2)
                .flat_map(|s| y.sample(s)[ch * 9..(ch + 1) * 9].to_vec())
                .map(|v| v as f64)
                .collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
            assert!(mean.abs() < 1e-5);
            assert!((var - 1.0).abs() < 1e-3);
        }
    }

    #[test]
    fn batch_norm_gradient_matches_finite_differences() {
        let x = ramp([2, 2, 1, 2, 3]);
        // Loss = sum(w * y) with fixed weights w.
        let w: Vec<f32> = (0..x.len()).map(|i| ((i * 7) % 5) as f32 * 0.3 - 0.5).collect();
        let loss = |x: &Tensor| -> f64 {
            let mut bn = BatchNorm3d::new(2);
            let y = bn.forward(x, Mode::Train).unwrap();
            y.data.iter().zip(&w).map(|(&a, &b)| (a * b) as f64).sum()
        };
        let mut bn = BatchNorm3d::new(2);
        bn.forward(&x, Mode::Train).unwrap();
        let g = Tensor::from_vec(x.shape, w.clone()).unwrap();
        let dx = bn.backward(&g);
        for i in 0..x.len() {
            let h = 1e-2;
            let mut xp = x.clone();
            xp.data[i] += h;
            let mut xm = x.clone();
            xm.data[i] -= h;
            let num = (loss(&xp) - loss(&xm)) / (2.0 * h as f64);
            assert!((num - dx.data[i] as f64).abs() < 2e-3, "{i}: {num} vs {}", dx.data[i]);
        }
    }

    #[test]
    fn eval_uses_running_statistics() {
        let mut bn = BatchNorm3d::new(1);
        bn.running_mean[0] = 2.0;
        bn.running_var[0] = 4.0;
        let x = Tensor::from_vec([1, 1, 1, 1, 2], vec![2.0, 6.0]).unwrap();
        let y = bn.forward(&x, Mode::Eval).unwrap();
        assert!((y.data[0]).abs() < 1e-6);
        assert!((y.data[1] - 2.0).abs() < 1e-3);
    }

    #[test]
    fn relu_masks_gradient() {
        let mut r = Relu::new();
        let x = Tensor::from_vec([1, 1, 1, 1, 3], vec![-1.0, 0.5, 2.0]).unwrap();
        assert_eq!(r.forward(&x, Mode::Train).unwrap().data, vec![0.0, 0.5, 2.0]);
        let g = r.backward(&Tensor::from_vec([1, 1, 1, 1, 3], vec![1.0, 1.0, 1.0]).unwrap());
        assert_eq!(g.data, vec![0.0, 1.0, 1.0]);
    }
}
