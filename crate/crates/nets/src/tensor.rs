//! Dense f32 tensors laid out as `[N, C, T, H, W]`.

use crate::{NetError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: [usize; 5],
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn zeros(shape: [usize; 5]) -> Self {
        Tensor {
            shape,
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn from_vec(shape: [usize; 5], data: Vec<f32>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(NetError::Shape(format!("{} values for shape {shape:?}", data.len())));
        }
        Ok(Tensor { shape, data })
    }

    pub fn batch(&self) -> usize {
        self.shape[0]
    }

    pub fn channels(&self) -> usize {
        self.shape[1]
    }

    /// `[T, H, W]`.
    pub fn dims(&self) -> [usize; 3] {
        [self.shape[2], self.shape[3], self.shape[4]]
    }

    /// Elements per channel of one sample.
    pub fn plane(&self) -> usize {
        self.shape[2] * self.shape[3] * self.shape[4]
    }

    /// Elements per sample.
    pub fn sample_len(&self) -> usize {
        self.shape[1] * self.plane()
    }

    pub fn sample(&self, n: usize) -> &[f32] {
        let s = self.sample_len();
        &self.data[n * s..(n + 1) * s]
    }

    pub fn sample_mut(&mut self, n: usize) -> &mut [f32] {
        let s = self.sample_len();
        &mut self.data[n * s..(n + 1) * s]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Tensor {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    /// Concatenates along the channel axis.
    pub fn concat_channels(a: &Tensor, b: &Tensor) -> Result<Tensor> {
        if a.shape[0] != b.shape[0] || a.dims() != b.dims() {
            return Err(NetError::Shape(format!("cannot concatenate {:?} and {:?}", a.shape, b.shape)));
        }
        let mut shape = a.shape;
        shape[1] += b.shape[1];
        let mut data = Vec::with_capacity(a.len() + b.len());
        for n in 0..a.batch() {
            data.extend_from_slice(a.sample(n));
            data.extend_from_slice(b.sample(n));
        }
        Ok(Tensor { shape, data })
    }

    /// Splits the channel axis after the first `c` channels.
    pub fn split_channels(&self, c: usize) -> (Tensor, Tensor) {
        assert!(c <= self.channels());
        let plane = self.plane();
        let mut sa = self.shape;
        sa[1] = c;
        let mut sb = self.shape;
        sb[1] = self.channels() - c;
        let mut a = Vec::with_capacity(sa.iter().product());
        let mut b = Vec::with_capacity(sb.iter().product());
        for n in 0..self.batch() {
            let s = self.sample(n);
            a.extend_from_slice(&s[..c * plane]);
            b.extend_from_slice(&s[c * plane..]);
        }
        (Tensor { shape: sa, data: a }, Tensor { shape: sb, data: b })
    }

    /// Stacks single-sample tensors along the batch axis.
    pub fn stack(samples: &[&Tensor]) -> Result<Tensor> {
        let first = samples
            .first()
            .ok_or_else(|| NetError::Shape("cannot stack an empty list".into()))?;
        let mut shape = first.shape;
        shape[0] = 0;
        let mut data = Vec::new();
        for s in samples {
            if s.shape[1..] != first.shape[1..] {
                return Err(NetError::Shape(format!("cannot stack {:?} with {:?}", s.shape, first.shape)));
            }
            shape[0] += s.shape[0];
            data.extend_from_slice(&s.data);
        }
        Ok(Tensor { shape, data })
    }

    /// Sample `n` as a batch of one.
    pub fn take_sample(&self, n: usize) -> Tensor {
        let mut shape = self.shape;
        shape[0] = 1;
        Tensor {
            shape,
            data: self.sample(n).to_vec(),
        }
    }
}
