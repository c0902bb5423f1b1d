use crate::error::{Error, Result};

/// Dense 5D array `(N, C, D, H, W)` in row-major order with an optional gradient buffer.
///
/// Equality compares shape and values; the gradient buffer is scratch space.
#[derive(Debug, Clone)]
pub struct Tensor {
    shape: [usize; 5],
    data: Vec<f64>,
    grad: Option<Vec<f64>>,
}

impl PartialEq for Tensor {
    fn eq(&self, other: &Self) -> bool {
        self.shape == other.shape && self.data == other.data
    }
}

impl Tensor {
    pub fn zeros(shape: [usize; 5]) -> Self {
        Self { shape, data: vec![0.0; shape.iter().product()], grad: None }
    }

    pub fn full(shape: [usize; 5], value: f64) -> Self {
        Self { shape, data: vec![value; shape.iter().product()], grad: None }
    }

    pub fn from_vec(shape: [usize; 5], data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Shape(format!("shape {shape:?} needs {n} values, got {}", data.len())));
        }
        Ok(Self { shape, data, grad: None })
    }

    /// Per-channel vector stored as shape `(C, 1, 1, 1, 1)`.
    pub fn vector(data: Vec<f64>) -> Self {
        Self { shape: [data.len(), 1, 1, 1, 1], data, grad: None }
    }

    pub fn shape(&self) -> [usize; 5] {
        self.shape
    }

    pub fn batch(&self) -> usize {
        self.shape[0]
    }

    pub fn channels(&self) -> usize {
        self.shape[1]
    }

    pub fn spatial(&self) -> [usize; 3] {
        [self.shape[2], self.shape[3], self.shape[4]]
    }

    pub fn spatial_len(&self) -> usize {
        self.shape[2] * self.shape[3] * self.shape[4]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Contiguous `(D, H, W)` block of sample `n`, channel `c`.
    pub fn channel(&self, n: usize, c: usize) -> &[f64] {
        let s = self.spatial_len();
        let off = (n * self.shape[1] + c) * s;
        &self.data[off..off + s]
    }

    pub fn channel_mut(&mut self, n: usize, c: usize) -> &mut [f64] {
        let s = self.spatial_len();
        let off = (n * self.shape[1] + c) * s;
        &mut self.data[off..off + s]
    }

    /// All channels of sample `n`.
    pub fn sample(&self, n: usize) -> &[f64] {
        let s = self.shape[1] * self.spatial_len();
        &self.data[n * s..(n + 1) * s]
    }

    pub fn sample_mut(&mut self, n: usize) -> &mut [f64] {
        let s = self.shape[1] * self.spatial_len();
        &mut self.data[n * s..(n + 1) * s]
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    /// Gradient buffer, allocated as zeros on first use.
    pub fn grad_mut(&mut self) -> &mut [f64] {
        let n = self.data.len();
        self.grad.get_or_insert_with(|| vec![0.0; n])
    }

    pub fn zero_grad(&mut self) {
        if let Some(g) = self.grad.as_mut() {
            g.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    /// Adds `delta` into the gradient buffer.
    pub fn accumulate_grad(&mut self, delta: &[f64]) {
        let g = self.grad_mut();
        assert_eq!(g.len(), delta.len(), "gradient length mismatch");
        g.iter_mut().zip(delta).for_each(|(g, d)| *g += d);
    }

    pub fn dot(&self, other: &Tensor) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    /// Concatenates along the channel axis.
    pub fn concat_channels(a: &Tensor, b: &Tensor) -> Result<Tensor> {
        if a.shape[0] != b.shape[0] || a.spatial() != b.spatial() {
            return Err(Error::Shape(format!("cannot concatenate {:?} and {:?}", a.shape, b.shape)));
        }
        let shape = [a.shape[0], a.shape[1] + b.shape[1], a.shape[2], a.shape[3], a.shape[4]];
        let mut data = Vec::with_capacity(a.len() + b.len());
        for n in 0..a.shape[0] {
            data.extend_from_slice(a.sample(n));
            data.extend_from_slice(b.sample(n));
        }
        Tensor::from_vec(shape, data)
    }

    /// Inverse of [`Tensor::concat_channels`]: splits after `first` channels.
    pub fn split_channels(&self, first: usize) -> (Tensor, Tensor) {
        let [n, c, d, h, w] = self.shape;
        let s = self.spatial_len();
        let mut a = Vec::with_capacity(n * first * s);
        let mut b = Vec::with_capacity(n * (c - first) * s);
        for i in 0..n {
            let sample = self.sample(i);
            a.extend_from_slice(&sample[..first * s]);
            b.extend_from_slice(&sample[first * s..]);
        }
        (
            Tensor { shape: [n, first, d, h, w], data: a, grad: None },
            Tensor { shape: [n, c - first, d, h, w], data: b, grad: None },
        )
    }
}
