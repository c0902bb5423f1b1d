//! Per-channel batch normalization over `(N, D, H, W)`.

use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BnMode {
    /// Normalize with batch statistics and update the running estimates.
    Train,
    /// Normalize with running estimates.
    Eval,
}

/// Exponential moving averages of per-channel mean and (unbiased) variance.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    /// Number of training batches folded into the estimates.
    pub tracked: u64,
}

impl RunningStats {
    pub fn new(channels: usize) -> Self {
        Self { mean: vec![0.0; channels], var: vec![1.0; channels], tracked: 0 }
    }
}

/// Saved activations for [`batchnorm_backward`].
#[derive(Debug, Clone)]
pub struct BnCache {
    x_hat: Tensor,
    inv_std: Vec<f64>,
}

pub fn batchnorm_forward(
    x: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    stats: &mut RunningStats,
    mode: BnMode,
) -> Result<(Tensor, Option<BnCache>)> {
    let [n, c, ..] = x.shape();
    if gamma.len() != c || beta.len() != c || stats.mean.len() != c {
        return Err(Error::Shape(format!("batch norm over {c} channels got {} / {} parameters", gamma.len(), beta.len())));
    }
    let s = x.spatial_len();
    let m = (n * s) as f64;
    let (mean, inv_std): (Vec<f64>, Vec<f64>) = match mode {
        BnMode::Eval => {
            if stats.tracked == 0 {
                return Err(Error::UninitializedStats);
            }
            (stats.mean.clone(), stats.var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect())
        }
        BnMode::Train => {
            let mut mean = vec![0.0; c];
            let mut var = vec![0.0; c];
            for ch in 0..c {
                let sum: f64 = (0..n).map(|i| x.channel(i, ch).iter().sum::<f64>()).sum();
                let mu = sum / m;
                let sq: f64 = (0..n).map(|i| x.channel(i, ch).iter().map(|v| (v - mu).powi(2)).sum::<f64>()).sum();
                mean[ch] = mu;
                var[ch] = sq / m;
            }
            let unbias = if m > 1.0 { m / (m - 1.0) } else { 1.0 };
            for ch in 0..c {
                stats.mean[ch] = (1.0 - BN_MOMENTUM) * stats.mean[ch] + BN_MOMENTUM * mean[ch];
                stats.var[ch] = (1.0 - BN_MOMENTUM) * stats.var[ch] + BN_MOMENTUM * var[ch] * unbias;
            }
            stats.tracked += 1;
            (mean, var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect())
        }
    };
    let mut x_hat = x.clone();
    let mut y = Tensor::zeros(x.shape());
    for i in 0..n {
        for ch in 0..c {
            let (mu, is) = (mean[ch], inv_std[ch]);
            let (g, b) = (gamma.data()[ch], beta.data()[ch]);
            let xh = x_hat.channel_mut(i, ch);
            xh.iter_mut().for_each(|v| *v = (*v - mu) * is);
            y.channel_mut(i, ch).iter_mut().zip(xh.iter()).for_each(|(o, h)| *o = g * h + b);
        }
    }
    let cache = (mode == BnMode::Train).then_some(BnCache { x_hat, inv_std });
    Ok((y, cache))
}

/// Returns `(grad_x, grad_gamma, grad_beta)` for a train-mode forward pass.
pub fn batchnorm_backward(grad_out: &Tensor, cache: &BnCache, gamma: &Tensor) -> Result<(Tensor, Tensor, Tensor)> {
    let [n, c, ..] = grad_out.shape();
    if grad_out.shape() != cache.x_hat.shape() {
        return Err(Error::Shape("batch-norm gradient does not match cached activations".into()));
    }
    let m = (n * grad_out.spatial_len()) as f64;
    let mut g_gamma = vec![0.0; c];
    let mut g_beta = vec![0.0; c];
    for i in 0..n {
        for ch in 0..c {
            let gy = grad_out.channel(i, ch);
            let xh = cache.x_hat.channel(i, ch);
            g_beta[ch] += gy.iter().sum::<f64>();
            g_gamma[ch] += gy.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>();
        }
    }
    let mut gx = Tensor::zeros(grad_out.shape());
    for i in 0..n {
        for ch in 0..c {
            let k = gamma.data()[ch] * cache.inv_std[ch] / m;
            let (gb, gg) = (g_beta[ch], g_gamma[ch]);
            let gy = grad_out.channel(i, ch);
            let xh = cache.x_hat.channel(i, ch);
            for ((o, g), h) in gx.channel_mut(i, ch).iter_mut().zip(gy).zip(xh) {
                *o = k * (m * g - gb - h * gg);
            }
        }
    }
    Ok((gx, Tensor::vector(g_gamma), Tensor::vector(g_beta)))
}
