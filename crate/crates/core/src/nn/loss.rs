//! Soft Dice loss on the foreground probability channel.

use super::activation::{softmax_backward, softmax_voxelwise};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// `1 - 2 sum(p g) / (sum(p^2) + sum(g^2))` and its gradient with respect to `p`.
///
/// `p` is the soft foreground probability, `g` the binary target; no
/// thresholding is applied.
pub fn dice_loss(p: &[f64], g: &[f64]) -> Result<(f64, Vec<f64>)> {
    if p.len() != g.len() {
        return Err(Error::Shape(format!("prediction has {} voxels, target {}", p.len(), g.len())));
    }
    let inter: f64 = p.iter().zip(g).map(|(a, b)| a * b).sum();
    let denom: f64 = p.iter().map(|a| a * a).sum::<f64>() + g.iter().map(|b| b * b).sum::<f64>();
    if denom <= 0.0 {
        return Err(Error::Degenerate("dice denominator is zero (empty prediction and target)".into()));
    }
    let loss = 1.0 - 2.0 * inter / denom;
    let d2 = denom * denom;
    let grad = p.iter().zip(g).map(|(pi, gi)| -2.0 * (gi * denom - 2.0 * pi * inter) / d2).collect();
    Ok((loss, grad))
}

/// Dice loss of `softmax(logits)` channel 1 against a one-hot target, pooled
/// over the whole batch, with the gradient with respect to the logits.
pub fn softmax_dice_loss(logits: &Tensor, target: &Tensor) -> Result<(f64, Tensor)> {
    if logits.shape() != target.shape() || logits.channels() != 2 {
        return Err(Error::Shape(format!(
            "logits {:?} and target {:?} must both have 2 channels and equal shape",
            logits.shape(),
            target.shape()
        )));
    }
    let probs = softmax_voxelwise(logits);
    let n = logits.batch();
    let p: Vec<f64> = (0..n).flat_map(|i| probs.channel(i, 1).iter().copied()).collect();
    let g: Vec<f64> = (0..n).flat_map(|i| target.channel(i, 1).iter().copied()).collect();
    let (loss, gp) = dice_loss(&p, &g)?;
    let mut grad_probs = Tensor::zeros(probs.shape());
    let s = logits.spatial_len();
    for i in 0..n {
        grad_probs.channel_mut(i, 1).copy_from_slice(&gp[i * s..(i + 1) * s]);
    }
    Ok((loss, softmax_backward(&probs, &grad_probs)))
}
