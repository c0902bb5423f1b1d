use super::tensor::Tensor;

pub fn relu_inplace(x: &mut Tensor) {
    x.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
}

/// Gradient of ReLU given its output: passes where `output > 0`.
pub fn relu_backward(grad_out: &Tensor, output: &Tensor) -> Tensor {
    let data = grad_out
        .data()
        .iter()
        .zip(output.data())
        .map(|(g, y)| if *y > 0.0 { *g } else { 0.0 })
        .collect();
    Tensor::from_vec(grad_out.shape(), data).expect("same shape")
}

/// Softmax across channels at every voxel, stabilized by max subtraction.
pub fn softmax_voxelwise(logits: &Tensor) -> Tensor {
    let [n, c, ..] = logits.shape();
    let s = logits.spatial_len();
    let mut out = Tensor::zeros(logits.shape());
    let mut buf = vec![0.0; c];
    for i in 0..n {
        let src = logits.sample(i);
        let dst = out.sample_mut(i);
        for v in 0..s {
            let max = (0..c).map(|ch| src[ch * s + v]).fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for ch in 0..c {
                buf[ch] = (src[ch * s + v] - max).exp();
                sum += buf[ch];
            }
            for ch in 0..c {
                dst[ch * s + v] = buf[ch] / sum;
            }
        }
    }
    out
}

/// Chain rule through softmax: `dl_c = p_c (dp_c - sum_k p_k dp_k)`.
pub fn softmax_backward(probs: &Tensor, grad_probs: &Tensor) -> Tensor {
    let [n, c, ..] = probs.shape();
    let s = probs.spatial_len();
    let mut out = Tensor::zeros(probs.shape());
    for i in 0..n {
        let p = probs.sample(i);
        let g = grad_probs.sample(i);
        let dst = out.sample_mut(i);
        for v in 0..s {
            let dot: f64 = (0..c).map(|ch| p[ch * s + v] * g[ch * s + v]).sum();
            for ch in 0..c {
                dst[ch * s + v] = p[ch * s + v] * (g[ch * s + v] - dot);
            }
        }
    }
    out
}
