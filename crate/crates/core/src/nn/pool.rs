use super::tensor::Tensor;
use crate::error::{Error, Result};

/// 2x2x2 max pooling with stride 2.
///
/// Returns the pooled tensor and, per output element, the flat index of the
/// winning input element (first in scan order on ties).
pub fn maxpool3d(x: &Tensor) -> Result<(Tensor, Vec<usize>)> {
    let [n, c, d, h, w] = x.shape();
    if d % 2 != 0 || h % 2 != 0 || w % 2 != 0 {
        return Err(Error::Shape(format!("max pooling needs even spatial dims, got {d}x{h}x{w}")));
    }
    let (od, oh, ow) = (d / 2, h / 2, w / 2);
    let mut y = Tensor::zeros([n, c, od, oh, ow]);
    let mut argmax = Vec::with_capacity(y.len());
    let src = x.data();
    let out = y.data_mut();
    let mut o = 0;
    for plane in 0..n * c {
        let base = plane * d * h * w;
        for z in 0..od {
            for yy in 0..oh {
                for xx in 0..ow {
                    let first = base + (2 * z * h + 2 * yy) * w + 2 * xx;
                    let (mut best, mut best_i) = (src[first], first);
                    for dz in 0..2 {
                        for dy in 0..2 {
                            let row = first + (dz * h + dy) * w;
                            for i in row..row + 2 {
                                if src[i] > best {
                                    best = src[i];
                                    best_i = i;
                                }
                            }
                        }
                    }
                    out[o] = best;
                    argmax.push(best_i);
                    o += 1;
                }
            }
        }
    }
    Ok((y, argmax))
}

/// Routes each output gradient to its recorded argmax position.
pub fn maxpool3d_backward(grad_out: &Tensor, argmax: &[usize], input_shape: [usize; 5]) -> Result<Tensor> {
    if grad_out.len() != argmax.len() {
        return Err(Error::Arity { expected: argmax.len(), actual: grad_out.len() });
    }
    let mut gx = Tensor::zeros(input_shape);
    let g = gx.data_mut();
    for (&i, &v) in argmax.iter().zip(grad_out.data()) {
        g[i] += v;
    }
    Ok(gx)
}
