//! 2x2x2 stride-2 transposed convolution (learned upsampling) and its adjoint.

use super::gemm::{gemm, View};
use super::tensor::Tensor;
use crate::error::{Error, Result};

fn check_kernel(weight: &Tensor, cin: usize) -> Result<usize> {
    let [wi, wo, a, b, c] = weight.shape();
    if [a, b, c] != [2, 2, 2] {
        return Err(Error::Shape(format!("transposed-conv kernel must be 2x2x2, got {a}x{b}x{c}")));
    }
    if wi != cin {
        return Err(Error::Shape(format!("input has {cin} channels, kernel expects {wi}")));
    }
    Ok(wo)
}

/// `y[co, 2p + o] = sum_ci x[ci, p] * w[ci, co, o] + b[co]`.
///
/// `weight` is `(C_in, C_out, 2, 2, 2)`; spatial dims double.
pub fn convtranspose3d(x: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let [n, cin, d, h, w] = x.shape();
    let cout = check_kernel(weight, cin)?;
    if bias.len() != cout {
        return Err(Error::Shape(format!("bias has {} entries, expected {cout}", bias.len())));
    }
    let p = d * h * w;
    let (od, oh, ow) = (2 * d, 2 * h, 2 * w);
    let mut y = Tensor::zeros([n, cout, od, oh, ow]);
    let mut tmp = vec![0.0; cout * p];
    for s in 0..n {
        let xs = View::row_major(x.sample(s), p);
        let ys = y.sample_mut(s);
        for o in 0..8 {
            let (a, b, c) = (o >> 2, (o >> 1) & 1, o & 1);
            // W_o^T: (cout x cin), element (co, ci) = w[ci, co, o]
            let wt = View { data: weight.data(), offset: o, rs: 8, cs: cout * 8 };
            gemm(cout, cin, p, wt, xs, 0.0, &mut tmp, 0, p, 1);
            for co in 0..cout {
                let bias_v = bias.data()[co];
                let src = &tmp[co * p..(co + 1) * p];
                let dst = &mut ys[co * od * oh * ow..(co + 1) * od * oh * ow];
                for z in 0..d {
                    for yy in 0..h {
                        let row = ((2 * z + a) * oh + 2 * yy + b) * ow + c;
                        let from = &src[(z * h + yy) * w..(z * h + yy + 1) * w];
                        for (xx, v) in from.iter().enumerate() {
                            dst[row + 2 * xx] = v + bias_v;
                        }
                    }
                }
            }
        }
    }
    Ok(y)
}

/// Strided 2x2x2 convolution with the same kernel layout: the adjoint of
/// [`convtranspose3d`] (without bias).
///
/// `out[ci, p] = sum_co sum_o w[ci, co, o] * z[co, 2p + o]`.
pub fn conv3d_stride2(z: &Tensor, weight: &Tensor) -> Result<Tensor> {
    let [n, cz, zd, zh, zw] = z.shape();
    let [cin, cout, ..] = weight.shape();
    check_kernel(weight, cin)?;
    if cz != cout {
        return Err(Error::Shape(format!("input has {cz} channels, kernel produces {cout}")));
    }
    if zd % 2 != 0 || zh % 2 != 0 || zw % 2 != 0 {
        return Err(Error::Shape(format!("strided conv needs even dims, got {zd}x{zh}x{zw}")));
    }
    let (d, h, w) = (zd / 2, zh / 2, zw / 2);
    let mut out = Tensor::zeros([n, cin, d, h, w]);
    let wd = weight.data();
    for s in 0..n {
        for ci in 0..cin {
            for co in 0..cout {
                let src = z.channel(s, co);
                let kern = &wd[(ci * cout + co) * 8..(ci * cout + co + 1) * 8];
                let dst = out.channel_mut(s, ci);
                for pz in 0..d {
                    for py in 0..h {
                        for px in 0..w {
                            let mut acc = 0.0;
                            for (o, k) in kern.iter().enumerate() {
                                let (a, b, c) = (o >> 2, (o >> 1) & 1, o & 1);
                                acc += k * src[((2 * pz + a) * zh + 2 * py + b) * zw + 2 * px + c];
                            }
                            dst[(pz * h + py) * w + px] += acc;
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct ConvTransposeGrads {
    pub grad_x: Tensor,
    pub grad_weight: Tensor,
    pub grad_bias: Tensor,
}

pub fn convtranspose3d_backward(grad_out: &Tensor, x: &Tensor, weight: &Tensor) -> Result<ConvTransposeGrads> {
    let [n, cin, d, h, w] = x.shape();
    let cout = check_kernel(weight, cin)?;
    let expect = [n, cout, 2 * d, 2 * h, 2 * w];
    if grad_out.shape() != expect {
        return Err(Error::Shape(format!("grad_out {:?} does not match output {expect:?}", grad_out.shape())));
    }
    let p = d * h * w;
    let (oh, ow) = (2 * h, 2 * w);
    let mut grad_x = Tensor::zeros(x.shape());
    let mut grad_w = vec![0.0; weight.len()];
    let mut grad_b = vec![0.0; cout];
    let mut gy_o = vec![0.0; cout * p];
    for s in 0..n {
        let gys = grad_out.sample(s);
        let out_plane = 8 * p;
        for (co, gb) in grad_b.iter_mut().enumerate() {
            *gb += gys[co * out_plane..(co + 1) * out_plane].iter().sum::<f64>();
        }
        let xs = View::row_major(x.sample(s), p);
        for o in 0..8 {
            let (a, b, c) = (o >> 2, (o >> 1) & 1, o & 1);
            for co in 0..cout {
                let src = &gys[co * out_plane..(co + 1) * out_plane];
                let dst = &mut gy_o[co * p..(co + 1) * p];
                for z in 0..d {
                    for yy in 0..h {
                        let row = ((2 * z + a) * oh + 2 * yy + b) * ow + c;
                        for xx in 0..w {
                            dst[(z * h + yy) * w + xx] = src[row + 2 * xx];
                        }
                    }
                }
            }
            let gy = View::row_major(&gy_o, p);
            // dX (cin x P) += W_o (cin x cout) * dY_o (cout x P)
            let w_o = View { data: weight.data(), offset: o, rs: cout * 8, cs: 8 };
            gemm(cin, cout, p, w_o, gy, 1.0, grad_x.sample_mut(s), 0, p, 1);
            // dW_o (cin x cout) += X (cin x P) * dY_o^T (P x cout)
            gemm(cin, p, cout, xs, gy.transposed(), 1.0, &mut grad_w, o, cout * 8, 8);
        }
    }
    Ok(ConvTransposeGrads {
        grad_x,
        grad_weight: Tensor::from_vec(weight.shape(), grad_w)?,
        grad_bias: Tensor::vector(grad_b),
    })
}
