//! Stride-1 3D convolution (cross-correlation) with zero padding.
//!
//! Implemented as im2col + GEMM over slabs of output z-slices so the column
//! buffer stays bounded for large patches.

use super::gemm::{gemm, View};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Upper bound on column-buffer elements per slab (1 MiB of f64, cache sized).
const COL_BUDGET: usize = if cfg!(test) { 1 << 14 } else { 1 << 17 };

#[derive(Debug, Clone, Copy)]
struct Geom {
    cin: usize,
    cout: usize,
    k: usize,
    pad: usize,
    inp: [usize; 3],
    out: [usize; 3],
}

impl Geom {
    fn rows(&self) -> usize {
        self.cin * self.k * self.k * self.k
    }

    fn out_len(&self) -> usize {
        self.out.iter().product()
    }

    fn plane(&self) -> usize {
        self.out[1] * self.out[2]
    }

    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.pad == 0
    }

    /// Output z-slabs `[z0, z1)` sized to the column budget.
    fn slabs(&self) -> impl Iterator<Item = (usize, usize)> {
        let per_slice = (self.rows() * self.plane()).max(1);
        let step = (COL_BUDGET / per_slice).max(1);
        let d = self.out[0];
        (0..d).step_by(step).map(move |z0| (z0, (z0 + step).min(d)))
    }
}

fn geometry(x: &Tensor, weight: &Tensor, padding: usize) -> Result<Geom> {
    let [cout, cin, kd, kh, kw] = weight.shape();
    if kd != kh || kh != kw {
        return Err(Error::Shape(format!("kernel must be cubic, got {kd}x{kh}x{kw}")));
    }
    if x.channels() != cin {
        return Err(Error::Shape(format!("input has {} channels, kernel expects {cin}", x.channels())));
    }
    let inp = x.spatial();
    let mut out = [0; 3];
    for a in 0..3 {
        let padded = inp[a] + 2 * padding;
        if padded < kd {
            return Err(Error::Shape(format!("kernel {kd} larger than padded input {padded}")));
        }
        out[a] = padded - kd + 1;
    }
    Ok(Geom { cin, cout, k: kd, pad: padding, inp, out })
}

/// Fills `cols` (rows x P) for output slices `[z0, z1)` of one sample.
fn im2col(x: &[f64], g: &Geom, z0: usize, z1: usize, cols: &mut [f64]) {
    let [d, h, w] = g.inp;
    let [_, ho, wo] = g.out;
    let p = (z1 - z0) * ho * wo;
    let (k, pad) = (g.k, g.pad as isize);
    let mut row = 0;
    for ci in 0..g.cin {
        let src = &x[ci * d * h * w..(ci + 1) * d * h * w];
        for kz in 0..k {
            for ky in 0..k {
                for kx in 0..k {
                    let dst = &mut cols[row * p..(row + 1) * p];
                    row += 1;
                    let shift = kx as isize - pad;
                    // valid output x range where 0 <= x + shift < w
                    let xa = (-shift).clamp(0, wo as isize) as usize;
                    let xb = (w as isize - shift).clamp(0, wo as isize) as usize;
                    for (zi, z) in (z0..z1).enumerate() {
                        let iz = z as isize + kz as isize - pad;
                        for y in 0..ho {
                            let out = &mut dst[(zi * ho + y) * wo..(zi * ho + y + 1) * wo];
                            let iy = y as isize + ky as isize - pad;
                            if iz < 0 || iz >= d as isize || iy < 0 || iy >= h as isize || xa >= xb {
                                out.fill(0.0);
                                continue;
                            }
                            let base = (iz as usize * h + iy as usize) * w;
                            out[..xa].fill(0.0);
                            let s0 = (base as isize + xa as isize + shift) as usize;
                            out[xa..xb].copy_from_slice(&src[s0..s0 + (xb - xa)]);
                            out[xb..].fill(0.0);
                        }
                    }
                }
            }
        }
    }
}

/// Scatter-adds `cols` back into the input gradient; adjoint of [`im2col`].
fn col2im(cols: &[f64], g: &Geom, z0: usize, z1: usize, gx: &mut [f64]) {
    let [d, h, w] = g.inp;
    let [_, ho, wo] = g.out;
    let p = (z1 - z0) * ho * wo;
    let (k, pad) = (g.k, g.pad as isize);
    let mut row = 0;
    for ci in 0..g.cin {
        let dst = &mut gx[ci * d * h * w..(ci + 1) * d * h * w];
        for kz in 0..k {
            for ky in 0..k {
                for kx in 0..k {
                    let src = &cols[row * p..(row + 1) * p];
                    row += 1;
                    let shift = kx as isize - pad;
                    let xa = (-shift).clamp(0, wo as isize) as usize;
                    let xb = (w as isize - shift).clamp(0, wo as isize) as usize;
                    if xa >= xb {
                        continue;
                    }
                    for (zi, z) in (z0..z1).enumerate() {
                        let iz = z as isize + kz as isize - pad;
                        if iz < 0 || iz >= d as isize {
                            continue;
                        }
                        for y in 0..ho {
                            let iy = y as isize + ky as isize - pad;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let base = (iz as usize * h + iy as usize) * w;
                            let s0 = (base as isize + xa as isize + shift) as usize;
                            let from = &src[(zi * ho + y) * wo + xa..(zi * ho + y) * wo + xb];
                            for (t, f) in dst[s0..s0 + (xb - xa)].iter_mut().zip(from) {
                                *t += f;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// `y = conv(x, weight) + bias` with stride 1 and symmetric zero padding.
///
/// `weight` is `(C_out, C_in, k, k, k)`, `bias` is `(C_out, 1, 1, 1, 1)`.
pub fn conv3d_forward(x: &Tensor, weight: &Tensor, bias: &Tensor, padding: usize) -> Result<Tensor> {
    let g = geometry(x, weight, padding)?;
    if bias.len() != g.cout {
        return Err(Error::Shape(format!("bias has {} entries, expected {}", bias.len(), g.cout)));
    }
    let n = x.batch();
    let (rows, out_len) = (g.rows(), g.out_len());
    let mut y = Tensor::zeros([n, g.cout, g.out[0], g.out[1], g.out[2]]);
    let wmat = View::row_major(weight.data(), rows);
    let mut cols = Vec::new();
    for s in 0..n {
        let xs = x.sample(s);
        let ys = y.sample_mut(s);
        for (co, b) in bias.data().iter().enumerate() {
            ys[co * out_len..(co + 1) * out_len].fill(*b);
        }
        if g.is_pointwise() {
            gemm(g.cout, rows, out_len, wmat, View::row_major(xs, out_len), 1.0, ys, 0, out_len, 1);
            continue;
        }
        for (z0, z1) in g.slabs() {
            let p = (z1 - z0) * g.plane();
            cols.resize(rows * p, 0.0);
            im2col(xs, &g, z0, z1, &mut cols);
            gemm(g.cout, rows, p, wmat, View::row_major(&cols, p), 1.0, ys, z0 * g.plane(), out_len, 1);
        }
    }
    Ok(y)
}

/// Gradients of [`conv3d_forward`] with respect to input, kernel and bias.
#[derive(Debug, Clone)]
pub struct ConvGrads {
    pub grad_x: Tensor,
    pub grad_weight: Tensor,
    pub grad_bias: Tensor,
}

pub fn conv3d_backward(grad_out: &Tensor, x: &Tensor, weight: &Tensor, padding: usize) -> Result<ConvGrads> {
    let g = geometry(x, weight, padding)?;
    let expect = [x.batch(), g.cout, g.out[0], g.out[1], g.out[2]];
    if grad_out.shape() != expect {
        return Err(Error::Shape(format!("grad_out {:?} does not match output {expect:?}", grad_out.shape())));
    }
    let (rows, out_len) = (g.rows(), g.out_len());
    let mut grad_x = Tensor::zeros(x.shape());
    let mut grad_w = vec![0.0; weight.len()];
    let mut grad_b = vec![0.0; g.cout];
    let wmat = View::row_major(weight.data(), rows);
    let mut cols = Vec::new();
    let mut gcols = Vec::new();
    for s in 0..x.batch() {
        let xs = x.sample(s);
        let gys = grad_out.sample(s);
        for (co, gb) in grad_b.iter_mut().enumerate() {
            *gb += gys[co * out_len..(co + 1) * out_len].iter().sum::<f64>();
        }
        let gxs = grad_x.sample_mut(s);
        if g.is_pointwise() {
            let gy = View::row_major(gys, out_len);
            gemm(g.cout, out_len, rows, gy, View::row_major(xs, out_len).transposed(), 1.0, &mut grad_w, 0, rows, 1);
            gemm(rows, g.cout, out_len, wmat.transposed(), gy, 1.0, gxs, 0, out_len, 1);
            continue;
        }
        for (z0, z1) in g.slabs() {
            let p = (z1 - z0) * g.plane();
            cols.resize(rows * p, 0.0);
            im2col(xs, &g, z0, z1, &mut cols);
            let gy = View { data: gys, offset: z0 * g.plane(), rs: out_len, cs: 1 };
            // dW (Cout x rows) += dY (Cout x P) * cols^T (P x rows)
            gemm(g.cout, p, rows, gy, View::row_major(&cols, p).transposed(), 1.0, &mut grad_w, 0, rows, 1);
            // dcols (rows x P) = W^T (rows x Cout) * dY (Cout x P)
            gcols.resize(rows * p, 0.0);
            gemm(rows, g.cout, p, wmat.transposed(), gy, 0.0, &mut gcols, 0, p, 1);
            col2im(&gcols, &g, z0, z1, gxs);
        }
    }
    Ok(ConvGrads {
        grad_x,
        grad_weight: Tensor::from_vec(weight.shape(), grad_w)?,
        grad_bias: Tensor::vector(grad_b),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::testutil::{numeric_grad, random_tensor, rel_error};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Direct nested-loop convolution used as an oracle.
    fn naive(x: &Tensor, w: &Tensor, b: &Tensor, pad: usize) -> Tensor {
        let [n, cin, d, h, wd] = x.shape();
        let [cout, _, k, _, _] = w.shape();
        let out = [d + 2 * pad - k + 1, h + 2 * pad - k + 1, wd + 2 * pad - k + 1];
        let mut y = Tensor::zeros([n, cout, out[0], out[1], out[2]]);
        let xi = |s: usize, c: usize, z: isize, yy: isize, xx: isize| -> f64 {
            if z < 0 || yy < 0 || xx < 0 || z >= d as isize || yy >= h as isize || xx >= wd as isize {
                0.0
            } else {
                x.data()[(((s * cin + c) * d + z as usize) * h + yy as usize) * wd + xx as usize]
            }
        };
        for s in 0..n {
            for co in 0..cout {
                for z in 0..out[0] {
                    for yy in 0..out[1] {
                        for xx in 0..out[2] {
                            let mut acc = b.data()[co];
                            for ci in 0..cin {
                                for a in 0..k {
                                    for bb in 0..k {
                                        for c in 0..k {
                                            let wv = w.data()[(((co * cin + ci) * k + a) * k + bb) * k + c];
                                            acc += wv
                                                * xi(
                                                    s,
                                                    ci,
                                                    (z + a) as isize - pad as isize,
                                                    (yy + bb) as isize - pad as isize,
                                                    (xx + c) as isize - pad as isize,
                                                );
                                        }
                                    }
                                }
                            }
                            let idx = (((s * cout + co) * out[0] + z) * out[1] + yy) * out[2] + xx;
                            y.data_mut()[idx] = acc;
                        }
                    }
                }
            }
        }
        y
    }

    #[test]
    fn delta_kernel_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = random_tensor([1, 1, 4, 5, 3], &mut rng);
        let mut w = Tensor::zeros([1, 1, 3, 3, 3]);
        w.data_mut()[13] = 1.0;
        let y = conv3d_forward(&x, &w, &Tensor::vector(vec![0.0]), 1).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn ones_kernel_on_impulse_gives_block() {
        let mut x = Tensor::zeros([1, 1, 5, 5, 5]);
        x.data_mut()[2 * 25 + 2 * 5 + 2] = 1.0;
        let w = Tensor::full([1, 1, 3, 3, 3], 1.0);
        let y = conv3d_forward(&x, &w, &Tensor::vector(vec![0.0]), 1).unwrap();
        for z in 0..5 {
            for yy in 0..5 {
                for xx in 0..5 {
                    let inside = (1..=3).contains(&z) && (1..=3).contains(&yy) && (1..=3).contains(&xx);
                    assert_eq!(y.data()[z * 25 + yy * 5 + xx], inside as u8 as f64);
                }
            }
        }
    }

    #[test]
    fn matches_naive_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for (shape, cout, k, pad) in [([2, 3, 4, 5, 6], 2, 3, 1), ([1, 2, 3, 3, 3], 4, 1, 0), ([1, 1, 5, 4, 6], 3, 3, 0)] {
            let x = random_tensor(shape, &mut rng);
            let w = random_tensor([cout, shape[1], k, k, k], &mut rng);
            let b = random_tensor([cout, 1, 1, 1, 1], &mut rng);
            let got = conv3d_forward(&x, &w, &b, pad).unwrap();
            let want = naive(&x, &w, &b, pad);
            assert_eq!(got.shape(), want.shape());
            assert!(rel_error(got.data(), want.data()) < 1e-12);
        }
    }

    #[test]
    fn pointwise_reduces_channels() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random_tensor([1, 32, 2, 2, 2], &mut rng);
        let w = random_tensor([2, 32, 1, 1, 1], &mut rng);
        let y = conv3d_forward(&x, &w, &Tensor::vector(vec![0.0; 2]), 0).unwrap();
        assert_eq!(y.shape(), [1, 2, 2, 2, 2]);
    }

    #[test]
    fn channel_mismatch_is_shape_error() {
        let x = Tensor::zeros([1, 2, 3, 3, 3]);
        let w = Tensor::zeros([1, 3, 3, 3, 3]);
        assert!(matches!(conv3d_forward(&x, &w, &Tensor::vector(vec![0.0]), 1), Err(Error::Shape(_))));
    }

    #[test]
    fn zero_upstream_gives_zero_grads() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random_tensor([1, 2, 3, 3, 3], &mut rng);
        let w = random_tensor([2, 2, 3, 3, 3], &mut rng);
        let g = conv3d_backward(&Tensor::zeros([1, 2, 3, 3, 3]), &x, &w, 1).unwrap();
        assert!(g.grad_x.data().iter().chain(g.grad_weight.data()).chain(g.grad_bias.data()).all(|v| *v == 0.0));
    }

    #[test]
    fn bias_grad_is_channel_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = random_tensor([2, 1, 3, 3, 3], &mut rng);
        let w = random_tensor([3, 1, 3, 3, 3], &mut rng);
        let gy = random_tensor([2, 3, 3, 3, 3], &mut rng);
        let g = conv3d_backward(&gy, &x, &w, 1).unwrap();
        for co in 0..3 {
            let want: f64 = (0..2).map(|n| gy.channel(n, co).iter().sum::<f64>()).sum();
            assert!((g.grad_bias.data()[co] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random_tensor([1, 1, 4, 4, 4], &mut rng);
        let w = random_tensor([2, 1, 3, 3, 3], &mut rng);
        let b = random_tensor([2, 1, 1, 1, 1], &mut rng);
        let r = random_tensor([1, 2, 4, 4, 4], &mut rng);
        let g = conv3d_backward(&r, &x, &w, 1).unwrap();
        let nx = numeric_grad(&x, |xp| conv3d_forward(xp, &w, &b, 1).unwrap().dot(&r));
        let nw = numeric_grad(&w, |wp| conv3d_forward(&x, wp, &b, 1).unwrap().dot(&r));
        let nb = numeric_grad(&b, |bp| conv3d_forward(&x, &w, bp, 1).unwrap().dot(&r));
        assert!(rel_error(g.grad_x.data(), &nx) < 1e-3);
        assert!(rel_error(g.grad_weight.data(), &nw) < 1e-3);
        assert!(rel_error(g.grad_bias.data(), &nb) < 1e-3);
    }

    #[test]
    fn slabbing_does_not_change_results() {
        // large enough that the column buffer is split into several slabs
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = random_tensor([1, 8, 24, 24, 24], &mut rng);
        let w = random_tensor([2, 8, 3, 3, 3], &mut rng);
        let b = Tensor::vector(vec![0.1, -0.2]);
        let g = geometry(&x, &w, 1).unwrap();
        assert!(g.slabs().count() > 1);
        let y = conv3d_forward(&x, &w, &b, 1).unwrap();
        let want = naive(&x, &w, &b, 1);
        assert!(rel_error(y.data(), want.data()) < 1e-12);
    }
}
