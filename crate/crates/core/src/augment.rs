//! On-the-fly stochastic augmentation of `(volume, mask)` pairs.
//!
//! Four transforms (brightness, rotation, scaling, elastic deformation) each
//! fire independently with `apply_probability`. Spatial transforms resample
//! through an inverse map: images trilinearly, masks by nearest neighbour,
//! with samples outside the grid reading 0.

use rand::Rng;

use crate::error::{Error, Result};
use crate::preprocess::PreprocessedCase;
use crate::volume::{IntensityUnit, LabelMask, Shape3, Volume};

/// Parameter ranges for [`augment_pair`]. Defaults follow the published ranges.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentConfig {
    /// Multiplicative intensity factor.
    pub brightness_range: (f64, f64),
    /// Rotation about each of the X, Y and Z axes, degrees.
    pub rotation_range_deg: (f64, f64),
    /// Isotropic scale factor.
    pub scaling_range: (f64, f64),
    /// Elastic deformation intensity.
    pub elastic_alpha_range: (f64, f64),
    /// Elastic displacement smoothing (Gaussian sigma, voxels).
    pub elastic_sigma_range: (f64, f64),
    pub apply_probability: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            brightness_range: (0.75, 1.25),
            rotation_range_deg: (-3.0, 3.0),
            scaling_range: (0.95, 1.05),
            elastic_alpha_range: (0.0, 100.0),
            elastic_sigma_range: (9.0, 13.0),
            apply_probability: 0.35,
        }
    }
}

impl AugmentConfig {
    /// Every transform disabled.
    pub fn disabled() -> Self {
        Self { apply_probability: 0.0, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let ranges = [
            ("brightness_range", self.brightness_range),
            ("rotation_range_deg", self.rotation_range_deg),
            ("scaling_range", self.scaling_range),
            ("elastic_alpha_range", self.elastic_alpha_range),
            ("elastic_sigma_range", self.elastic_sigma_range),
        ];
        for (name, (lo, hi)) in ranges {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(Error::Config(format!("{name}: lower bound must not exceed upper bound ({lo}, {hi})")));
            }
        }
        if !(0.0..=1.0).contains(&self.apply_probability) {
            return Err(Error::Config(format!("apply_probability {} outside [0, 1]", self.apply_probability)));
        }
        if self.brightness_range.0 < 0.0 || self.scaling_range.0 <= 0.0 {
            return Err(Error::Config("brightness and scaling factors must be positive".into()));
        }
        if self.elastic_alpha_range.0 < 0.0 || self.elastic_sigma_range.0 <= 0.0 {
            return Err(Error::Config("elastic alpha must be >= 0 and sigma > 0".into()));
        }
        Ok(())
    }
}

/// Per-voxel displacement `(dz, dy, dx)` in voxel units.
#[derive(Debug, Clone, PartialEq)]
pub struct DisplacementField {
    pub shape: Shape3,
    pub dz: Vec<f32>,
    pub dy: Vec<f32>,
    pub dx: Vec<f32>,
}

impl DisplacementField {
    pub fn zeros(shape: Shape3) -> Self {
        let n = shape.len();
        Self { shape, dz: vec![0.0; n], dy: vec![0.0; n], dx: vec![0.0; n] }
    }

    pub fn max_magnitude(&self) -> f64 {
        (0..self.shape.len())
            .map(|i| {
                let (a, b, c) = (self.dz[i] as f64, self.dy[i] as f64, self.dx[i] as f64);
                (a * a + b * b + c * c).sqrt()
            })
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Interpolation {
    Trilinear,
    Nearest,
}

/// Samples `data` at a fractional `(z, y, x)`; out-of-grid neighbours read 0.
#[inline]
pub fn sample(data: &[f32], shape: Shape3, [z, y, x]: [f64; 3], interp: Interpolation) -> f32 {
    match interp {
        Interpolation::Nearest => {
            let (zi, yi, xi) = (z.round(), y.round(), x.round());
            if !(zi.is_finite() && yi.is_finite() && xi.is_finite()) {
                return 0.0;
            }
            shape
                .checked_index(zi as isize, yi as isize, xi as isize)
                .map_or(0.0, |i| data[i])
        }
        Interpolation::Trilinear => {
            let (z0, y0, x0) = (z.floor(), y.floor(), x.floor());
            if !(z0.is_finite() && y0.is_finite() && x0.is_finite()) {
                return 0.0;
            }
            let (fz, fy, fx) = (z - z0, y - y0, x - x0);
            let (z0, y0, x0) = (z0 as isize, y0 as isize, x0 as isize);
            let mut acc = 0.0f64;
            for (dz, wz) in [(0, 1.0 - fz), (1, fz)] {
                if wz == 0.0 {
                    continue;
                }
                for (dy, wy) in [(0, 1.0 - fy), (1, fy)] {
                    if wy == 0.0 {
                        continue;
                    }
                    for (dx, wx) in [(0, 1.0 - fx), (1, fx)] {
                        if wx == 0.0 {
                            continue;
                        }
                        if let Some(i) = shape.checked_index(z0 + dz, y0 + dy, x0 + dx) {
                            acc += wz * wy * wx * data[i] as f64;
                        }
                    }
                }
            }
            acc as f32
        }
    }
}

/// Resamples a grid: output voxel `p` reads the input at `source(p)`.
pub fn resample(
    data: &[f32],
    shape: Shape3,
    interp: Interpolation,
    mut source: impl FnMut(usize, usize, usize) -> [f64; 3],
) -> Vec<f32> {
    let mut out = Vec::with_capacity(shape.len());
    for z in 0..shape.d {
        for y in 0..shape.h {
            for x in 0..shape.w {
                out.push(sample(data, shape, source(z, y, x), interp));
            }
        }
    }
    out
}

fn warp_pair(
    v: &Volume,
    m: Option<&LabelMask>,
    source: impl Fn(usize, usize, usize) -> [f64; 3],
) -> Result<(Volume, Option<LabelMask>)> {
    let shape = v.shape();
    let mut img = resample(v.data(), shape, Interpolation::Trilinear, &source);
    if v.unit() == IntensityUnit::Normalized {
        img.iter_mut().for_each(|x| *x = x.clamp(0.0, 1.0));
    }
    let out_v = v.with_data(shape, img, v.unit())?;
    let out_m = match m {
        None => None,
        Some(m) => {
            let as_f32: Vec<f32> = m.data().iter().map(|&b| b as f32).collect();
            let warped = resample(&as_f32, shape, Interpolation::Nearest, &source);
            Some(m.with_data(shape, warped.into_iter().map(|x| (x >= 0.5) as u8).collect())?)
        }
    };
    Ok((out_v, out_m))
}

/// Multiplies every voxel by `factor` and clamps to `[0, 1]`.
pub fn apply_brightness(v: &Volume, factor: f64) -> Result<Volume> {
    let data = v
        .data()
        .iter()
        .map(|&x| ((x as f64 * factor) as f32).clamp(0.0, 1.0))
        .collect();
    v.with_data(v.shape(), data, IntensityUnit::Normalized)
}

type Mat3 = [[f64; 3]; 3];

fn matmul(a: &Mat3, b: &Mat3) -> Mat3 {
    std::array::from_fn(|i| std::array::from_fn(|j| (0..3).map(|k| a[i][k] * b[k][j]).sum()))
}

/// Rotation `Rz * Ry * Rx` acting on `(x, y, z)` column vectors.
pub fn rotation_matrix([rx, ry, rz]: [f64; 3]) -> Mat3 {
    let (sx, cx) = rx.to_radians().sin_cos();
    let (sy, cy) = ry.to_radians().sin_cos();
    let (sz, cz) = rz.to_radians().sin_cos();
    let mx = [[1.0, 0.0, 0.0], [0.0, cx, -sx], [0.0, sx, cx]];
    let my = [[cy, 0.0, sy], [0.0, 1.0, 0.0], [-sy, 0.0, cy]];
    let mz = [[cz, -sz, 0.0], [sz, cz, 0.0], [0.0, 0.0, 1.0]];
    matmul(&mz, &matmul(&my, &mx))
}

fn affine_source(shape: Shape3, rot_deg: [f64; 3], scale: f64) -> impl Fn(usize, usize, usize) -> [f64; 3] {
    let r = rotation_matrix(rot_deg);
    let c = [
        (shape.w as f64 - 1.0) / 2.0,
        (shape.h as f64 - 1.0) / 2.0,
        (shape.d as f64 - 1.0) / 2.0,
    ];
    move |z, y, x| {
        // inverse of q = c + scale * R (p - c) is p = c + R^T (q - c) / scale
        let q = [x as f64 - c[0], y as f64 - c[1], z as f64 - c[2]];
        let p: [f64; 3] = std::array::from_fn(|i| (r[0][i] * q[0] + r[1][i] * q[1] + r[2][i] * q[2]) / scale + c[i]);
        [p[2], p[1], p[0]]
    }
}

fn affine_opt(v: &Volume, m: Option<&LabelMask>, rot_deg: [f64; 3], scale: f64) -> Result<(Volume, Option<LabelMask>)> {
    if rot_deg == [0.0; 3] && scale == 1.0 {
        return Ok((v.clone(), m.cloned()));
    }
    warp_pair(v, m, affine_source(v.shape(), rot_deg, scale))
}

/// Rotates (degrees about X, Y, Z) then scales about the grid centre.
pub fn apply_affine(v: &Volume, m: &LabelMask, rot_deg: [f64; 3], scale: f64) -> Result<(Volume, LabelMask)> {
    check_pair(v, m)?;
    let (v, m) = affine_opt(v, Some(m), rot_deg, scale)?;
    Ok((v, m.expect("mask present")))
}

fn check_pair(v: &Volume, m: &LabelMask) -> Result<()> {
    if v.shape() != m.shape() {
        return Err(Error::Shape(format!("volume {} and mask {} differ", v.shape(), m.shape())));
    }
    Ok(())
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as isize;
    let k: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i as f64).powi(2) / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    k.into_iter().map(|v| v / sum).collect()
}

/// Separable Gaussian smoothing truncated at `3 sigma`, zero outside the grid.
pub fn gaussian_smooth(data: &[f64], shape: Shape3, sigma: f64) -> Vec<f64> {
    let kernel = gaussian_kernel(sigma);
    let radius = (kernel.len() / 2) as isize;
    let mut cur = data.to_vec();
    let mut line = Vec::new();
    let mut out_line = Vec::new();
    // (length along axis, stride, number of lines, start of each line)
    let dims = [shape.d, shape.h, shape.w];
    let strides = [shape.h * shape.w, shape.w, 1];
    for axis in 0..3 {
        let n = dims[axis];
        let stride = strides[axis];
        let starts: Vec<usize> = (0..shape.len()).filter(|i| (i / stride) % n == 0).collect();
        for start in starts {
            line.clear();
            line.extend((0..n).map(|k| cur[start + k * stride]));
            out_line.clear();
            out_line.extend((0..n as isize).map(|i| {
                let lo = (i - radius).max(0);
                let hi = (i + radius).min(n as isize - 1);
                (lo..=hi).map(|j| line[j as usize] * kernel[(j - i + radius) as usize]).sum::<f64>()
            }));
            for (k, v) in out_line.iter().enumerate() {
                cur[start + k * stride] = *v;
            }
        }
    }
    cur
}

/// `alpha * smooth(U(-1, 1), sigma)` independently per axis.
pub fn elastic_field<R: Rng + ?Sized>(shape: Shape3, alpha: f64, sigma: f64, rng: &mut R) -> DisplacementField {
    let mut comp = || -> Vec<f32> {
        let noise: Vec<f64> = (0..shape.len()).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
        gaussian_smooth(&noise, shape, sigma).into_iter().map(|v| (alpha * v) as f32).collect()
    };
    let dz = comp();
    let dy = comp();
    let dx = comp();
    DisplacementField { shape, dz, dy, dx }
}

/// Inverse-warps a pair through a displacement field.
pub fn apply_displacement(v: &Volume, m: Option<&LabelMask>, field: &DisplacementField) -> Result<(Volume, Option<LabelMask>)> {
    let shape = v.shape();
    if field.shape != shape {
        return Err(Error::Shape(format!("field {} does not match grid {}", field.shape, shape)));
    }
    warp_pair(v, m, |z, y, x| {
        let i = shape.index(z, y, x);
        [z as f64 + field.dz[i] as f64, y as f64 + field.dy[i] as f64, x as f64 + field.dx[i] as f64]
    })
}

fn elastic_opt<R: Rng + ?Sized>(
    v: &Volume,
    m: Option<&LabelMask>,
    alpha: f64,
    sigma: f64,
    rng: &mut R,
) -> Result<(Volume, Option<LabelMask>)> {
    let field = elastic_field(v.shape(), alpha, sigma, rng);
    if alpha == 0.0 {
        return Ok((v.clone(), m.cloned()));
    }
    apply_displacement(v, m, &field)
}

/// Random smooth elastic warp; deterministic for a given generator state.
pub fn elastic_deform<R: Rng + ?Sized>(
    v: &Volume,
    m: &LabelMask,
    alpha: f64,
    sigma: f64,
    rng: &mut R,
) -> Result<(Volume, LabelMask)> {
    check_pair(v, m)?;
    let (v, m) = elastic_opt(v, Some(m), alpha, sigma, rng)?;
    Ok((v, m.expect("mask present")))
}

/// Which transforms fired in one [`augment_pair`] call.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct AugmentTrace {
    pub brightness: bool,
    pub rotation: bool,
    pub scaling: bool,
    pub elastic: bool,
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

/// Random augmentation in the fixed order affine, elastic, brightness.
pub fn augment_pair<R: Rng + ?Sized>(case: &PreprocessedCase, cfg: &AugmentConfig, rng: &mut R) -> Result<PreprocessedCase> {
    augment_pair_traced(case, cfg, rng).map(|(c, _)| c)
}

pub fn augment_pair_traced<R: Rng + ?Sized>(
    case: &PreprocessedCase,
    cfg: &AugmentConfig,
    rng: &mut R,
) -> Result<(PreprocessedCase, AugmentTrace)> {
    cfg.validate()?;
    let p = cfg.apply_probability;
    let trace = AugmentTrace {
        brightness: rng.random_bool(p),
        rotation: rng.random_bool(p),
        scaling: rng.random_bool(p),
        elastic: rng.random_bool(p),
    };
    let mut v = case.input.clone();
    let mut m = case.mask.clone();

    if trace.rotation || trace.scaling {
        let rot = if trace.rotation {
            std::array::from_fn(|_| uniform(rng, cfg.rotation_range_deg))
        } else {
            [0.0; 3]
        };
        let scale = if trace.scaling { uniform(rng, cfg.scaling_range) } else { 1.0 };
        (v, m) = affine_opt(&v, m.as_ref(), rot, scale)?;
    }
    if trace.elastic {
        let alpha = uniform(rng, cfg.elastic_alpha_range);
        let sigma = uniform(rng, cfg.elastic_sigma_range);
        (v, m) = elastic_opt(&v, m.as_ref(), alpha, sigma, rng)?;
    }
    if trace.brightness {
        let f = uniform(rng, cfg.brightness_range);
        if f != 1.0 {
            v = apply_brightness(&v, f)?;
        }
    }
    Ok((PreprocessedCase { input: v, mask: m, geometry: case.geometry }, trace))
}
