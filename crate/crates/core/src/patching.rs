//! Random training crops and overlapping inference tiles.

use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::Tensor;
use crate::preprocess::PreprocessedCase;
use crate::volume::Shape3;

/// Tiling of a volume by fixed-size overlapping patches.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatchGrid {
    pub patch: [usize; 3],
    pub overlap: [usize; 3],
    /// Dims of the unpadded volume.
    pub dims: [usize; 3],
    pub padded_dims: [usize; 3],
    /// Zero voxels inserted before the volume on each axis.
    pub pad_before: [usize; 3],
    /// Patch corners in padded coordinates, z-major.
    pub origins: Vec<[usize; 3]>,
}

impl PatchGrid {
    pub fn stride(&self) -> [usize; 3] {
        [0, 1, 2].map(|a| self.patch[a] - self.overlap[a])
    }

    pub fn len(&self) -> usize {
        self.origins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.origins.is_empty()
    }
}

/// Padded extent and leading pad for one axis when it is shorter than the patch.
fn pad_axis(dim: usize, patch: usize) -> (usize, usize) {
    let padded = dim.max(patch);
    (padded, (padded - dim) / 2)
}

fn axis_origins(padded: usize, patch: usize, stride: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut o = 0;
    loop {
        out.push(o);
        if o + patch >= padded {
            break;
        }
        o = (o + stride).min(padded - patch);
    }
    out
}

pub fn plan_patches(dims: [usize; 3], patch: [usize; 3], overlap: [usize; 3]) -> Result<PatchGrid> {
    for a in 0..3 {
        if patch[a] <= overlap[a] {
            return Err(Error::Config(format!("patch {:?} must exceed overlap {:?} on every axis", patch, overlap)));
        }
        if dims[a] == 0 {
            return Err(Error::Shape(format!("cannot tile empty dims {dims:?}")));
        }
    }
    let mut padded_dims = [0; 3];
    let mut pad_before = [0; 3];
    let mut per_axis: Vec<Vec<usize>> = Vec::with_capacity(3);
    for a in 0..3 {
        let (p, b) = pad_axis(dims[a], patch[a]);
        padded_dims[a] = p;
        pad_before[a] = b;
        per_axis.push(axis_origins(p, patch[a], patch[a] - overlap[a]));
    }
    let mut origins = Vec::with_capacity(per_axis.iter().map(Vec::len).product());
    for &z in &per_axis[0] {
        for &y in &per_axis[1] {
            for &x in &per_axis[2] {
                origins.push([z, y, x]);
            }
        }
    }
    Ok(PatchGrid { patch, overlap, dims, padded_dims, pad_before, origins })
}

/// Copies a patch out of a volume viewed through symmetric zero padding.
///
/// `origin` is in padded coordinates; voxels falling into the padding read 0.
pub fn extract_patch<T: Copy + Into<f64>>(
    data: &[T],
    dims: [usize; 3],
    pad_before: [usize; 3],
    origin: [usize; 3],
    patch: [usize; 3],
) -> Vec<f64> {
    let mut out = vec![0.0; patch.iter().product()];
    let src = |a: usize, i: usize| (origin[a] + i).checked_sub(pad_before[a]).filter(|v| *v < dims[a]);
    for pz in 0..patch[0] {
        let Some(z) = src(0, pz) else { continue };
        for py in 0..patch[1] {
            let Some(y) = src(1, py) else { continue };
            let row = (pz * patch[1] + py) * patch[2];
            for px in 0..patch[2] {
                if let Some(x) = src(2, px) {
                    out[row + px] = data[(z * dims[1] + y) * dims[2] + x].into();
                }
            }
        }
    }
    out
}

/// Uniformly random valid patch corner (padded coordinates) on each axis.
pub fn sample_crop_origin<R: Rng + ?Sized>(dims: [usize; 3], patch: [usize; 3], rng: &mut R) -> [usize; 3] {
    [0, 1, 2].map(|a| {
        let (padded, _) = pad_axis(dims[a], patch[a]);
        rng.random_range(0..=padded - patch[a])
    })
}

/// Random crop of image and one-hot target, each with batch dimension 1.
///
/// The input tensor is `(1, 1, P)`, the target `(1, 2, P)` with channel 1 the
/// foreground.
pub fn random_crop<R: Rng + ?Sized>(case: &PreprocessedCase, patch: [usize; 3], rng: &mut R) -> Result<(Tensor, Tensor)> {
    let mask = case
        .mask
        .as_ref()
        .ok_or_else(|| Error::Invalid("training crop requires a ground-truth mask".into()))?;
    let dims = case.shape().to_array();
    let origin = sample_crop_origin(dims, patch, rng);
    crop_at(case, mask.data(), dims, patch, origin)
}

fn crop_at(case: &PreprocessedCase, mask: &[u8], dims: [usize; 3], patch: [usize; 3], origin: [usize; 3]) -> Result<(Tensor, Tensor)> {
    let pad = [0, 1, 2].map(|a| pad_axis(dims[a], patch[a]).1);
    let x = extract_patch(case.input.data(), dims, pad, origin, patch);
    let fg = extract_patch(mask, dims, pad, origin, patch);
    let mut target = fg.iter().map(|v| 1.0 - v).collect::<Vec<_>>();
    target.extend_from_slice(&fg);
    let [d, h, w] = patch;
    Ok((Tensor::from_vec([1, 1, d, h, w], x)?, Tensor::from_vec([1, 2, d, h, w], target)?))
}

/// Per-voxel class probabilities over the unpadded volume.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityMap {
    pub shape: Shape3,
    pub background: Vec<f64>,
    pub foreground: Vec<f64>,
}

impl ProbabilityMap {
    /// Foreground where the foreground probability is strictly above `0.5`.
    pub fn threshold(&self) -> Vec<u8> {
        self.foreground.iter().map(|p| (*p > 0.5) as u8).collect()
    }
}

/// Accumulates per-patch probabilities into running sums and coverage counts.
#[derive(Debug, Clone)]
pub struct Stitcher {
    grid: PatchGrid,
    sums: [Vec<f64>; 2],
    counts: Vec<u32>,
    added: usize,
}

impl Stitcher {
    pub fn new(grid: PatchGrid) -> Self {
        let n: usize = grid.padded_dims.iter().product();
        Self { grid, sums: [vec![0.0; n], vec![0.0; n]], counts: vec![0; n], added: 0 }
    }

    /// Adds a `(1, 2, P)` probability patch for origin `index`.
    pub fn add(&mut self, index: usize, probs: &Tensor) -> Result<()> {
        let origin = *self
            .grid
            .origins
            .get(index)
            .ok_or(Error::Arity { expected: self.grid.len(), actual: index + 1 })?;
        let [pd, ph, pw] = self.grid.patch;
        if probs.shape() != [1, 2, pd, ph, pw] {
            return Err(Error::Shape(format!("patch probabilities {:?} do not match patch {:?}", probs.shape(), self.grid.patch)));
        }
        let [_, gh, gw] = self.grid.padded_dims;
        for c in 0..2 {
            let src = probs.channel(0, c);
            let sum = &mut self.sums[c];
            for z in 0..pd {
                for y in 0..ph {
                    let dst = ((origin[0] + z) * gh + origin[1] + y) * gw + origin[2];
                    let from = (z * ph + y) * pw;
                    for x in 0..pw {
                        sum[dst + x] += src[from + x];
                    }
                }
            }
        }
        for z in 0..pd {
            for y in 0..ph {
                let dst = ((origin[0] + z) * gh + origin[1] + y) * gw + origin[2];
                self.counts[dst..dst + pw].iter_mut().for_each(|c| *c += 1);
            }
        }
        self.added += 1;
        Ok(())
    }

    /// Mean over covering patches, cropped back to the unpadded dims.
    pub fn finish(self) -> Result<ProbabilityMap> {
        if self.added != self.grid.len() {
            return Err(Error::Arity { expected: self.grid.len(), actual: self.added });
        }
        let [d, h, w] = self.grid.dims;
        let [_, gh, gw] = self.grid.padded_dims;
        let [bz, by, bx] = self.grid.pad_before;
        let mut out = [Vec::with_capacity(d * h * w), Vec::with_capacity(d * h * w)];
        for z in 0..d {
            for y in 0..h {
                for x in 0..w {
                    let i = ((z + bz) * gh + y + by) * gw + x + bx;
                    let n = self.counts[i] as f64;
                    out[0].push(self.sums[0][i] / n);
                    out[1].push(self.sums[1][i] / n);
                }
            }
        }
        let [background, foreground] = out;
        Ok(ProbabilityMap { shape: Shape3::new(d, h, w), background, foreground })
    }
}

/// Fuses one probability patch per grid origin by voxelwise mean.
pub fn stitch(grid: &PatchGrid, patch_probs: &[Tensor]) -> Result<ProbabilityMap> {
    if patch_probs.len() != grid.len() {
        return Err(Error::Arity { expected: grid.len(), actual: patch_probs.len() });
    }
    let mut s = Stitcher::new(grid.clone());
    for (i, p) in patch_probs.iter().enumerate() {
        s.add(i, p)?;
    }
    s.finish()
}
