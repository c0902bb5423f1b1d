//! File loading and ASCII PGM/PPM slice rendering.

use std::fmt::Write as _;
use std::path::Path;

use femseg::nifti::{self, NiftiImage};
use femseg::{LabelMask, Volume};

use crate::error::{CliResult, Context};

pub fn load_volume(path: &Path) -> CliResult<Volume> {
    nifti::read_file(path)
        .and_then(NiftiImage::into_volume)
        .ingest(format!("image {}", path.display()))
}

/// Reads a label file. Integer or float label volumes are accepted too, with
/// every nonzero voxel counted as foreground.
pub fn load_mask(path: &Path) -> CliResult<LabelMask> {
    let img = nifti::read_file(path).ingest(format!("mask {}", path.display()))?;
    match img {
        NiftiImage::Mask(m) => Ok(m),
        NiftiImage::Volume(v) => {
            let data = v.data().iter().map(|x| (*x != 0.0) as u8).collect();
            LabelMask::new(v.shape(), data, v.spacing(), v.origin()).ingest(format!("mask {}", path.display()))
        }
    }
}

pub fn write_mask(path: &Path, m: &LabelMask) -> CliResult<()> {
    nifti::write_file(path, &NiftiImage::Mask(m.clone())).process(format!("writing {}", path.display()))
}

/// One axial slice as 8-bit gray, intensities clamped to `[0, 1]`.
pub fn gray_slice(v: &Volume, z: usize) -> Vec<u8> {
    let s = v.shape();
    let n = s.h * s.w;
    v.data()[z * n..(z + 1) * n]
        .iter()
        .map(|x| (x.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect()
}

pub fn mask_slice(m: &LabelMask, z: usize) -> Vec<bool> {
    let s = m.shape();
    let n = s.h * s.w;
    m.data()[z * n..(z + 1) * n].iter().map(|x| *x == 1).collect()
}

/// In-slice boundary: foreground pixels with a background 4-neighbour or on the image edge.
pub fn contour(mask: &[bool], h: usize, w: usize) -> Vec<bool> {
    let at = |y: isize, x: isize| y >= 0 && x >= 0 && (y as usize) < h && (x as usize) < w && mask[y as usize * w + x as usize];
    (0..h * w)
        .map(|i| {
            let (y, x) = ((i / w) as isize, (i % w) as isize);
            mask[i] && !(at(y - 1, x) && at(y + 1, x) && at(y, x - 1) && at(y, x + 1))
        })
        .collect()
}

/// Slice with the most foreground voxels (the first on ties), or the middle one for an empty mask.
pub fn busiest_slice(m: &LabelMask) -> usize {
    let s = m.shape();
    let n = s.h * s.w;
    let counts: Vec<usize> = m.data().chunks(n).map(|c| c.iter().filter(|v| **v == 1).count()).collect();
    let max = counts.iter().copied().max().unwrap_or(0);
    if max == 0 {
        s.d / 2
    } else {
        counts.iter().position(|c| *c == max).expect("max exists")
    }
}

pub fn pgm(gray: &[u8], h: usize, w: usize) -> String {
    let mut out = format!("P2\n{w} {h}\n255\n");
    for row in gray.chunks(w) {
        let line: Vec<String> = row.iter().map(u8::to_string).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    out
}

/// Gray background with each `(pixels, rgb)` layer painted on top in order.
pub fn ppm(gray: &[u8], h: usize, w: usize, layers: &[(&[bool], [u8; 3])]) -> String {
    let mut out = format!("P3\n{w} {h}\n255\n");
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let mut px = [gray[i]; 3];
            for (mask, rgb) in layers {
                if mask[i] {
                    px = *rgb;
                }
            }
            let sep = if x + 1 == w { "\n" } else { " " };
            let _ = write!(out, "{} {} {}{sep}", px[0], px[1], px[2]);
        }
    }
    out
}
