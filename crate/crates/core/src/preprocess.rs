//! Turning raw CT scans into normalized, single-side network inputs.

use crate::error::{Error, Result};
use crate::volume::{GeometryRecord, IntensityUnit, LabelMask, Shape3, Volume};

/// A network-ready sub-volume with the record needed to put predictions back.
#[derive(Debug, Clone, PartialEq)]
pub struct PreprocessedCase {
    pub input: Volume,
    pub mask: Option<LabelMask>,
    pub geometry: GeometryRecord,
}

impl PreprocessedCase {
    /// Wraps a whole normalized scan without splitting.
    pub fn whole(input: Volume, mask: Option<LabelMask>) -> Result<Self> {
        ensure_normalized(&input)?;
        if let Some(m) = &mask {
            ensure_aligned(&input, m)?;
        }
        let geometry = GeometryRecord::identity(input.shape());
        Ok(Self { input, mask, geometry })
    }

    pub fn shape(&self) -> Shape3 {
        self.input.shape()
    }
}

fn ensure_normalized(v: &Volume) -> Result<()> {
    if v.unit() != IntensityUnit::Normalized {
        return Err(Error::Invalid("preprocessed inputs must be min-max normalized".into()));
    }
    Ok(())
}

fn ensure_aligned(v: &Volume, m: &LabelMask) -> Result<()> {
    if !m.is_aligned_with(v) {
        return Err(Error::Geometry(format!(
            "mask {} / {:?} does not match volume {} / {:?}",
            m.shape(),
            m.spacing(),
            v.shape(),
            v.spacing()
        )));
    }
    Ok(())
}

/// Per-volume min-max scaling to `[0, 1]`.
pub fn normalize_minmax(v: &Volume) -> Result<Volume> {
    let (lo, hi) = v.min_max();
    if hi <= lo {
        return Err(Error::Degenerate(format!("volume is constant ({lo}); min-max range is zero")));
    }
    let (lo, range) = (lo as f64, hi as f64 - lo as f64);
    let data = v
        .data()
        .iter()
        .map(|&x| (((x as f64 - lo) / range) as f32).clamp(0.0, 1.0))
        .collect();
    v.with_data(v.shape(), data, IntensityUnit::Normalized)
}

fn crop_x<T: Copy>(data: &[T], shape: Shape3, x0: usize, width: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(shape.d * shape.h * width);
    for row in data.chunks_exact(shape.w) {
        out.extend_from_slice(&row[x0..x0 + width]);
    }
    out
}

/// Cuts a normalized scan at `W/2` into `(right, left)` halves.
///
/// The right half is `x in [0, W/2)`, the left half `x in [W/2, W)`; neither is
/// mirrored here.
pub fn split_halves(v: &Volume, mask: Option<&LabelMask>) -> Result<(PreprocessedCase, PreprocessedCase)> {
    ensure_normalized(v)?;
    let shape = v.shape();
    if shape.w % 2 != 0 {
        return Err(Error::Geometry(format!("cannot split odd width {}", shape.w)));
    }
    if let Some(m) = mask {
        ensure_aligned(v, m)?;
    }
    let half = shape.w / 2;
    let half_shape = Shape3::new(shape.d, shape.h, half);
    let make = |x0: usize| -> Result<PreprocessedCase> {
        let input = v.with_data(half_shape, crop_x(v.data(), shape, x0, half), IntensityUnit::Normalized)?;
        let mask = mask.map(|m| m.with_data(half_shape, crop_x(m.data(), shape, x0, half))).transpose()?;
        Ok(PreprocessedCase {
            input,
            mask,
            geometry: GeometryRecord { original_shape: shape, crop_offset: [0, 0, x0], mirrored: false },
        })
    };
    Ok((make(0)?, make(half)?))
}

fn reverse_x<T: Copy>(data: &[T], w: usize) -> Vec<T> {
    data.chunks_exact(w).flat_map(|row| row.iter().rev().copied()).collect()
}

/// Reverses the x axis of input and mask and toggles the mirrored flag.
pub fn mirror_lr(c: &PreprocessedCase) -> PreprocessedCase {
    let shape = c.shape();
    let input = c
        .input
        .with_data(shape, reverse_x(c.input.data(), shape.w), c.input.unit())
        .expect("mirroring preserves validity");
    let mask = c
        .mask
        .as_ref()
        .map(|m| m.with_data(shape, reverse_x(m.data(), shape.w)).expect("mirroring preserves validity"));
    PreprocessedCase {
        input,
        mask,
        geometry: GeometryRecord { mirrored: !c.geometry.mirrored, ..c.geometry },
    }
}

/// Normalize, split and mirror the left half onto the right side.
///
/// Returns `[right, left_mirrored]`.
pub fn prepare_bilateral(v: &Volume, mask: Option<&LabelMask>) -> Result<[PreprocessedCase; 2]> {
    let norm = normalize_minmax(v)?;
    let (right, left) = split_halves(&norm, mask)?;
    Ok([right, mirror_lr(&left)])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn normalized(shape: Shape3, f: impl Fn(usize, usize, usize) -> f32) -> Volume {
        let mut data = Vec::new();
        for z in 0..shape.d {
            for y in 0..shape.h {
                for x in 0..shape.w {
                    data.push(f(z, y, x));
                }
            }
        }
        Volume::new(shape, data, [1.0; 3], [0.0; 3], IntensityUnit::Normalized).unwrap()
    }

    #[test]
    fn minmax_affine_map() {
        let v = Volume::new(Shape3::new(1, 1, 3), vec![-1000.0, 0.0, 1000.0], [1.0; 3], [0.0; 3], IntensityUnit::Hounsfield)
            .unwrap();
        let n = normalize_minmax(&v).unwrap();
        assert_eq!(n.data(), &[0.0, 0.5, 1.0]);
        assert_eq!(n.unit(), IntensityUnit::Normalized);
    }

    #[test]
    fn minmax_identity_on_unit_range() {
        let data = vec![0.0, 0.25, 1.0, 0.5];
        let v = Volume::new(Shape3::new(1, 2, 2), data.clone(), [1.0; 3], [0.0; 3], IntensityUnit::Hounsfield).unwrap();
        assert_eq!(normalize_minmax(&v).unwrap().data(), &data[..]);
    }

    #[test]
    fn minmax_constant_is_degenerate() {
        let v = Volume::new(Shape3::cube(2), vec![400.0; 8], [1.0; 3], [0.0; 3], IntensityUnit::Hounsfield).unwrap();
        assert!(matches!(normalize_minmax(&v), Err(Error::Degenerate(_))));
    }

    #[test]
    fn split_marker_lands_in_left_half() {
        let shape = Shape3::new(1, 2, 4);
        let v = normalized(shape, |_, y, x| (y == 1 && x == 3) as u8 as f32);
        let m = LabelMask::from_fn(shape, [1.0; 3], [0.0; 3], |_, y, x| y == 1 && x == 3).unwrap();
        let (right, left) = split_halves(&v, Some(&m)).unwrap();
        assert_eq!(right.shape(), Shape3::new(1, 2, 2));
        assert_eq!(right.mask.as_ref().unwrap().count_foreground(), 0);
        assert!(right.input.data().iter().all(|v| *v == 0.0));
        assert_eq!(left.input.get(0, 1, 1), 1.0);
        assert!(left.mask.as_ref().unwrap().get(0, 1, 1));
        assert_eq!(left.geometry.crop_offset, [0, 0, 2]);
    }

    #[test]
    fn split_512_wide() {
        let v = normalized(Shape3::new(1, 512, 512), |_, y, x| ((x + y) % 2) as f32);
        let (r, l) = split_halves(&v, None).unwrap();
        assert_eq!(r.shape(), Shape3::new(1, 512, 256));
        assert_eq!(l.shape(), Shape3::new(1, 512, 256));
        assert_eq!(l.geometry.original_shape, Shape3::new(1, 512, 512));
    }

    #[test]
    fn split_odd_width_fails() {
        let v = normalized(Shape3::new(1, 1, 3), |_, _, x| x as f32 / 2.0);
        assert!(matches!(split_halves(&v, None), Err(Error::Geometry(_))));
    }

    #[test]
    fn mirror_moves_voxel_and_toggles() {
        let shape = Shape3::new(1, 1, 4);
        let v = normalized(shape, |_, _, x| (x == 0) as u8 as f32);
        let m = LabelMask::from_fn(shape, [1.0; 3], [0.0; 3], |_, _, x| x == 0).unwrap();
        let c = PreprocessedCase::whole(v, Some(m)).unwrap();
        let mc = mirror_lr(&c);
        assert!(mc.geometry.mirrored);
        assert!(mc.mask.as_ref().unwrap().get(0, 0, 3));
        assert_eq!(mc.input.get(0, 0, 3), 1.0);
        assert_eq!(mirror_lr(&mc), c);
    }

    #[test]
    fn split_and_mirror_keep_foreground_count() {
        let shape = Shape3::new(3, 4, 6);
        let v = normalized(shape, |z, y, x| ((z * 7 + y * 3 + x) % 5) as f32 / 4.0);
        let m = LabelMask::from_fn(shape, [1.0; 3], [0.0; 3], |z, y, x| (z + 2 * y + 3 * x) % 4 == 0).unwrap();
        let (r, l) = split_halves(&v, Some(&m)).unwrap();
        let l = mirror_lr(&l);
        let total = r.mask.unwrap().count_foreground() + l.mask.unwrap().count_foreground();
        assert_eq!(total, m.count_foreground());
    }
}
