//! Volumetric grid types shared by every stage of the pipeline.
//!
//! All grids are stored in `(z, y, x)` order with `x` varying fastest, which
//! is the payload order of a NIfTI file. Axial slices are constant-`z` planes.

use crate::error::{Error, Result};

/// Extent of a 3D grid as `(depth, height, width)` = `(z, y, x)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Shape3 {
    pub d: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape3 {
    pub const fn new(d: usize, h: usize, w: usize) -> Self {
        Self { d, h, w }
    }

    pub const fn cube(n: usize) -> Self {
        Self { d: n, h: n, w: n }
    }

    pub fn from_array(a: [usize; 3]) -> Self {
        Self::new(a[0], a[1], a[2])
    }

    pub const fn to_array(self) -> [usize; 3] {
        [self.d, self.h, self.w]
    }

    pub const fn len(self) -> usize {
        self.d * self.h * self.w
    }

    pub const fn is_empty(self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub const fn index(self, z: usize, y: usize, x: usize) -> usize {
        (z * self.h + y) * self.w + x
    }

    #[inline]
    pub const fn coords(self, i: usize) -> [usize; 3] {
        let x = i % self.w;
        let y = (i / self.w) % self.h;
        let z = i / (self.w * self.h);
        [z, y, x]
    }

    /// Index of a signed coordinate, or `None` when it falls outside the grid.
    #[inline]
    pub fn checked_index(self, z: isize, y: isize, x: isize) -> Option<usize> {
        if z < 0 || y < 0 || x < 0 {
            return None;
        }
        let (z, y, x) = (z as usize, y as usize, x as usize);
        (z < self.d && y < self.h && x < self.w).then(|| self.index(z, y, x))
    }
}

impl std::fmt::Display for Shape3 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}", self.d, self.h, self.w)
    }
}

/// Physical meaning of volume intensities.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IntensityUnit {
    /// Raw CT values in Hounsfield units (or any unnormalized scale).
    Hounsfield,
    /// Min-max normalized to `[0, 1]`.
    Normalized,
}

/// On-disk element type of a volume.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VoxelType {
    UInt8,
    Int16,
    Float32,
}

impl VoxelType {
    pub const fn nifti_code(self) -> i16 {
        match self {
            VoxelType::UInt8 => 2,
            VoxelType::Int16 => 4,
            VoxelType::Float32 => 16,
        }
    }

    pub const fn from_nifti_code(code: i16) -> Option<Self> {
        match code {
            2 => Some(VoxelType::UInt8),
            4 => Some(VoxelType::Int16),
            16 => Some(VoxelType::Float32),
            _ => None,
        }
    }

    pub const fn bytes(self) -> usize {
        match self {
            VoxelType::UInt8 => 1,
            VoxelType::Int16 => 2,
            VoxelType::Float32 => 4,
        }
    }
}

fn check_geometry(shape: Shape3, len: usize, spacing: [f32; 3], origin: [f32; 3]) -> Result<()> {
    if shape.d == 0 || shape.h == 0 || shape.w == 0 {
        return Err(Error::Shape(format!("dims must be positive, got {shape}")));
    }
    if len != shape.len() {
        return Err(Error::SizeMismatch { expected: shape.len(), actual: len });
    }
    if spacing.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
        return Err(Error::Invalid(format!("spacing must be positive and finite, got {spacing:?}")));
    }
    if origin.iter().any(|o| !o.is_finite()) {
        return Err(Error::Invalid(format!("origin must be finite, got {origin:?}")));
    }
    Ok(())
}

/// A scalar CT volume with voxel spacing (mm, `(sz, sy, sx)`) and world origin (mm, `(oz, oy, ox)`).
///
/// Immutable after construction; every constructor validates the invariants.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    shape: Shape3,
    spacing: [f32; 3],
    origin: [f32; 3],
    unit: IntensityUnit,
    storage: VoxelType,
    data: Vec<f32>,
}

impl Volume {
    pub fn new(
        shape: Shape3,
        data: Vec<f32>,
        spacing: [f32; 3],
        origin: [f32; 3],
        unit: IntensityUnit,
    ) -> Result<Self> {
        check_geometry(shape, data.len(), spacing, origin)?;
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invalid("volume contains non-finite values".into()));
        }
        if unit == IntensityUnit::Normalized && data.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Invalid("normalized volume has values outside [0, 1]".into()));
        }
        Ok(Self { shape, spacing, origin, unit, storage: VoxelType::Float32, data })
    }

    /// Sets the element type used when the volume is written to disk.
    ///
    /// `Int16` requires every value to be an integer in the `i16` range.
    pub fn with_storage(mut self, storage: VoxelType) -> Result<Self> {
        match storage {
            VoxelType::Float32 => {}
            VoxelType::Int16 => {
                if let Some(v) = self
                    .data
                    .iter()
                    .find(|v| v.fract() != 0.0 || **v < i16::MIN as f32 || **v > i16::MAX as f32)
                {
                    return Err(Error::Capacity(format!("value {v} is not representable as int16")));
                }
            }
            VoxelType::UInt8 => {
                return Err(Error::Invalid("uint8 storage is reserved for label masks".into()))
            }
        }
        self.storage = storage;
        Ok(self)
    }

    pub fn shape(&self) -> Shape3 {
        self.shape
    }

    pub fn spacing(&self) -> [f32; 3] {
        self.spacing
    }

    pub fn origin(&self) -> [f32; 3] {
        self.origin
    }

    pub fn unit(&self) -> IntensityUnit {
        self.unit
    }

    pub fn storage(&self) -> VoxelType {
        self.storage
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn get(&self, z: usize, y: usize, x: usize) -> f32 {
        self.data[self.shape.index(z, y, x)]
    }

    /// New volume sharing this one's spacing and origin.
    pub fn with_data(&self, shape: Shape3, data: Vec<f32>, unit: IntensityUnit) -> Result<Self> {
        Volume::new(shape, data, self.spacing, self.origin, unit)
    }

    pub fn min_max(&self) -> (f32, f32) {
        self.data
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }
}

/// A binary segmentation aligned to a [`Volume`]; foreground is `1`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelMask {
    shape: Shape3,
    spacing: [f32; 3],
    origin: [f32; 3],
    data: Vec<u8>,
}

impl LabelMask {
    pub fn new(shape: Shape3, data: Vec<u8>, spacing: [f32; 3], origin: [f32; 3]) -> Result<Self> {
        check_geometry(shape, data.len(), spacing, origin)?;
        if let Some(v) = data.iter().find(|v| **v > 1) {
            return Err(Error::Invalid(format!("label mask value {v} is not binary")));
        }
        Ok(Self { shape, spacing, origin, data })
    }

    pub fn zeros(shape: Shape3, spacing: [f32; 3], origin: [f32; 3]) -> Result<Self> {
        Self::new(shape, vec![0; shape.len()], spacing, origin)
    }

    /// Builds a mask from a predicate over `(z, y, x)`.
    pub fn from_fn(
        shape: Shape3,
        spacing: [f32; 3],
        origin: [f32; 3],
        mut f: impl FnMut(usize, usize, usize) -> bool,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(shape.len());
        for z in 0..shape.d {
            for y in 0..shape.h {
                for x in 0..shape.w {
                    data.push(f(z, y, x) as u8);
                }
            }
        }
        Self::new(shape, data, spacing, origin)
    }

    pub fn shape(&self) -> Shape3 {
        self.shape
    }

    pub fn spacing(&self) -> [f32; 3] {
        self.spacing
    }

    pub fn origin(&self) -> [f32; 3] {
        self.origin
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn into_data(self) -> Vec<u8> {
        self.data
    }

    #[inline]
    pub fn get(&self, z: usize, y: usize, x: usize) -> bool {
        self.data[self.shape.index(z, y, x)] != 0
    }

    pub fn count_foreground(&self) -> usize {
        self.data.iter().filter(|v| **v != 0).count()
    }

    /// New mask sharing this one's spacing and origin.
    pub fn with_data(&self, shape: Shape3, data: Vec<u8>) -> Result<Self> {
        LabelMask::new(shape, data, self.spacing, self.origin)
    }

    /// True when dims and spacing agree with `v`.
    pub fn is_aligned_with(&self, v: &Volume) -> bool {
        self.shape == v.shape && self.spacing == v.spacing
    }
}

/// Where a processed sub-volume came from inside the original scan.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GeometryRecord {
    pub original_shape: Shape3,
    /// Voxel offset `(z, y, x)` of the processed grid inside the original.
    pub crop_offset: [usize; 3],
    /// Whether the processed grid is x-reversed relative to the original.
    pub mirrored: bool,
}

impl GeometryRecord {
    pub fn identity(shape: Shape3) -> Self {
        Self { original_shape: shape, crop_offset: [0; 3], mirrored: false }
    }

    /// Checks that a processed grid of `shape` fits inside the original.
    pub fn validate(&self, shape: Shape3) -> Result<()> {
        let o = self.original_shape.to_array();
        let s = shape.to_array();
        for axis in 0..3 {
            if self.crop_offset[axis] + s[axis] > o[axis] {
                return Err(Error::Geometry(format!(
                    "processed grid {shape} at offset {:?} exceeds original {}",
                    self.crop_offset, self.original_shape
                )));
            }
        }
        Ok(())
    }

    /// Maps a voxel coordinate of the processed grid (of `shape`) to the original scan.
    pub fn to_original(&self, shape: Shape3, [z, y, x]: [usize; 3]) -> [usize; 3] {
        let x = if self.mirrored { shape.w - 1 - x } else { x };
        [z + self.crop_offset[0], y + self.crop_offset[1], x + self.crop_offset[2]]
    }
}
