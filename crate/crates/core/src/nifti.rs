//! Reading and writing volumes in a strict NIfTI-1 single-file subset.
//!
//! Supported: little-endian `.nii` (magic `n+1\0`), `dim[0] = 3`, datatypes
//! uint8 / int16 / float32, axis-aligned orientation. Anything else is
//! rejected with a structured [`Error`] rather than a panic.

use std::path::Path;

use crate::error::{Error, Result};
use crate::volume::{IntensityUnit, LabelMask, Shape3, Volume, VoxelType};

pub const HEADER_SIZE: usize = 348;
/// Data offset used by the writer: header plus the 4-byte extension flag.
pub const DEFAULT_VOX_OFFSET: usize = 352;
const MAGIC: &[u8; 4] = b"n+1\0";
/// Marker written to `descrip` so normalized volumes survive a round trip.
const NORMALIZED_TAG: &[u8] = b"femseg:normalized";

/// Field byte offsets inside the 348-byte header.
pub mod offsets {
    pub const SIZEOF_HDR: usize = 0;
    pub const DIM: usize = 40;
    pub const DATATYPE: usize = 70;
    pub const BITPIX: usize = 72;
    pub const PIXDIM: usize = 76;
    pub const VOX_OFFSET: usize = 108;
    pub const SCL_SLOPE: usize = 112;
    pub const SCL_INTER: usize = 116;
    pub const XYZT_UNITS: usize = 123;
    pub const DESCRIP: usize = 148;
    pub const QFORM_CODE: usize = 252;
    pub const SFORM_CODE: usize = 254;
    pub const QUATERN_B: usize = 256;
    pub const QOFFSET_X: usize = 268;
    pub const SROW_X: usize = 280;
    pub const SROW_Y: usize = 296;
    pub const SROW_Z: usize = 312;
    pub const MAGIC: usize = 344;
}

/// A decoded NIfTI file: intensity volume or binary label mask.
#[derive(Debug, Clone, PartialEq)]
pub enum NiftiImage {
    Volume(Volume),
    Mask(LabelMask),
}

impl NiftiImage {
    pub fn shape(&self) -> Shape3 {
        match self {
            NiftiImage::Volume(v) => v.shape(),
            NiftiImage::Mask(m) => m.shape(),
        }
    }

    pub fn into_volume(self) -> Result<Volume> {
        match self {
            NiftiImage::Volume(v) => Ok(v),
            NiftiImage::Mask(_) => Err(Error::Invalid("expected an intensity volume, found a uint8 label mask".into())),
        }
    }

    pub fn into_mask(self) -> Result<LabelMask> {
        match self {
            NiftiImage::Mask(m) => Ok(m),
            NiftiImage::Volume(_) => Err(Error::Invalid("expected a uint8 label mask, found an intensity volume".into())),
        }
    }
}

impl From<Volume> for NiftiImage {
    fn from(v: Volume) -> Self {
        NiftiImage::Volume(v)
    }
}

impl From<LabelMask> for NiftiImage {
    fn from(m: LabelMask) -> Self {
        NiftiImage::Mask(m)
    }
}

fn i16_at(b: &[u8], off: usize) -> i16 {
    i16::from_le_bytes([b[off], b[off + 1]])
}

fn i32_at(b: &[u8], off: usize) -> i32 {
    i32::from_le_bytes(b[off..off + 4].try_into().unwrap())
}

fn f32_at(b: &[u8], off: usize) -> f32 {
    f32::from_le_bytes(b[off..off + 4].try_into().unwrap())
}

fn format_err(field: &'static str, reason: impl Into<String>) -> Error {
    Error::Format { field, reason: reason.into() }
}

/// Decodes a NIfTI-1 byte sequence.
pub fn read_volume(bytes: &[u8]) -> Result<NiftiImage> {
    if bytes.len() < HEADER_SIZE {
        return Err(Error::SizeMismatch { expected: HEADER_SIZE, actual: bytes.len() });
    }
    let h = &bytes[..HEADER_SIZE];

    let sizeof_hdr = i32_at(h, offsets::SIZEOF_HDR);
    if sizeof_hdr != HEADER_SIZE as i32 {
        let reason = if i32::from_be_bytes(h[0..4].try_into().unwrap()) == HEADER_SIZE as i32 {
            "header is big-endian; only little-endian files are supported".to_string()
        } else {
            format!("expected 348, found {sizeof_hdr}")
        };
        return Err(format_err("sizeof_hdr", reason));
    }
    if &h[offsets::MAGIC..offsets::MAGIC + 4] != MAGIC {
        return Err(format_err(
            "magic",
            format!("expected \"n+1\\0\", found {:?}", &h[offsets::MAGIC..offsets::MAGIC + 4]),
        ));
    }

    let dim: Vec<i16> = (0..8).map(|i| i16_at(h, offsets::DIM + 2 * i)).collect();
    if dim[0] != 3 {
        return Err(format_err("dim", format!("dim[0] must be 3, found {}", dim[0])));
    }
    if dim[1..4].iter().any(|d| *d < 1) {
        return Err(format_err("dim", format!("spatial dims must be positive, found {:?}", &dim[1..4])));
    }
    // NIfTI order is (i, j, k) = (x, y, z); grids here are (z, y, x).
    let shape = Shape3::new(dim[3] as usize, dim[2] as usize, dim[1] as usize);

    let code = i16_at(h, offsets::DATATYPE);
    let dtype = VoxelType::from_nifti_code(code).ok_or(Error::UnsupportedType(code))?;
    let bitpix = i16_at(h, offsets::BITPIX);
    if bitpix as usize != dtype.bytes() * 8 {
        return Err(format_err("bitpix", format!("expected {} for datatype {code}, found {bitpix}", dtype.bytes() * 8)));
    }

    let pixdim: Vec<f32> = (0..4).map(|i| f32_at(h, offsets::PIXDIM + 4 * i)).collect();
    if pixdim[1..4].iter().any(|p| !(p.is_finite() && *p > 0.0)) {
        return Err(format_err("pixdim", format!("voxel sizes must be positive, found {:?}", &pixdim[1..4])));
    }
    let spacing = [pixdim[3], pixdim[2], pixdim[1]];

    let vox_offset = f32_at(h, offsets::VOX_OFFSET);
    if !(vox_offset.is_finite() && vox_offset >= DEFAULT_VOX_OFFSET as f32 && vox_offset.fract() == 0.0)
        || vox_offset > bytes.len() as f32
    {
        return Err(format_err("vox_offset", format!("must be an integer >= 352 within the file, found {vox_offset}")));
    }
    let vox_offset = vox_offset as usize;

    let slope = f32_at(h, offsets::SCL_SLOPE);
    let inter = f32_at(h, offsets::SCL_INTER);
    let scaling = if slope != 0.0 && slope.is_finite() && !(slope == 1.0 && inter == 0.0) {
        if !inter.is_finite() {
            return Err(format_err("scl_inter", "intercept is not finite"));
        }
        Some((slope, inter))
    } else {
        None
    };

    let origin = read_origin(h)?;

    let expected = shape
        .d
        .checked_mul(shape.h)
        .and_then(|n| n.checked_mul(shape.w))
        .and_then(|n| n.checked_mul(dtype.bytes()))
        .ok_or_else(|| Error::Capacity("payload size overflows usize".into()))?;
    let payload = &bytes[vox_offset..];
    if payload.len() < expected {
        return Err(Error::SizeMismatch { expected, actual: payload.len() });
    }
    let payload = &payload[..expected];

    match dtype {
        VoxelType::UInt8 => {
            let data: Vec<u8> = match scaling {
                None => payload.to_vec(),
                Some((s, i)) => payload
                    .iter()
                    .map(|&v| {
                        let scaled = v as f32 * s + i;
                        if scaled == 0.0 || scaled == 1.0 {
                            Ok(scaled as u8)
                        } else {
                            Err(format_err("scl_slope", "scaled uint8 payload is not binary"))
                        }
                    })
                    .collect::<Result<_>>()?,
            };
            if let Some(v) = data.iter().find(|v| **v > 1) {
                return Err(Error::Invalid(format!("uint8 payload must be a binary mask, found value {v}")));
            }
            Ok(NiftiImage::Mask(LabelMask::new(shape, data, spacing, origin)?))
        }
        VoxelType::Int16 | VoxelType::Float32 => {
            let raw: Vec<f32> = if dtype == VoxelType::Int16 {
                payload.chunks_exact(2).map(|c| i16::from_le_bytes([c[0], c[1]]) as f32).collect()
            } else {
                payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect()
            };
            let data = match scaling {
                None => raw,
                Some((s, i)) => raw.into_iter().map(|v| v * s + i).collect(),
            };
            let descrip = &h[offsets::DESCRIP..offsets::DESCRIP + 80];
            let unit = if descrip.starts_with(NORMALIZED_TAG) {
                IntensityUnit::Normalized
            } else {
                IntensityUnit::Hounsfield
            };
            let storage = if dtype == VoxelType::Int16 && scaling.is_none() {
                VoxelType::Int16
            } else {
                VoxelType::Float32
            };
            let v = Volume::new(shape, data, spacing, origin, unit).map_err(|e| match e {
                Error::Invalid(msg) => format_err("data", msg),
                other => other,
            })?;
            Ok(NiftiImage::Volume(v.with_storage(storage)?))
        }
    }
}

/// World origin `(oz, oy, ox)` from the sform (preferred) or qform translation.
fn read_origin(h: &[u8]) -> Result<[f32; 3]> {
    let sform_code = i16_at(h, offsets::SFORM_CODE);
    let qform_code = i16_at(h, offsets::QFORM_CODE);
    let origin = if sform_code > 0 {
        let row = |off: usize| -> [f32; 4] { std::array::from_fn(|i| f32_at(h, off + 4 * i)) };
        let rows = [row(offsets::SROW_X), row(offsets::SROW_Y), row(offsets::SROW_Z)];
        for (r, row) in rows.iter().enumerate() {
            for (c, v) in row[..3].iter().enumerate() {
                if !v.is_finite() || (r != c && *v != 0.0) {
                    return Err(format_err("srow", "rotated or oblique sform is not supported"));
                }
            }
        }
        [rows[2][3], rows[1][3], rows[0][3]]
    } else if qform_code > 0 {
        let quat: [f32; 3] = std::array::from_fn(|i| f32_at(h, offsets::QUATERN_B + 4 * i));
        if quat.iter().any(|q| *q != 0.0) {
            return Err(format_err("quatern", "rotated qform is not supported"));
        }
        let off: [f32; 3] = std::array::from_fn(|i| f32_at(h, offsets::QOFFSET_X + 4 * i));
        [off[2], off[1], off[0]]
    } else {
        [0.0; 3]
    };
    if origin.iter().any(|o| !o.is_finite()) {
        return Err(format_err("srow", "origin is not finite"));
    }
    Ok(origin)
}

fn header(shape: Shape3, dtype: VoxelType, spacing: [f32; 3], origin: [f32; 3], normalized: bool) -> Result<Vec<u8>> {
    let dims = [shape.w, shape.h, shape.d];
    if let Some(d) = dims.iter().find(|d| **d > i16::MAX as usize) {
        return Err(Error::Capacity(format!("dimension {d} exceeds the NIfTI-1 limit of {}", i16::MAX)));
    }
    let mut h = vec![0u8; DEFAULT_VOX_OFFSET];
    let put_i16 = |h: &mut [u8], off: usize, v: i16| h[off..off + 2].copy_from_slice(&v.to_le_bytes());
    let put_f32 = |h: &mut [u8], off: usize, v: f32| h[off..off + 4].copy_from_slice(&v.to_le_bytes());

    h[0..4].copy_from_slice(&(HEADER_SIZE as i32).to_le_bytes());
    let dim = [3, dims[0] as i16, dims[1] as i16, dims[2] as i16, 1, 1, 1, 1];
    for (i, d) in dim.iter().enumerate() {
        put_i16(&mut h, offsets::DIM + 2 * i, *d);
    }
    put_i16(&mut h, offsets::DATATYPE, dtype.nifti_code());
    put_i16(&mut h, offsets::BITPIX, (dtype.bytes() * 8) as i16);
    let pixdim = [1.0, spacing[2], spacing[1], spacing[0], 0.0, 0.0, 0.0, 0.0];
    for (i, p) in pixdim.iter().enumerate() {
        put_f32(&mut h, offsets::PIXDIM + 4 * i, *p);
    }
    put_f32(&mut h, offsets::VOX_OFFSET, DEFAULT_VOX_OFFSET as f32);
    // slope 0 means "no scaling", which keeps the payload bit-exact.
    put_f32(&mut h, offsets::SCL_SLOPE, 0.0);
    put_f32(&mut h, offsets::SCL_INTER, 0.0);
    h[offsets::XYZT_UNITS] = 2; // mm
    if normalized {
        h[offsets::DESCRIP..offsets::DESCRIP + NORMALIZED_TAG.len()].copy_from_slice(NORMALIZED_TAG);
    }
    put_i16(&mut h, offsets::SFORM_CODE, 1);
    let srow = [
        [spacing[2], 0.0, 0.0, origin[2]],
        [0.0, spacing[1], 0.0, origin[1]],
        [0.0, 0.0, spacing[0], origin[0]],
    ];
    for (r, off) in [offsets::SROW_X, offsets::SROW_Y, offsets::SROW_Z].into_iter().enumerate() {
        for c in 0..4 {
            put_f32(&mut h, off + 4 * c, srow[r][c]);
        }
    }
    h[offsets::MAGIC..offsets::MAGIC + 4].copy_from_slice(MAGIC);
    Ok(h)
}

/// Encodes a volume or mask as a NIfTI-1 byte sequence.
pub fn write_volume(image: &NiftiImage) -> Result<Vec<u8>> {
    match image {
        NiftiImage::Mask(m) => {
            let mut out = header(m.shape(), VoxelType::UInt8, m.spacing(), m.origin(), false)?;
            out.extend_from_slice(m.data());
            Ok(out)
        }
        NiftiImage::Volume(v) => {
            let dtype = v.storage();
            let normalized = v.unit() == IntensityUnit::Normalized;
            let mut out = header(v.shape(), dtype, v.spacing(), v.origin(), normalized)?;
            out.reserve(v.data().len() * dtype.bytes());
            match dtype {
                VoxelType::Int16 => {
                    for &x in v.data() {
                        out.extend_from_slice(&(x as i16).to_le_bytes());
                    }
                }
                VoxelType::Float32 => {
                    for &x in v.data() {
                        out.extend_from_slice(&x.to_le_bytes());
                    }
                }
                VoxelType::UInt8 => unreachable!("volumes never carry uint8 storage"),
            }
            Ok(out)
        }
    }
}

pub fn read_file(path: impl AsRef<Path>) -> Result<NiftiImage> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    read_volume(&bytes)
}

pub fn write_file(path: impl AsRef<Path>, image: &NiftiImage) -> Result<()> {
    let path = path.as_ref();
    let bytes = write_volume(image)?;
    std::fs::write(path, bytes).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}
