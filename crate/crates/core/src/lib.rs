//! Patch-based 3D u-net segmentation of CT volumes.
//!
//! The crate covers the full pipeline: NIfTI-1 I/O ([`nifti`]), side splitting
//! and normalization ([`preprocess`]), stochastic augmentation ([`augment`]),
//! patch planning and stitching ([`patching`]), a hand-written 3D u-net with
//! Dice loss and Adam ([`nn`]), restoration and largest-component filtering
//! ([`postprocess`]) and DSC / Hausdorff evaluation ([`metrics`]).

pub mod augment;
pub mod error;
pub mod metrics;
pub mod nifti;
pub mod nn;
pub mod patching;
pub mod phantom;
pub mod postprocess;
pub mod preprocess;
pub mod volume;

pub use error::{Error, Result};
pub use volume::{GeometryRecord, IntensityUnit, LabelMask, Shape3, Volume, VoxelType};
