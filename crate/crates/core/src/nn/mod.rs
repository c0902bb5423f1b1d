//! Hand-written 3D u-net: layers with explicit backward passes, Dice loss,
//! Adam, training loop, patch inference and checkpointing.

pub mod activation;
pub mod adam;
pub mod batchnorm;
pub mod checkpoint;
pub mod conv;
pub mod conv_transpose;
pub(crate) mod gemm;
pub mod loss;
pub mod pool;
pub mod predict;
pub mod tensor;
pub mod train;
pub mod unet;

#[cfg(test)]
mod testutil;

pub use tensor::Tensor;
pub use unet::{UNetConfig, UNetModel};
pub use adam::AdamConfig;
pub use predict::{predict_volume, ConstantPredictor, PatchPredictor};
pub use train::{train, EpochRecord, TrainConfig, TrainOutcome};
