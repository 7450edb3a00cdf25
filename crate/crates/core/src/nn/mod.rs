//! Layers, losses and the optimizer used by the autoencoder.

mod adam;
pub mod functional;
mod layers;
mod loss;

pub use adam::{AdamConfig, AdamState};
pub use functional::{l2_normalize_rows, BatchStats, NormStats};
pub use layers::{
    kaiming_uniform, BatchNorm2d, Conv2d, ConvTranspose2d, Linear, Mode, KERNEL, OUTPUT_PADDING, PADDING,
    STRIDE,
};
pub use loss::{mse_loss, triplet_loss, triplet_loss_value};
