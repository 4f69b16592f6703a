//! Minimal convolutional network engine for the scan-specific self-consistency network:
//! bias-free 2D convolutions, ReLU, MSE loss, exact backpropagation and Adam.

pub mod adam;
pub mod conv;
pub mod io;
pub mod net;
mod train;

pub use adam::AdamState;
pub use net::{
    backprop, mse_with_grad, self_consistency_layers, Activation, ForwardCache, LayerSpec,
    NetParams, SelfMasking, TapMask, Wants,
};
pub use train::{train_self_consistency, TrainConfig, TrainOutcome};

use crate::error::Result;

/// Fresh self-consistency network for `nc` coils (`2nc` real channels in and out).
pub fn net_init(nc: usize, seed: u64, masking: SelfMasking) -> Result<NetParams> {
    if nc == 0 {
        return Err(crate::error::ReconError::Config("need at least one coil".into()));
    }
    NetParams::init(self_consistency_layers(nc, masking), seed)
}

#[cfg(test)]
mod tests;
