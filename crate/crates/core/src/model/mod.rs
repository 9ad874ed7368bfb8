//! MRes-UNET and the plain UNET baseline.
//!
//! Both are built from the same [`NetworkConfig`]; the MRes-UNET uses
//! residual blocks (1x1 convolution on the identity path) and merges skip
//! connections by addition, the baseline uses plain double-conv blocks and
//! concatenation.

mod check;
mod io;
mod layers;
mod network;

pub use check::{check_network_gradients, NetworkCheck};
pub use io::{load_weights, save_weights, WeightEntry, WeightFile, WEIGHTS_MAGIC, WEIGHTS_VERSION};
pub(crate) use io::with_path;
pub use layers::{BatchNorm2d, BlockCache, Conv2d, ConvBlock, TransposedConv2d, Upsample};
pub use network::{BlockKind, ForwardCache, Network, NetworkConfig, SkipMode, UpsampleMode};

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Scalar;

/// Residual blocks with addition skips.
pub fn build_mres_unet<T: Scalar>(config: &NetworkConfig, rng: &mut Rng) -> Result<Network<T>> {
    if config.skip_mode != SkipMode::Addition || config.block != BlockKind::Residual {
        return Err(Error::Config(format!("not an MRes-UNET configuration: {config}")));
    }
    Network::build(config, rng)
}

/// Plain blocks with concatenation skips.
pub fn build_unet_baseline<T: Scalar>(config: &NetworkConfig, rng: &mut Rng) -> Result<Network<T>> {
    if config.skip_mode != SkipMode::Concatenation || config.block != BlockKind::Plain {
        return Err(Error::Config(format!("not a UNET baseline configuration: {config}")));
    }
    Network::build(config, rng)
}
