//! The learned blocks of one unrolled iteration: an image UNet, a
//! patch-wise low-rank layer and a k-space CNN.

mod knet;
mod lowrank;
mod unet;

pub use knet::{knet_backward, knet_forward, KNetCache, KNetConfig, KNetParams};
pub use lowrank::{
    lowrank_backward, lowrank_forward, patch_merge, patch_split, svt, svt_backward, LowRankCache, LowRankParams,
    PatchLayout, PatchSpec, SvtCache, SvtMode, SURROGATE_WIDTH, TAU_INIT,
};
pub use unet::{unet_backward, unet_forward, BlockCache, ConvBlock, UNetCache, UNetConfig, UNetParams};
