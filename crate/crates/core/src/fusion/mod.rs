//! Attention-based fusion operators and the two-stream network assembled from them.

mod cbam;
mod fam;
mod net;
mod ppm;
mod stage;
mod train;
mod weights;

pub use cbam::{
    cbam, cbam_backward, cbam_forward, channel_attention, channel_attention_backward,
    channel_attention_forward, spatial_attention, spatial_attention_backward,
    spatial_attention_forward, CbamCache, CbamParams, ChannelAttentionCache, SpatialAttentionCache,
};
pub use fam::{fam_backward, fam_effective_rates, fam_forward, fam_forward_cached, FamCache, FamParams, FAM_RATES};
pub use net::{adfnet_forward, adfnet_init, AdfNetToy, ConvBlock, ForwardCache, NetConfig, LEVELS};
pub use ppm::{ppm_backward, ppm_branch_size, ppm_forward, ppm_forward_cached, PpmCache, PpmParams, PPM_BINS};
pub use stage::{fuse_stage, fuse_stage_backward, fuse_stage_forward, FuseCache, FuseGrads};
pub use train::{apply_gradients, clipped_step, loss_and_grads, train_step};
pub use weights::{load_weights, read_weights, save_weights, write_weights, WEIGHTS_MAGIC, WEIGHTS_VERSION};
