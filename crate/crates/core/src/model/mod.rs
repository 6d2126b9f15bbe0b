//! The zero-token vision transformer and its ablation variants.

pub mod config;
pub mod forward;
pub mod params;

pub use config::{ModelConfig, Pooling};
pub use forward::{
    adaptive_residual, attention_block, embed, forward, forward_patches, patchify, pool, predict_logits,
    LAYER_NORM_EPS,
};
pub use params::{count_params, format_breakdown, ModelParams, ParamComponent, Params};
