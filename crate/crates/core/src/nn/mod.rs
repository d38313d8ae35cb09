//! Composite blocks: attention, transformer layers, residual convolutions.

pub mod attention;
pub mod layers;
pub mod resblock;
pub mod transformer;

pub use attention::{attend, cross_attention, mhsa, AttentionParams, CrossAttentionBlock};
pub use layers::{to_spatial, to_tokens, BatchNorm, Conv, Deconv, LayerNorm, Linear};
pub use resblock::ResBlockParams;
pub use transformer::{FfnParams, TransformerLayer};
