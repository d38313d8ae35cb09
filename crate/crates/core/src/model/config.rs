use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Which stream supplies the queries in the feature injector.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InjectorVariant {
    /// ViT tokens query the detail features.
    #[default]
    VitAsQuery,
    /// Detail features query the ViT tokens; results are pooled to the ViT grid.
    DetailAsQuery,
}

/// Which feature extractors feed the decoder.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branches {
    /// ViT + detail-capture + injector.
    #[default]
    Full,
    /// Plain ViT only; the decoder starts from the 1/16 map.
    VitOnly,
    /// Detail-capture only; the decoder starts from the 1/8 map.
    DetailOnly,
}

pub const PATCH_SIZE: usize = 16;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub image_size: usize,
    pub patch_size: usize,
    pub vit_dim: usize,
    pub vit_layers: usize,
    pub vit_heads: usize,
    pub mlp_ratio: usize,
    /// Channels of the 1/2, 1/4, 1/8 detail features.
    pub detail_channels: [usize; 3],
    /// Residual blocks per detail stage.
    pub blocks_per_stage: usize,
    pub injector: InjectorVariant,
    pub branches: Branches,
    /// Difference-MLP widths, shallow to deep: 1/2, 1/4, 1/8, 1/16.
    pub decoder_channels: [usize; 4],
    pub threshold: f64,
    pub init_std: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::vit_t()
    }
}

impl ModelConfig {
    /// ViT-Tiny geometry at 256 px.
    pub fn vit_t() -> Self {
        ModelConfig {
            image_size: 256,
            patch_size: PATCH_SIZE,
            vit_dim: 192,
            vit_layers: 12,
            vit_heads: 3,
            mlp_ratio: 4,
            detail_channels: [64, 128, 256],
            blocks_per_stage: 2,
            injector: InjectorVariant::VitAsQuery,
            branches: Branches::Full,
            decoder_channels: [64, 64, 128, 256],
            threshold: 0.5,
            init_std: 0.02,
        }
    }

    /// ViT-Small geometry at 256 px.
    pub fn vit_s() -> Self {
        ModelConfig { vit_dim: 384, vit_heads: 6, ..Self::vit_t() }
    }

    /// Desk-scale preset: D=64, L=4, h=4, detail channels [16,32,64], 64 px.
    pub fn tiny() -> Self {
        ModelConfig {
            image_size: 64,
            vit_dim: 64,
            vit_layers: 4,
            vit_heads: 4,
            detail_channels: [16, 32, 64],
            decoder_channels: [16, 16, 32, 64],
            ..Self::vit_t()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "tiny" => Ok(Self::tiny()),
            "vit_t" | "vit-t" => Ok(Self::vit_t()),
            "vit_s" | "vit-s" => Ok(Self::vit_s()),
            other => Err(Error::Config(format!("unknown model preset {other:?}"))),
        }
    }

    pub fn tokens_per_side(&self) -> usize {
        self.image_size / self.patch_size
    }

    pub fn num_tokens(&self) -> usize {
        self.tokens_per_side() * self.tokens_per_side()
    }

    pub fn uses_vit(&self) -> bool {
        self.branches != Branches::DetailOnly
    }

    pub fn uses_detail(&self) -> bool {
        self.branches != Branches::VitOnly
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.patch_size != PATCH_SIZE {
            return bad(format!("patch size is fixed at {PATCH_SIZE}, got {}", self.patch_size));
        }
        if self.image_size == 0 || !self.image_size.is_multiple_of(PATCH_SIZE) {
            return bad(format!("image size {} is not a positive multiple of 16", self.image_size));
        }
        if self.vit_dim == 0 || self.vit_heads == 0 || !self.vit_dim.is_multiple_of(self.vit_heads) {
            return bad(format!("vit_dim {} not divisible by {} heads", self.vit_dim, self.vit_heads));
        }
        if self.mlp_ratio == 0 || self.blocks_per_stage == 0 {
            return bad("mlp_ratio and blocks_per_stage must be positive".into());
        }
        if self.detail_channels.contains(&0) || self.decoder_channels.contains(&0) {
            return bad("channel widths must be positive".into());
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return bad(format!("threshold {} outside (0,1)", self.threshold));
        }
        if !(self.init_std > 0.0) {
            return bad("init_std must be positive".into());
        }
        Ok(())
    }

    /// Stable 64-bit digest of the architecture, stored in checkpoints.
    /// The threshold and init scale do not change parameter layout and are left out.
    pub fn hash(&self) -> u64 {
        let mut value = serde_json::to_value(self).expect("config serializes");
        if let Some(map) = value.as_object_mut() {
            map.remove("threshold");
            map.remove("init_std");
        }
        let json = serde_json::to_vec(&value).expect("config serializes");
        let digest = Sha256::digest(&json);
        u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
    }
}
