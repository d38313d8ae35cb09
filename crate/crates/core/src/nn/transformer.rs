use cvit_tensor::{Element, Var};

use crate::error::Result;
use crate::nn::attention::{mhsa, AttentionParams};
use crate::nn::layers::{LayerNorm, Linear};
use crate::params::{Bound, ParamBuilder};

/// Two-layer GELU MLP with inner width `ratio * dim`.
#[derive(Clone, Debug)]
pub struct FfnParams {
    pub fc1: Linear,
    pub fc2: Linear,
    pub ratio: usize,
}

impl FfnParams {
    pub fn new<T: Element>(b: &mut ParamBuilder<T>, name: &str, dim: usize, ratio: usize, std: f64) -> Self {
        FfnParams {
            fc1: Linear::new(b, &format!("{name}.fc1"), dim, ratio * dim, std),
            fc2: Linear::new(b, &format!("{name}.fc2"), ratio * dim, dim, std),
            ratio,
        }
    }

    pub fn forward<'g, T: Element>(&self, x: Var<'g, T>, ps: &Bound<'g, T>) -> Result<Var<'g, T>> {
        self.fc2.forward(self.fc1.forward(x, ps)?.gelu()?, ps)
    }
}

/// Pre-norm transformer layer:
/// `x' = x + MHSA(LN(x))`, `out = x' + FFN(LN(x'))`.
#[derive(Clone, Debug)]
pub struct TransformerLayer {
    pub norm1: LayerNorm,
    pub attn: AttentionParams,
    pub norm2: LayerNorm,
    pub ffn: FfnParams,
}

impl TransformerLayer {
    pub fn new<T: Element>(
        b: &mut ParamBuilder<T>,
        name: &str,
        dim: usize,
        heads: usize,
        ratio: usize,
        std: f64,
    ) -> Result<Self> {
        Ok(TransformerLayer {
            norm1: LayerNorm::new(b, &format!("{name}.norm1"), dim),
            attn: AttentionParams::new(b, &format!("{name}.attn"), dim, heads, std)?,
            norm2: LayerNorm::new(b, &format!("{name}.norm2"), dim),
            ffn: FfnParams::new(b, &format!("{name}.ffn"), dim, ratio, std),
        })
    }

    pub fn forward<'g, T: Element>(&self, x: Var<'g, T>, ps: &Bound<'g, T>) -> Result<Var<'g, T>> {
        let x = x.add(mhsa(self.norm1.forward(x, ps)?, &self.attn, ps)?)?;
        Ok(x.add(self.ffn.forward(self.norm2.forward(x, ps)?, ps)?)?)
    }
}
