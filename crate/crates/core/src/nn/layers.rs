//! Thin parameter bundles for the primitive layers.

use cvit_tensor::{Element, Var};

use crate::error::Result;
use crate::params::{Bound, ParamBuilder, ParamId};

#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn new<T: Element>(b: &mut ParamBuilder<T>, name: &str, input: usize, output: usize, std: f64) -> Self {
        Linear {
            weight: b.trunc_normal(format!("{name}.weight"), &[input, output], std),
            bias: b.zeros(format!("{name}.bias"), &[output]),
        }
    }

    pub fn forward<'g, T: Element>(&self, x: Var<'g, T>, ps: &Bound<'g, T>) -> Result<Var<'g, T>> {
        Ok(x.linear(ps[self.weight], Some(ps[self.bias]))?)
    }
}

/// 2-D convolution; `bias` is omitted for convolutions followed by a norm.
#[derive(Clone, Debug)]
pub struct Conv {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub stride: usize,
    pub pad: usize,
}

impl Conv {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Element>(
        b: &mut ParamBuilder<T>,
        name: &str,
        input: usize,
        output: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        bias: bool,
        std: f64,
    ) -> Self {
        Conv {
            weight: b.trunc_normal(format!("{name}.weight"), &[output, input, kernel, kernel], std),
            bias: bias.then(|| b.zeros(format!("{name}.bias"), &[output])),
            stride,
            pad,
        }
    }

    pub fn forward<'g, T: Element>(&self, x: Var<'g, T>, ps: &Bound<'g, T>) -> Result<Var<'g, T>> {
        Ok(x.conv2d(ps[self.weight], self.bias.map(|b| ps[b]), self.stride, self.pad)?)
    }
}

/// 4x4 stride-2 transposed convolution: exact 2x spatial upsampling.
#[derive(Clone, Debug)]
pub struct Deconv {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Deconv {
    pub fn new<T: Element>(b: &mut ParamBuilder<T>, name: &str, input: usize, output: usize, std: f64) -> Self {
        Deconv {
            weight: b.trunc_normal(format!("{name}.weight"), &[input, output, 4, 4], std),
            bias: b.zeros(format!("{name}.bias"), &[output]),
        }
    }

    pub fn forward<'g, T: Element>(&self, x: Var<'g, T>, ps: &Bound<'g, T>) -> Result<Var<'g, T>> {
        Ok(x.conv_transpose2d(ps[self.weight], Some(ps[self.bias]), 2, 1)?)
    }
}

pub const LN_EPS: f64 = 1e-6;
pub const BN_EPS: f64 = 1e-5;

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new<T: Element>(b: &mut ParamBuilder<T>, name: &str, dim: usize) -> Self {
        LayerNorm { gamma: b.ones(format!("{name}.gamma"), &[dim]), beta: b.zeros(format!("{name}.beta"), &[dim]) }
    }

    pub fn forward<'g, T: Element>(&self, x: Var<'g, T>, ps: &Bound<'g, T>) -> Result<Var<'g, T>> {
        Ok(x.layer_norm(ps[self.gamma], ps[self.beta], LN_EPS)?)
    }
}

/// Per-channel normalization with current-batch statistics.
#[derive(Clone, Debug)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl BatchNorm {
    pub fn new<T: Element>(b: &mut ParamBuilder<T>, name: &str, channels: usize) -> Self {
        BatchNorm {
            gamma: b.ones(format!("{name}.gamma"), &[channels]),
            beta: b.zeros(format!("{name}.beta"), &[channels]),
        }
    }

    pub fn forward<'g, T: Element>(&self, x: Var<'g, T>, ps: &Bound<'g, T>) -> Result<Var<'g, T>> {
        Ok(x.batch_norm2d(ps[self.gamma], ps[self.beta], BN_EPS)?)
    }
}

/// `[N,C,H,W]` -> `[N,H*W,C]`.
pub fn to_tokens<'g, T: Element>(x: Var<'g, T>) -> Result<Var<'g, T>> {
    let s = x.shape();
    Ok(x.reshape(&[s[0], s[1], s[2] * s[3]])?.transpose(1, 2)?)
}

/// `[N,H*W,C]` -> `[N,C,H,W]`.
pub fn to_spatial<'g, T: Element>(x: Var<'g, T>, h: usize, w: usize) -> Result<Var<'g, T>> {
    let s = x.shape();
    Ok(x.transpose(1, 2)?.reshape(&[s[0], s[2], h, w])?)
}
