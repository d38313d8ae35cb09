//! Multi-head self- and cross-attention.

use cvit_tensor::{Element, Var};

use crate::error::{Error, Result};
use crate::nn::layers::{LayerNorm, Linear};
use crate::params::{Bound, ParamBuilder};

/// Projections for one multi-head attention: `dim x dim` query, key,
/// value and output maps (with biases) split into `heads` heads.
#[derive(Clone, Debug)]
pub struct AttentionParams {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub dim: usize,
    pub heads: usize,
}

impl AttentionParams {
    pub fn new<T: Element>(b: &mut ParamBuilder<T>, name: &str, dim: usize, heads: usize, std: f64) -> Result<Self> {
        if heads == 0 || !dim.is_multiple_of(heads) {
            return Err(Error::Config(format!("attention width {dim} is not divisible by {heads} heads")));
        }
        Ok(AttentionParams {
            q: Linear::new(b, &format!("{name}.q"), dim, dim, std),
            k: Linear::new(b, &format!("{name}.k"), dim, dim, std),
            v: Linear::new(b, &format!("{name}.v"), dim, dim, std),
            o: Linear::new(b, &format!("{name}.o"), dim, dim, std),
            dim,
            heads,
        })
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.heads
    }
}

/// Attention output together with the row-normalized weights `[N,h,Tq,Tk]`.
pub struct AttentionOutput<'g, T: Element> {
    pub out: Var<'g, T>,
    pub weights: Var<'g, T>,
}

fn split_heads<'g, T: Element>(x: Var<'g, T>, heads: usize) -> Result<Var<'g, T>> {
    let s = x.shape();
    Ok(x.reshape(&[s[0], s[1], heads, s[2] / heads])?.permute(&[0, 2, 1, 3])?)
}

/// `softmax(Q K^T / sqrt(d_h)) V` per head, heads re-concatenated and
/// projected by the output map. Queries come from `q_in`, keys and values
/// from `kv_in`.
pub fn attend<'g, T: Element>(
    q_in: Var<'g, T>,
    kv_in: Var<'g, T>,
    p: &AttentionParams,
    ps: &Bound<'g, T>,
) -> Result<AttentionOutput<'g, T>> {
    let (sq, sk) = (q_in.shape(), kv_in.shape());
    if sq.len() != 3 || sk.len() != 3 || sq[2] != p.dim || sk[2] != p.dim || sq[0] != sk[0] {
        return Err(cvit_tensor::TensorError::Dimension {
            op: "attention",
            msg: format!("query {sq:?}, key/value {sk:?}, width {}", p.dim),
        }
        .into());
    }
    let q = split_heads(p.q.forward(q_in, ps)?, p.heads)?;
    let k = split_heads(p.k.forward(kv_in, ps)?, p.heads)?;
    let v = split_heads(p.v.forward(kv_in, ps)?, p.heads)?;
    let scores = q.matmul(k.transpose(2, 3)?)?.scale(1.0 / (p.head_dim() as f64).sqrt())?;
    let weights = scores.softmax()?;
    let mixed = weights.matmul(v)?.permute(&[0, 2, 1, 3])?.reshape(&[sq[0], sq[1], p.dim])?;
    Ok(AttentionOutput { out: p.o.forward(mixed, ps)?, weights })
}

pub fn mhsa<'g, T: Element>(x: Var<'g, T>, p: &AttentionParams, ps: &Bound<'g, T>) -> Result<Var<'g, T>> {
    Ok(attend(x, x, p, ps)?.out)
}

/// Attention of `q_in` tokens over `kv_in` tokens. With `kv_in == q_in`
/// this is exactly [`mhsa`]; the residual lives in [`CrossAttentionBlock`].
pub fn cross_attention<'g, T: Element>(
    q_in: Var<'g, T>,
    kv_in: Var<'g, T>,
    p: &AttentionParams,
    ps: &Bound<'g, T>,
) -> Result<Var<'g, T>> {
    Ok(attend(q_in, kv_in, p, ps)?.out)
}

/// Pre-norm cross-attention with a residual on the query stream:
/// `q + CrossAttn(LN_q(q), LN_kv(kv))`. No feed-forward.
#[derive(Clone, Debug)]
pub struct CrossAttentionBlock {
    pub norm_q: LayerNorm,
    pub norm_kv: LayerNorm,
    pub attn: AttentionParams,
}

impl CrossAttentionBlock {
    pub fn new<T: Element>(b: &mut ParamBuilder<T>, name: &str, dim: usize, heads: usize, std: f64) -> Result<Self> {
        Ok(CrossAttentionBlock {
            norm_q: LayerNorm::new(b, &format!("{name}.norm_q"), dim),
            norm_kv: LayerNorm::new(b, &format!("{name}.norm_kv"), dim),
            attn: AttentionParams::new(b, &format!("{name}.attn"), dim, heads, std)?,
        })
    }

    pub fn forward<'g, T: Element>(&self, q: Var<'g, T>, kv: Var<'g, T>, ps: &Bound<'g, T>) -> Result<Var<'g, T>> {
        let nq = self.norm_q.forward(q, ps)?;
        let nkv = self.norm_kv.forward(kv, ps)?;
        Ok(q.add(cross_attention(nq, nkv, &self.attn, ps)?)?)
    }
}
