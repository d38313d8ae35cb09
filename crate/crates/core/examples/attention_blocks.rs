//! Self-attention and cross-attention on token sequences of different lengths.

use changevit::nn::{attend, cross_attention, mhsa, AttentionParams, CrossAttentionBlock};
use changevit::params::ParamBuilder;
use cvit_tensor::{Graph, Tensor};
use rand::{Rng, SeedableRng};

fn tokens(rng: &mut impl Rng, n: usize, t: usize, d: usize) -> Tensor<f32> {
    Tensor::from_fn(vec![n, t, d], |_| rng.random_range(-1.0..1.0))
}

fn main() -> changevit::Result<()> {
    let (dim, heads) = (32, 4);
    let mut b = ParamBuilder::<f32>::new(0);
    let attn = AttentionParams::new(&mut b, "attn", dim, heads, 0.1)?;
    let block = CrossAttentionBlock::new(&mut b, "block", dim, heads, 0.1)?;
    let store = b.finish();

    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
    let g = Graph::inference();
    let ps = store.bind(&g);
    let vit_tokens = g.constant(tokens(&mut rng, 2, 16, dim));
    let detail_tokens = g.constant(tokens(&mut rng, 2, 64, dim));

    let s = mhsa(vit_tokens, &attn, &ps)?;
    println!("self-attention  {:?} -> {:?}", vit_tokens.shape(), s.shape());
    let c = cross_attention(vit_tokens, detail_tokens, &attn, &ps)?;
    println!("cross-attention {:?} over {:?} -> {:?}", vit_tokens.shape(), detail_tokens.shape(), c.shape());

    let w = attend(vit_tokens, detail_tokens, &attn, &ps)?.weights;
    let wv = w.value();
    let row: f32 = wv.data()[..64].iter().sum();
    println!("weights {:?}, first row sums to {row:.6}", w.shape());

    let r = block.forward(vit_tokens, detail_tokens, &ps)?;
    println!("residual cross-attention block keeps the query shape: {:?}", r.shape());
    Ok(())
}
