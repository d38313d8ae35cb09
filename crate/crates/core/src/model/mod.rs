//! The change-detection network: shared ViT encoder and detail-capture
//! branch per phase, feature injector, per-scale difference modeling and
//! a cascade upsampling decoder.

mod config;

pub use config::{Branches, InjectorVariant, ModelConfig, PATCH_SIZE};

use cvit_tensor::{Element, Graph, Tensor, TensorError, Var};

use crate::error::{Error, Result};
use crate::nn::{to_spatial, to_tokens, BatchNorm, Conv, CrossAttentionBlock, Deconv, LayerNorm, Linear, ResBlockParams, TransformerLayer};
use crate::params::{Bound, ParamBuilder, ParamId, ParamStore};

#[derive(Clone, Debug)]
pub struct VitParams {
    pub patch: Linear,
    pub pos: ParamId,
    pub layers: Vec<TransformerLayer>,
    pub norm: LayerNorm,
}

#[derive(Clone, Debug)]
pub struct DetailParams {
    pub stem: Conv,
    pub stem_norm: BatchNorm,
    pub stages: [Vec<ResBlockParams>; 3],
}

#[derive(Clone, Debug)]
pub struct InjectorParams {
    /// 1x1 convs lifting each detail map to the ViT width.
    pub lifts: [Conv; 3],
    pub blocks: [CrossAttentionBlock; 3],
    /// Pointwise 3D -> D fusion.
    pub fuse: Conv,
    pub variant: InjectorVariant,
}

/// Three 3x3 conv + ReLU layers applied to `[F1, F2, |F1 - F2|]`.
#[derive(Clone, Debug)]
pub struct DiffMlp {
    pub convs: [Conv; 3],
}

#[derive(Clone, Debug)]
pub struct UpStage {
    pub reduce: Conv,
    pub deconv: Deconv,
}

/// Decoder levels are indexed deepest first: 0 = 1/16, 1 = 1/8, 2 = 1/4, 3 = 1/2.
#[derive(Clone, Debug)]
pub struct DecoderParams {
    pub diff: [Option<DiffMlp>; 4],
    /// `up[i]` carries level `i` to level `i + 1`.
    pub up: [Option<UpStage>; 3],
    pub head: Conv,
}

#[derive(Clone, Debug)]
pub struct Arch {
    pub vit: Option<VitParams>,
    pub detail: Option<DetailParams>,
    pub injector: Option<InjectorParams>,
    pub decoder: DecoderParams,
}

/// Features of one phase.
pub struct PhaseFeatures<'g, T: Element> {
    pub f_v: Option<Var<'g, T>>,
    pub f_c: Option<[Var<'g, T>; 3]>,
    pub f_ve: Option<Var<'g, T>>,
}

impl<'g, T: Element> PhaseFeatures<'g, T> {
    /// Decoder inputs, deepest first.
    fn levels(&self) -> [Option<Var<'g, T>>; 4] {
        let deep = self.f_ve.or(self.f_v);
        match &self.f_c {
            Some([c1, c2, c3]) => [deep, Some(*c3), Some(*c2), Some(*c1)],
            None => [deep, None, None, None],
        }
    }
}

pub struct ForwardTrace<'g, T: Element> {
    pub phases: [PhaseFeatures<'g, T>; 2],
    /// `|F1 - F2|` block per decoder level, deepest first.
    pub abs_diff: [Option<Var<'g, T>>; 4],
    /// Difference features after the cascade additions, deepest first.
    pub f_d: [Option<Var<'g, T>>; 4],
    /// Change probability `[N,1,H,W]`.
    pub prob: Var<'g, T>,
}

#[derive(Clone, Debug)]
pub struct ChangeVit<T: Element> {
    config: ModelConfig,
    params: ParamStore<T>,
    arch: Arch,
}

fn conv_err(op: &'static str, msg: String) -> Error {
    Error::Tensor(TensorError::Dimension { op, msg })
}

impl<T: Element> ChangeVit<T> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut b = ParamBuilder::new(seed);
        let std = config.init_std;
        let d = config.vit_dim;
        let [c1, c2, c3] = config.detail_channels;

        let vit = if config.uses_vit() {
            let patch_dim = 3 * PATCH_SIZE * PATCH_SIZE;
            let patch = Linear::new(&mut b, "vit.patch_embed", patch_dim, d, std);
            let pos = b.trunc_normal("vit.pos_embed", &[config.num_tokens(), d], std);
            let layers = (0..config.vit_layers)
                .map(|i| TransformerLayer::new(&mut b, &format!("vit.layer{i}"), d, config.vit_heads, config.mlp_ratio, std))
                .collect::<Result<Vec<_>>>()?;
            let norm = LayerNorm::new(&mut b, "vit.norm", d);
            Some(VitParams { patch, pos, layers, norm })
        } else {
            None
        };

        let detail = if config.uses_detail() {
            let stem = Conv::new(&mut b, "detail.stem", 3, c1, 3, 2, 1, false, std);
            let stem_norm = BatchNorm::new(&mut b, "detail.stem_norm", c1);
            let stage = |b: &mut ParamBuilder<T>, idx: usize, input: usize, output: usize, stride: usize| {
                (0..config.blocks_per_stage)
                    .map(|j| {
                        let (i, s) = if j == 0 { (input, stride) } else { (output, 1) };
                        ResBlockParams::new(b, &format!("detail.stage{idx}.block{j}"), i, output, s, std)
                    })
                    .collect::<Result<Vec<_>>>()
            };
            let stages = [stage(&mut b, 1, c1, c1, 1)?, stage(&mut b, 2, c1, c2, 2)?, stage(&mut b, 3, c2, c3, 2)?];
            Some(DetailParams { stem, stem_norm, stages })
        } else {
            None
        };

        let injector = if config.branches == Branches::Full {
            let lifts = [c1, c2, c3].iter().enumerate().map(|(i, &c)| {
                Conv::new(&mut b, &format!("injector.lift{}", i + 1), c, d, 1, 1, 0, true, std)
            }).collect::<Vec<_>>();
            let blocks = (1..=3)
                .map(|i| CrossAttentionBlock::new(&mut b, &format!("injector.block{i}"), d, config.vit_heads, std))
                .collect::<Result<Vec<_>>>()?;
            let fuse = Conv::new(&mut b, "injector.fuse", 3 * d, d, 1, 1, 0, true, std);
            Some(InjectorParams {
                lifts: lifts.try_into().expect("three lifts"),
                blocks: blocks.try_into().expect("three blocks"),
                fuse,
                variant: config.injector,
            })
        } else {
            None
        };

        // decoder widths, deepest first
        let [d12, d14, d18, d116] = config.decoder_channels;
        let widths = [d116, d18, d14, d12];
        let in_channels = [3 * d, 3 * c3, 3 * c2, 3 * c1];
        let present = [config.uses_vit(), config.uses_detail(), config.uses_detail(), config.uses_detail()];
        let mut diff: [Option<DiffMlp>; 4] = [None, None, None, None];
        for lvl in 0..4 {
            if present[lvl] {
                let w = widths[lvl];
                let name = |k: usize| format!("decoder.diff{lvl}.conv{k}");
                diff[lvl] = Some(DiffMlp {
                    convs: [
                        Conv::new(&mut b, &name(1), in_channels[lvl], w, 3, 1, 1, true, std),
                        Conv::new(&mut b, &name(2), w, w, 3, 1, 1, true, std),
                        Conv::new(&mut b, &name(3), w, w, 3, 1, 1, true, std),
                    ],
                });
            }
        }
        let first = present.iter().position(|&p| p).expect("at least one branch");
        let mut up: [Option<UpStage>; 3] = [None, None, None];
        for (lvl, slot) in up.iter_mut().enumerate().skip(first) {
            let (from, to) = (widths[lvl], widths[lvl + 1]);
            *slot = Some(UpStage {
                reduce: Conv::new(&mut b, &format!("decoder.up{lvl}.reduce"), from, to, 1, 1, 0, true, std),
                deconv: Deconv::new(&mut b, &format!("decoder.up{lvl}.deconv"), to, to, std),
            });
        }
        let head = Conv::new(&mut b, "decoder.head", widths[3], 1, 3, 1, 1, true, std);

        let arch = Arch { vit, detail, injector, decoder: DecoderParams { diff, up, head } };
        Ok(ChangeVit { config, params: b.finish(), arch })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn arch(&self) -> &Arch {
        &self.arch
    }

    /// Same architecture with parameters converted to another element type.
    pub fn cast<U: Element>(&self) -> ChangeVit<U> {
        ChangeVit { config: self.config.clone(), params: self.params.cast(), arch: self.arch.clone() }
    }

    fn vit(&self) -> Result<&VitParams> {
        self.arch.vit.as_ref().ok_or_else(|| Error::Config("model has no ViT branch".into()))
    }

    fn detail(&self) -> Result<&DetailParams> {
        self.arch.detail.as_ref().ok_or_else(|| Error::Config("model has no detail-capture branch".into()))
    }

    /// `[N,3,H,W]` -> `[N,T,D]`: flattened 16x16 patches, linear projection,
    /// plus position embedding.
    pub fn patch_embed<'g>(&self, img: Var<'g, T>, ps: &Bound<'g, T>) -> Result<Var<'g, T>> {
        let vit = self.vit()?;
        let s = img.shape();
        if s.len() != 4 || s[1] != 3 {
            return Err(conv_err("patch_embed", format!("expected [N,3,H,W], got {s:?}")));
        }
        let (n, h, w) = (s[0], s[2], s[3]);
        if h % PATCH_SIZE != 0 || w % PATCH_SIZE != 0 {
            return Err(Error::Config(format!("image {h}x{w} is not divisible into 16x16 patches")));
        }
        let (gh, gw) = (h / PATCH_SIZE, w / PATCH_SIZE);
        if gh * gw != self.config.num_tokens() {
            return Err(Error::Config(format!(
                "{} tokens from a {h}x{w} image, position embedding has {}",
                gh * gw,
                self.config.num_tokens()
            )));
        }
        let patches = img
            .reshape(&[n, 3, gh, PATCH_SIZE, gw, PATCH_SIZE])?
            .permute(&[0, 2, 4, 1, 3, 5])?
            .reshape(&[n, gh * gw, 3 * PATCH_SIZE * PATCH_SIZE])?;
        Ok(vit.patch.forward(patches, ps)?.add(ps[vit.pos])?)
    }

    /// Transformer layers plus final norm, returned as the `[N,D,H/16,W/16]` map.
    pub fn vit_encode<'g>(&self, tokens: Var<'g, T>, ps: &Bound<'g, T>) -> Result<Var<'g, T>> {
        let vit = self.vit()?;
        let mut x = tokens;
        for layer in &vit.layers {
            x = layer.forward(x, ps)?;
        }
        let x = vit.norm.forward(x, ps)?;
        let t = x.shape()[1];
        let side = (t as f64).sqrt() as usize;
        if side * side != t {
            return Err(Error::Config(format!("{t} tokens do not form a square grid")));
        }
        to_spatial(x, side, side)
    }

    /// Detail features at 1/2, 1/4 and 1/8 resolution.
    pub fn detail_capture<'g>(&self, img: Var<'g, T>, ps: &Bound<'g, T>) -> Result<[Var<'g, T>; 3]> {
        let det = self.detail()?;
        let s = img.shape();
        if s.len() != 4 || !s[2].is_multiple_of(8) || !s[3].is_multiple_of(8) {
            return Err(Error::Config(format!("detail branch needs H, W divisible by 8, got {s:?}")));
        }
        let mut x = det.stem_norm.forward(det.stem.forward(img, ps)?, ps)?.relu()?;
        let mut outs = Vec::with_capacity(3);
        for stage in &det.stages {
            for block in stage {
                x = block.forward(x, ps)?;
            }
            outs.push(x);
        }
        Ok(outs.try_into().expect("three stages"))
    }

    /// Fuses the three detail maps into the ViT map; output has `f_v`'s shape.
    pub fn inject_features<'g>(
        &self,
        f_v: Var<'g, T>,
        f_c: &[Var<'g, T>; 3],
        ps: &Bound<'g, T>,
    ) -> Result<Var<'g, T>> {
        let inj = self
            .arch
            .injector
            .as_ref()
            .ok_or_else(|| Error::Config("model has no feature injector".into()))?;
        let sv = f_v.shape();
        let (gh, gw) = (sv[2], sv[3]);
        let vit_tokens = to_tokens(f_v)?;
        let mut fused = Vec::with_capacity(3);
        for ((lift, block), &fc) in inj.lifts.iter().zip(&inj.blocks).zip(f_c) {
            let lifted = lift.forward(fc, ps)?;
            let sc = lifted.shape();
            let detail_tokens = to_tokens(lifted)?;
            let out = match inj.variant {
                InjectorVariant::VitAsQuery => block.forward(vit_tokens, detail_tokens, ps)?,
                InjectorVariant::DetailAsQuery => {
                    let refined = block.forward(detail_tokens, vit_tokens, ps)?;
                    let (h, w) = (sc[2], sc[3]);
                    if h % gh != 0 || w % gw != 0 || h / gh != w / gw {
                        return Err(conv_err("inject_features", format!("detail grid {h}x{w} vs ViT grid {gh}x{gw}")));
                    }
                    to_tokens(to_spatial(refined, h, w)?.avg_pool2d(h / gh)?)?
                }
            };
            fused.push(out);
        }
        let cat = Var::concat(&fused, 2)?;
        inj.fuse.forward(to_spatial(cat, gh, gw)?, ps)
    }

    /// Returns `(F_D, |F1 - F2|)` for decoder level `level` (deepest first).
    pub fn difference_model<'g>(
        &self,
        level: usize,
        f1: Var<'g, T>,
        f2: Var<'g, T>,
        ps: &Bound<'g, T>,
    ) -> Result<(Var<'g, T>, Var<'g, T>)> {
        let mlp = self
            .arch
            .decoder
            .diff
            .get(level)
            .and_then(|m| m.as_ref())
            .ok_or_else(|| Error::Config(format!("no difference model at level {level}")))?;
        if f1.shape() != f2.shape() {
            return Err(conv_err("difference_model", format!("{:?} vs {:?}", f1.shape(), f2.shape())));
        }
        let abs = f1.sub(f2)?.abs()?;
        let mut x = Var::concat(&[f1, f2, abs], 1)?;
        for conv in &mlp.convs {
            x = conv.forward(x, ps)?.relu()?;
        }
        Ok((x, abs))
    }

    /// Cascade from the deepest present level: `F_{i+1} += Deconv(Conv1x1(F_i))`,
    /// then sigmoid(3x3 conv) at 1/2 and a bilinear 2x upsample.
    /// Returns the updated levels and `P`.
    pub fn decode<'g>(
        &self,
        f_d: [Option<Var<'g, T>>; 4],
        ps: &Bound<'g, T>,
    ) -> Result<([Option<Var<'g, T>>; 4], Var<'g, T>)> {
        let dec = &self.arch.decoder;
        let mut out: [Option<Var<'g, T>>; 4] = [None; 4];
        let mut acc: Option<Var<'g, T>> = None;
        for lvl in 0..4 {
            let up = match acc {
                Some(a) => {
                    let stage = dec.up[lvl - 1]
                        .as_ref()
                        .ok_or_else(|| Error::Config(format!("no upsampling stage into level {lvl}")))?;
                    Some(stage.deconv.forward(stage.reduce.forward(a, ps)?, ps)?)
                }
                None => None,
            };
            acc = match (up, f_d[lvl]) {
                (Some(u), Some(d)) => {
                    if u.shape() != d.shape() {
                        return Err(conv_err("decode", format!("cascade {:?} vs level {lvl} {:?}", u.shape(), d.shape())));
                    }
                    Some(u.add(d)?)
                }
                (u, d) => u.or(d),
            };
            out[lvl] = acc;
        }
        let last = acc.ok_or_else(|| Error::Config("decoder received no features".into()))?;
        let prob = dec.head.forward(last, ps)?.sigmoid()?.upsample_bilinear2x()?;
        Ok((out, prob))
    }

    fn phase<'g>(&self, img: Var<'g, T>, ps: &Bound<'g, T>) -> Result<PhaseFeatures<'g, T>> {
        let f_v = match self.arch.vit {
            Some(_) => Some(self.vit_encode(self.patch_embed(img, ps)?, ps)?),
            None => None,
        };
        let f_c = match self.arch.detail {
            Some(_) => Some(self.detail_capture(img, ps)?),
            None => None,
        };
        let f_ve = match (&self.arch.injector, f_v, &f_c) {
            (Some(_), Some(v), Some(c)) => Some(self.inject_features(v, c, ps)?),
            _ => None,
        };
        Ok(PhaseFeatures { f_v, f_c, f_ve })
    }

    /// Full pipeline with every intermediate exposed.
    pub fn forward_trace<'g>(
        &self,
        img1: Var<'g, T>,
        img2: Var<'g, T>,
        ps: &Bound<'g, T>,
    ) -> Result<ForwardTrace<'g, T>> {
        if img1.shape() != img2.shape() {
            return Err(conv_err("forward", format!("phases differ: {:?} vs {:?}", img1.shape(), img2.shape())));
        }
        let p1 = self.phase(img1, ps)?;
        let p2 = self.phase(img2, ps)?;
        let (l1, l2) = (p1.levels(), p2.levels());
        let mut f_d: [Option<Var<'g, T>>; 4] = [None; 4];
        let mut abs_diff: [Option<Var<'g, T>>; 4] = [None; 4];
        for lvl in 0..4 {
            if let (Some(a), Some(b)) = (l1[lvl], l2[lvl]) {
                let (d, abs) = self.difference_model(lvl, a, b, ps)?;
                f_d[lvl] = Some(d);
                abs_diff[lvl] = Some(abs);
            }
        }
        let (f_d, prob) = self.decode(f_d, ps)?;
        Ok(ForwardTrace { phases: [p1, p2], abs_diff, f_d, prob })
    }

    /// Change probability `[N,1,H,W]` for a pair of `[N,3,H,W]` images.
    pub fn forward<'g>(&self, img1: Var<'g, T>, img2: Var<'g, T>, ps: &Bound<'g, T>) -> Result<Var<'g, T>> {
        Ok(self.forward_trace(img1, img2, ps)?.prob)
    }

    /// Inference without gradient tracking.
    pub fn predict(&self, img1: &Tensor<T>, img2: &Tensor<T>) -> Result<Tensor<T>> {
        let g = Graph::inference();
        let ps = self.params.bind(&g);
        let p = self.forward(g.constant(img1.clone()), g.constant(img2.clone()), &ps)?;
        Ok((*p.value()).clone())
    }
}
