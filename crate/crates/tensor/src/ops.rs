//! Differentiable operations on [`Var`]s and their backward rules.

use crate::element::{gemm, Element};
use crate::error::{Result, TensorError};
use crate::graph::{Node, Var};
use crate::kernels::{self, ConvGeom};
use crate::tensor::{numel, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) enum BinKind {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) enum UnKind {
    Abs,
    Relu,
    Gelu,
    Sigmoid,
    Log2,
    Clamp(f64, f64),
    Affine(f64, f64),
}

#[derive(Clone, Debug)]
pub(crate) enum Op {
    Leaf,
    Binary { kind: BinKind, a: usize, b: usize, a_n: usize, b_n: usize },
    Unary { kind: UnKind, x: usize },
    Sum { x: usize, scale: f64 },
    Concat { inputs: Vec<usize>, inner: Vec<usize>, outer: usize },
    Matmul { a: usize, b: usize, batch: usize, m: usize, k: usize, n: usize, shared_b: bool },
    Linear { x: usize, w: usize, b: Option<usize>, k: usize, n: usize },
    Reshape { x: usize },
    Permute { x: usize, perm: Vec<usize> },
    Upsample2x { x: usize },
    Conv2d { x: usize, w: usize, b: Option<usize>, stride: usize, pad: usize },
    ConvTranspose2d { x: usize, w: usize, b: Option<usize>, stride: usize, pad: usize },
    LayerNorm { x: usize, gamma: usize, beta: usize, eps: f64 },
    BatchNorm2d { x: usize, gamma: usize, beta: usize, eps: f64 },
    Softmax { x: usize },
    AvgPool2d { x: usize, k: usize },
}

impl Op {
    pub(crate) fn inputs(&self) -> Vec<usize> {
        match self {
            Op::Leaf => vec![],
            Op::Binary { a, b, .. } | Op::Matmul { a, b, .. } => vec![*a, *b],
            Op::Unary { x, .. }
            | Op::Sum { x, .. }
            | Op::Reshape { x }
            | Op::Permute { x, .. }
            | Op::Upsample2x { x }
            | Op::Softmax { x }
            | Op::AvgPool2d { x, .. } => vec![*x],
            Op::Concat { inputs, .. } => inputs.clone(),
            Op::Linear { x, w, b, .. }
            | Op::Conv2d { x, w, b, .. }
            | Op::ConvTranspose2d { x, w, b, .. } => {
                let mut v = vec![*x, *w];
                v.extend(b);
                v
            }
            Op::LayerNorm { x, gamma, beta, .. } | Op::BatchNorm2d { x, gamma, beta, .. } => {
                vec![*x, *gamma, *beta]
            }
        }
    }
}

/// Output shape when broadcasting `b` onto `a` (or `a` onto `b`): either
/// side can be a single element or a trailing-axis suffix of the other.
fn broadcast_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    if a == b {
        return Ok(a.to_vec());
    }
    let (na, nb) = (numel(a), numel(b));
    if nb == 1 || (b.len() <= a.len() && a.ends_with(b)) {
        return Ok(a.to_vec());
    }
    if na == 1 || (a.len() <= b.len() && b.ends_with(a)) {
        return Ok(b.to_vec());
    }
    Err(TensorError::dim(op, format!("cannot broadcast {a:?} with {b:?}")))
}

fn check_same<'g, T: Element>(op: &'static str, a: Var<'g, T>, b: Var<'g, T>) -> Result<()> {
    if !std::ptr::eq(a.graph, b.graph) {
        return Err(TensorError::Contract(format!("{op}: operands from different graphs")));
    }
    Ok(())
}

impl<'g, T: Element> Var<'g, T> {
    fn binary(self, other: Var<'g, T>, kind: BinKind, name: &'static str) -> Result<Var<'g, T>> {
        check_same(name, self, other)?;
        let (a, b) = (self.value(), other.value());
        let shape = broadcast_shape(name, a.shape(), b.shape())?;
        let (a_n, b_n) = (a.numel(), b.numel());
        let (ad, bd) = (a.data(), b.data());
        let data: Vec<T> = (0..numel(&shape))
            .map(|i| {
                let (x, y) = (ad[i % a_n], bd[i % b_n]);
                match kind {
                    BinKind::Add => x + y,
                    BinKind::Sub => x - y,
                    BinKind::Mul => x * y,
                    BinKind::Div => x / y,
                }
            })
            .collect();
        let out = Tensor::new(shape, data)?;
        self.graph.push(name, out, Op::Binary { kind, a: self.id, b: other.id, a_n, b_n })
    }

    pub fn add(self, other: Var<'g, T>) -> Result<Var<'g, T>> {
        self.binary(other, BinKind::Add, "add")
    }

    pub fn sub(self, other: Var<'g, T>) -> Result<Var<'g, T>> {
        self.binary(other, BinKind::Sub, "sub")
    }

    pub fn mul(self, other: Var<'g, T>) -> Result<Var<'g, T>> {
        self.binary(other, BinKind::Mul, "mul")
    }

    pub fn div(self, other: Var<'g, T>) -> Result<Var<'g, T>> {
        self.binary(other, BinKind::Div, "div")
    }

    fn unary(self, kind: UnKind, name: &'static str) -> Result<Var<'g, T>> {
        let x = self.value();
        let data = x.data().iter().map(|&v| unary_fwd(kind, v)).collect();
        let out = Tensor::new(x.shape().to_vec(), data)?;
        self.graph.push(name, out, Op::Unary { kind, x: self.id })
    }

    /// `abs`, with subgradient 0 at 0.
    pub fn abs(self) -> Result<Var<'g, T>> {
        self.unary(UnKind::Abs, "abs")
    }

    pub fn relu(self) -> Result<Var<'g, T>> {
        self.unary(UnKind::Relu, "relu")
    }

    /// GELU, tanh approximation.
    pub fn gelu(self) -> Result<Var<'g, T>> {
        self.unary(UnKind::Gelu, "gelu")
    }

    pub fn sigmoid(self) -> Result<Var<'g, T>> {
        self.unary(UnKind::Sigmoid, "sigmoid")
    }

    pub fn log2(self) -> Result<Var<'g, T>> {
        self.unary(UnKind::Log2, "log2")
    }

    /// Clamp into `[lo, hi]`; gradient is passed only inside the interval.
    pub fn clamp(self, lo: f64, hi: f64) -> Result<Var<'g, T>> {
        self.unary(UnKind::Clamp(lo, hi), "clamp")
    }

    /// `scale * x + shift`.
    pub fn affine(self, scale: f64, shift: f64) -> Result<Var<'g, T>> {
        self.unary(UnKind::Affine(scale, shift), "affine")
    }

    pub fn scale(self, c: f64) -> Result<Var<'g, T>> {
        self.affine(c, 0.0)
    }

    pub fn square(self) -> Result<Var<'g, T>> {
        self.mul(self)
    }

    pub fn sum(self) -> Result<Var<'g, T>> {
        let x = self.value();
        self.graph.push("sum", Tensor::scalar(x.sum()), Op::Sum { x: self.id, scale: 1.0 })
    }

    pub fn mean(self) -> Result<Var<'g, T>> {
        let x = self.value();
        let scale = 1.0 / x.numel() as f64;
        let out = Tensor::scalar(x.sum() / T::of(x.numel() as f64));
        self.graph.push("mean", out, Op::Sum { x: self.id, scale })
    }

    /// Concatenates along `axis`; all other dimensions must agree.
    pub fn concat(parts: &[Var<'g, T>], axis: usize) -> Result<Var<'g, T>> {
        let first = parts
            .first()
            .ok_or_else(|| TensorError::Contract("concat of zero tensors".into()))?;
        let values: Vec<_> = parts.iter().map(|p| p.value()).collect();
        let base = values[0].shape().to_vec();
        if axis >= base.len() {
            return Err(TensorError::dim("concat", format!("axis {axis} out of range for {base:?}")));
        }
        let mut total = 0;
        for (p, v) in parts.iter().zip(&values) {
            check_same("concat", *first, *p)?;
            let s = v.shape();
            if s.len() != base.len()
                || s.iter().zip(&base).enumerate().any(|(i, (a, b))| i != axis && a != b)
            {
                return Err(TensorError::dim("concat", format!("{s:?} vs {base:?} on axis {axis}")));
            }
            total += s[axis];
        }
        let outer = numel(&base[..axis]);
        let inner: Vec<usize> = values.iter().map(|v| numel(&v.shape()[axis..])).collect();
        let mut data = Vec::with_capacity(outer * inner.iter().sum::<usize>());
        for o in 0..outer {
            for (v, &len) in values.iter().zip(&inner) {
                data.extend_from_slice(&v.data()[o * len..(o + 1) * len]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let out = Tensor::new(shape, data)?;
        let inputs = parts.iter().map(|p| p.id).collect();
        first.graph.push("concat", out, Op::Concat { inputs, inner, outer })
    }

    /// Batched matrix product. `self: [..., M, K]`; `other` is either
    /// `[..., K, N]` with the same leading dims, or a shared `[K, N]`.
    pub fn matmul(self, other: Var<'g, T>) -> Result<Var<'g, T>> {
        check_same("matmul", self, other)?;
        let (a, b) = (self.value(), other.value());
        let (sa, sb) = (a.shape(), b.shape());
        if sa.len() < 2 || sb.len() < 2 {
            return Err(TensorError::dim("matmul", format!("{sa:?} x {sb:?}")));
        }
        let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let (k2, n) = (sb[sb.len() - 2], sb[sb.len() - 1]);
        let lead = &sa[..sa.len() - 2];
        let shared_b = sb.len() == 2;
        if k != k2 || (!shared_b && &sb[..sb.len() - 2] != lead) {
            return Err(TensorError::dim("matmul", format!("{sa:?} x {sb:?}")));
        }
        let batch = numel(lead);
        let mut data = vec![T::zero(); batch * m * n];
        for bi in 0..batch {
            let bs = if shared_b { 0 } else { bi };
            gemm(
                m,
                k,
                n,
                &a.data()[bi * m * k..(bi + 1) * m * k],
                false,
                &b.data()[bs * k * n..(bs + 1) * k * n],
                false,
                &mut data[bi * m * n..(bi + 1) * m * n],
                false,
            );
        }
        let mut shape = lead.to_vec();
        shape.extend([m, n]);
        let out = Tensor::new(shape, data)?;
        self.graph
            .push("matmul", out, Op::Matmul { a: self.id, b: other.id, batch, m, k, n, shared_b })
    }

    /// `x[..., K] @ w[K, N] + b[N]`.
    pub fn linear(self, w: Var<'g, T>, b: Option<Var<'g, T>>) -> Result<Var<'g, T>> {
        check_same("linear", self, w)?;
        let (x, wv) = (self.value(), w.value());
        let sx = x.shape();
        let sw = wv.shape();
        if sx.is_empty() || sw.len() != 2 || sx[sx.len() - 1] != sw[0] {
            return Err(TensorError::dim("linear", format!("{sx:?} @ {sw:?}")));
        }
        let (k, n) = (sw[0], sw[1]);
        let m = x.numel() / k;
        let mut data = vec![T::zero(); m * n];
        let bias = match b {
            Some(b) => {
                check_same("linear", self, b)?;
                let bv = b.value();
                if bv.shape() != [n] {
                    return Err(TensorError::dim("linear", format!("bias {:?} for width {n}", bv.shape())));
                }
                for row in data.chunks_mut(n) {
                    row.copy_from_slice(bv.data());
                }
                true
            }
            None => false,
        };
        gemm(m, k, n, x.data(), false, wv.data(), false, &mut data, bias);
        let mut shape = sx.to_vec();
        *shape.last_mut().unwrap() = n;
        let out = Tensor::new(shape, data)?;
        self.graph
            .push("linear", out, Op::Linear { x: self.id, w: w.id, b: b.map(|b| b.id), k, n })
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Var<'g, T>> {
        let x = self.value();
        let out = (*x).clone().reshape(shape.to_vec())?;
        self.graph.push("reshape", out, Op::Reshape { x: self.id })
    }

    /// Reorders axes: output axis `i` is input axis `perm[i]`.
    pub fn permute(self, perm: &[usize]) -> Result<Var<'g, T>> {
        let x = self.value();
        let s = x.shape();
        let mut seen = vec![false; s.len()];
        if perm.len() != s.len() || perm.iter().any(|&p| p >= s.len() || std::mem::replace(&mut seen[p], true)) {
            return Err(TensorError::dim("permute", format!("{perm:?} for {s:?}")));
        }
        let data = kernels::permute(x.data(), s, perm);
        let shape: Vec<usize> = perm.iter().map(|&p| s[p]).collect();
        let out = Tensor::new(shape, data)?;
        self.graph.push("permute", out, Op::Permute { x: self.id, perm: perm.to_vec() })
    }

    /// Swaps two axes.
    pub fn transpose(self, a: usize, b: usize) -> Result<Var<'g, T>> {
        let nd = self.value().ndim();
        if a >= nd || b >= nd {
            return Err(TensorError::dim("transpose", format!("axes {a},{b} of {nd}-d tensor")));
        }
        let mut perm: Vec<usize> = (0..nd).collect();
        perm.swap(a, b);
        self.permute(&perm)
    }

    /// Bilinear 2x upsampling of the two trailing axes (half-pixel centers).
    pub fn upsample_bilinear2x(self) -> Result<Var<'g, T>> {
        let x = self.value();
        let s = x.shape();
        if s.len() < 2 {
            return Err(TensorError::dim("upsample_bilinear2x", format!("{s:?}")));
        }
        let (h, w) = (s[s.len() - 2], s[s.len() - 1]);
        let planes = x.numel() / (h * w);
        let data = kernels::upsample2x_forward(x.data(), planes, h, w);
        let mut shape = s.to_vec();
        let nd = shape.len();
        shape[nd - 2] *= 2;
        shape[nd - 1] *= 2;
        let out = Tensor::new(shape, data)?;
        self.graph.push("upsample_bilinear2x", out, Op::Upsample2x { x: self.id })
    }

    /// 2-D convolution. `self: [N,C,H,W]`, `w: [O,C,kh,kw]`, `b: [O]`.
    pub fn conv2d(
        self,
        w: Var<'g, T>,
        b: Option<Var<'g, T>>,
        stride: usize,
        pad: usize,
    ) -> Result<Var<'g, T>> {
        check_same("conv2d", self, w)?;
        let (x, wv) = (self.value(), w.value());
        let (g, n, o) = conv_geom(x.shape(), wv.shape(), stride, pad)?;
        let bv = conv_bias("conv2d", b, o)?;
        let data =
            kernels::conv2d_forward(x.data(), n, &g, wv.data(), bv.as_ref().map(|b| b.data()), o);
        let out = Tensor::new(vec![n, o, g.out_h(), g.out_w()], data)?;
        self.graph.push(
            "conv2d",
            out,
            Op::Conv2d { x: self.id, w: w.id, b: b.map(|b| b.id), stride, pad },
        )
    }

    /// Transposed 2-D convolution. `self: [N,C,H,W]`, `w: [C,O,kh,kw]`,
    /// output `[N,O,(H-1)*stride-2*pad+kh, ...]`.
    pub fn conv_transpose2d(
        self,
        w: Var<'g, T>,
        b: Option<Var<'g, T>>,
        stride: usize,
        pad: usize,
    ) -> Result<Var<'g, T>> {
        check_same("conv_transpose2d", self, w)?;
        let (x, wv) = (self.value(), w.value());
        let (g, n, c) = tconv_geom(x.shape(), wv.shape(), stride, pad)?;
        let bv = conv_bias("conv_transpose2d", b, g.channels)?;
        let data = kernels::conv_transpose2d_forward(
            x.data(),
            n,
            c,
            &g,
            wv.data(),
            bv.as_ref().map(|b| b.data()),
        );
        let out = Tensor::new(vec![n, g.channels, g.height, g.width], data)?;
        self.graph.push(
            "conv_transpose2d",
            out,
            Op::ConvTranspose2d { x: self.id, w: w.id, b: b.map(|b| b.id), stride, pad },
        )
    }

    /// Normalizes over the last axis, then applies `gamma`/`beta`.
    pub fn layer_norm(self, gamma: Var<'g, T>, beta: Var<'g, T>, eps: f64) -> Result<Var<'g, T>> {
        check_same("layer_norm", self, gamma)?;
        check_same("layer_norm", self, beta)?;
        if eps <= 0.0 {
            return Err(TensorError::Contract("layer_norm eps must be positive".into()));
        }
        let (x, gv, bv) = (self.value(), gamma.value(), beta.value());
        let d = *x.shape().last().ok_or_else(|| TensorError::dim("layer_norm", "scalar input"))?;
        if gv.shape() != [d] || bv.shape() != [d] {
            return Err(TensorError::dim(
                "layer_norm",
                format!("width {d} vs gamma {:?} beta {:?}", gv.shape(), bv.shape()),
            ));
        }
        let (mut y, _) = kernels::normalize_rows(x.data(), d, T::of(eps));
        for row in y.chunks_mut(d) {
            for ((v, &g), &b) in row.iter_mut().zip(gv.data()).zip(bv.data()) {
                *v = *v * g + b;
            }
        }
        let out = Tensor::new(x.shape().to_vec(), y)?;
        self.graph.push(
            "layer_norm",
            out,
            Op::LayerNorm { x: self.id, gamma: gamma.id, beta: beta.id, eps },
        )
    }

    /// Per-channel normalization of `[N,C,H,W]` using statistics of the
    /// current batch (no running averages).
    pub fn batch_norm2d(self, gamma: Var<'g, T>, beta: Var<'g, T>, eps: f64) -> Result<Var<'g, T>> {
        check_same("batch_norm2d", self, gamma)?;
        check_same("batch_norm2d", self, beta)?;
        let (x, gv, bv) = (self.value(), gamma.value(), beta.value());
        let s = x.shape();
        if s.len() != 4 || gv.shape() != [s[1]] || bv.shape() != [s[1]] {
            return Err(TensorError::dim("batch_norm2d", format!("{s:?}")));
        }
        let (n, c, plane) = (s[0], s[1], s[2] * s[3]);
        let rows = channel_rows(x.data(), n, c, plane);
        let (xhat, _) = kernels::normalize_rows(&rows, n * plane, T::of(eps));
        let mut y = vec![T::zero(); x.numel()];
        for ch in 0..c {
            let (g, b) = (gv.data()[ch], bv.data()[ch]);
            for s_ in 0..n {
                let src = &xhat[ch * n * plane + s_ * plane..ch * n * plane + (s_ + 1) * plane];
                let dst = &mut y[(s_ * c + ch) * plane..(s_ * c + ch + 1) * plane];
                for (d, &v) in dst.iter_mut().zip(src) {
                    *d = v * g + b;
                }
            }
        }
        let out = Tensor::new(s.to_vec(), y)?;
        self.graph.push(
            "batch_norm2d",
            out,
            Op::BatchNorm2d { x: self.id, gamma: gamma.id, beta: beta.id, eps },
        )
    }

    /// Softmax over the last axis (max-subtracted).
    pub fn softmax(self) -> Result<Var<'g, T>> {
        let x = self.value();
        let k = *x.shape().last().ok_or_else(|| TensorError::dim("softmax", "scalar input"))?;
        let out = Tensor::new(x.shape().to_vec(), kernels::softmax_rows(x.data(), k))?;
        self.graph.push("softmax", out, Op::Softmax { x: self.id })
    }

    /// Non-overlapping `k x k` average pooling of `[N,C,H,W]`.
    pub fn avg_pool2d(self, k: usize) -> Result<Var<'g, T>> {
        let x = self.value();
        let s = x.shape();
        if s.len() != 4 || k == 0 || !s[2].is_multiple_of(k) || !s[3].is_multiple_of(k) {
            return Err(TensorError::dim("avg_pool2d", format!("{s:?} with k={k}")));
        }
        let (h, w) = (s[2], s[3]);
        let (oh, ow) = (h / k, w / k);
        let planes = s[0] * s[1];
        let inv = T::of(1.0 / (k * k) as f64);
        let mut data = vec![T::zero(); planes * oh * ow];
        for p in 0..planes {
            for y in 0..h {
                for xx in 0..w {
                    data[p * oh * ow + (y / k) * ow + xx / k] += x.data()[p * h * w + y * w + xx];
                }
            }
        }
        data.iter_mut().for_each(|v| *v *= inv);
        let out = Tensor::new(vec![s[0], s[1], oh, ow], data)?;
        self.graph.push("avg_pool2d", out, Op::AvgPool2d { x: self.id, k })
    }
}

fn conv_geom(x: &[usize], w: &[usize], stride: usize, pad: usize) -> Result<(ConvGeom, usize, usize)> {
    if x.len() != 4 || w.len() != 4 {
        return Err(TensorError::dim("conv2d", format!("x {x:?}, w {w:?}")));
    }
    if x[1] != w[1] {
        return Err(TensorError::dim("conv2d", format!("input channels {} vs weight {}", x[1], w[1])));
    }
    if stride == 0 || x[2] + 2 * pad < w[2] || x[3] + 2 * pad < w[3] {
        return Err(TensorError::dim("conv2d", format!("kernel {w:?} larger than padded input {x:?}")));
    }
    let g = ConvGeom { channels: x[1], height: x[2], width: x[3], kh: w[2], kw: w[3], stride, pad };
    Ok((g, x[0], w[0]))
}

fn tconv_geom(x: &[usize], w: &[usize], stride: usize, pad: usize) -> Result<(ConvGeom, usize, usize)> {
    if x.len() != 4 || w.len() != 4 || x[1] != w[0] {
        return Err(TensorError::dim("conv_transpose2d", format!("x {x:?}, w {w:?}")));
    }
    if stride == 0 {
        return Err(TensorError::Unsupported("conv_transpose2d with stride 0".into()));
    }
    let g = kernels::transposed_geom(w[1], x[2], x[3], w[2], w[3], stride, pad).ok_or_else(|| {
        TensorError::Unsupported(format!(
            "conv_transpose2d kernel {:?} stride {stride} pad {pad} on {x:?}",
            &w[2..]
        ))
    })?;
    Ok((g, x[0], x[1]))
}

fn conv_bias<T: Element>(
    op: &'static str,
    b: Option<Var<'_, T>>,
    out_ch: usize,
) -> Result<Option<std::sync::Arc<Tensor<T>>>> {
    match b {
        None => Ok(None),
        Some(b) => {
            let v = b.value();
            if v.shape() != [out_ch] {
                return Err(TensorError::dim(op, format!("bias {:?} for {out_ch} channels", v.shape())));
            }
            Ok(Some(v))
        }
    }
}

/// `[N,C,P]` -> `[C, N*P]`.
fn channel_rows<T: Element>(x: &[T], n: usize, c: usize, plane: usize) -> Vec<T> {
    let mut rows = Vec::with_capacity(x.len());
    for ch in 0..c {
        for s in 0..n {
            rows.extend_from_slice(&x[(s * c + ch) * plane..(s * c + ch + 1) * plane]);
        }
    }
    rows
}

fn unary_fwd<T: Element>(kind: UnKind, v: T) -> T {
    match kind {
        UnKind::Abs => v.abs(),
        UnKind::Relu => v.max(T::zero()),
        UnKind::Gelu => kernels::gelu(v),
        UnKind::Sigmoid => T::one() / (T::one() + (-v).exp()),
        UnKind::Log2 => v.log2(),
        UnKind::Clamp(lo, hi) => v.max(T::of(lo)).min(T::of(hi)),
        UnKind::Affine(s, b) => v * T::of(s) + T::of(b),
    }
}

fn unary_grad<T: Element>(kind: UnKind, x: T, y: T) -> T {
    match kind {
        UnKind::Abs => {
            if x > T::zero() {
                T::one()
            } else if x < T::zero() {
                -T::one()
            } else {
                T::zero()
            }
        }
        UnKind::Relu => {
            if x > T::zero() {
                T::one()
            } else {
                T::zero()
            }
        }
        UnKind::Gelu => kernels::gelu_grad(x),
        UnKind::Sigmoid => y * (T::one() - y),
        UnKind::Log2 => T::one() / (x * T::of(std::f64::consts::LN_2)),
        UnKind::Clamp(lo, hi) => {
            if x >= T::of(lo) && x <= T::of(hi) {
                T::one()
            } else {
                T::zero()
            }
        }
        UnKind::Affine(s, _) => T::of(s),
    }
}

type Grads<T> = [Option<Vec<T>>];

fn needs<T>(nodes: &[Node<T>], id: usize) -> bool {
    nodes[id].requires_grad
}

fn accumulate<T: Element>(nodes: &[Node<T>], grads: &mut Grads<T>, id: usize, delta: Vec<T>) {
    if !nodes[id].requires_grad {
        return;
    }
    match &mut grads[id] {
        Some(g) => g.iter_mut().zip(delta).for_each(|(a, b)| *a += b),
        slot @ None => *slot = Some(delta),
    }
}

/// Reduces a full-size gradient onto an operand broadcast with period `n`.
fn reduce_to<T: Element>(full: Vec<T>, n: usize) -> Vec<T> {
    if full.len() == n {
        return full;
    }
    let mut out = vec![T::zero(); n];
    for (i, v) in full.into_iter().enumerate() {
        out[i % n] += v;
    }
    out
}

pub(crate) fn backward<T: Element>(
    op: &Op,
    nodes: &[Node<T>],
    out: &Tensor<T>,
    g: &[T],
    grads: &mut Grads<T>,
) {
    let val = |id: usize| nodes[id].value.clone();
    match op {
        Op::Leaf => {}
        Op::Binary { kind, a, b, a_n, b_n } => {
            let (av, bv) = (val(*a), val(*b));
            let (ad, bd) = (av.data(), bv.data());
            if needs(nodes, *a) {
                let full: Vec<T> = g
                    .iter()
                    .enumerate()
                    .map(|(i, &gi)| match kind {
                        BinKind::Add | BinKind::Sub => gi,
                        BinKind::Mul => gi * bd[i % b_n],
                        BinKind::Div => gi / bd[i % b_n],
                    })
                    .collect();
                accumulate(nodes, grads, *a, reduce_to(full, *a_n));
            }
            if needs(nodes, *b) {
                let full: Vec<T> = g
                    .iter()
                    .enumerate()
                    .map(|(i, &gi)| match kind {
                        BinKind::Add => gi,
                        BinKind::Sub => -gi,
                        BinKind::Mul => gi * ad[i % a_n],
                        BinKind::Div => {
                            let y = bd[i % b_n];
                            -gi * ad[i % a_n] / (y * y)
                        }
                    })
                    .collect();
                accumulate(nodes, grads, *b, reduce_to(full, *b_n));
            }
        }
        Op::Unary { kind, x } => {
            let xv = val(*x);
            let d = g
                .iter()
                .zip(xv.data())
                .zip(out.data())
                .map(|((&gi, &xi), &yi)| gi * unary_grad(*kind, xi, yi))
                .collect();
            accumulate(nodes, grads, *x, d);
        }
        Op::Sum { x, scale } => {
            let n = nodes[*x].value.numel();
            accumulate(nodes, grads, *x, vec![g[0] * T::of(*scale); n]);
        }
        Op::Concat { inputs, inner, outer } => {
            let total: usize = inner.iter().sum();
            let mut offset = 0;
            for (&id, &len) in inputs.iter().zip(inner) {
                if needs(nodes, id) {
                    let mut d = Vec::with_capacity(outer * len);
                    for o in 0..*outer {
                        d.extend_from_slice(&g[o * total + offset..o * total + offset + len]);
                    }
                    accumulate(nodes, grads, id, d);
                }
                offset += len;
            }
        }
        Op::Matmul { a, b, batch, m, k, n, shared_b } => {
            let (m, k, n) = (*m, *k, *n);
            let (av, bv) = (val(*a), val(*b));
            if needs(nodes, *a) {
                let mut da = vec![T::zero(); batch * m * k];
                for bi in 0..*batch {
                    let bs = if *shared_b { 0 } else { bi };
                    gemm(
                        m,
                        n,
                        k,
                        &g[bi * m * n..(bi + 1) * m * n],
                        false,
                        &bv.data()[bs * k * n..(bs + 1) * k * n],
                        true,
                        &mut da[bi * m * k..(bi + 1) * m * k],
                        false,
                    );
                }
                accumulate(nodes, grads, *a, da);
            }
            if needs(nodes, *b) {
                let mut db = vec![T::zero(); bv.numel()];
                for bi in 0..*batch {
                    let bs = if *shared_b { 0 } else { bi };
                    gemm(
                        k,
                        m,
                        n,
                        &av.data()[bi * m * k..(bi + 1) * m * k],
                        true,
                        &g[bi * m * n..(bi + 1) * m * n],
                        false,
                        &mut db[bs * k * n..(bs + 1) * k * n],
                        true,
                    );
                }
                accumulate(nodes, grads, *b, db);
            }
        }
        Op::Linear { x, w, b, k, n } => {
            let (k, n) = (*k, *n);
            let (xv, wv) = (val(*x), val(*w));
            let m = xv.numel() / k;
            if needs(nodes, *x) {
                let mut dx = vec![T::zero(); m * k];
                gemm(m, n, k, g, false, wv.data(), true, &mut dx, false);
                accumulate(nodes, grads, *x, dx);
            }
            if needs(nodes, *w) {
                let mut dw = vec![T::zero(); k * n];
                gemm(k, m, n, xv.data(), true, g, false, &mut dw, false);
                accumulate(nodes, grads, *w, dw);
            }
            if let Some(b) = b {
                if needs(nodes, *b) {
                    let mut db = vec![T::zero(); n];
                    for row in g.chunks(n) {
                        db.iter_mut().zip(row).for_each(|(d, &r)| *d += r);
                    }
                    accumulate(nodes, grads, *b, db);
                }
            }
        }
        Op::Reshape { x } => accumulate(nodes, grads, *x, g.to_vec()),
        Op::Permute { x, perm } => {
            let d = kernels::permute(g, out.shape(), &kernels::inverse_perm(perm));
            accumulate(nodes, grads, *x, d);
        }
        Op::Upsample2x { x } => {
            let s = nodes[*x].value.shape().to_vec();
            let (h, w) = (s[s.len() - 2], s[s.len() - 1]);
            let planes = numel(&s) / (h * w);
            accumulate(nodes, grads, *x, kernels::upsample2x_backward(g, planes, h, w));
        }
        Op::Conv2d { x, w, b, stride, pad } => {
            let (xv, wv) = (val(*x), val(*w));
            let (geom, n, o) = conv_geom(xv.shape(), wv.shape(), *stride, *pad).expect("validated");
            let need_b = b.is_some_and(|b| needs(nodes, b));
            let r = kernels::conv2d_backward(
                xv.data(),
                n,
                &geom,
                wv.data(),
                o,
                g,
                (needs(nodes, *x), needs(nodes, *w), need_b),
            );
            conv_accumulate(nodes, grads, (*x, *w, *b), r);
        }
        Op::ConvTranspose2d { x, w, b, stride, pad } => {
            let (xv, wv) = (val(*x), val(*w));
            let (geom, n, c) = tconv_geom(xv.shape(), wv.shape(), *stride, *pad).expect("validated");
            let need_b = b.is_some_and(|b| needs(nodes, b));
            let r = kernels::conv_transpose2d_backward(
                xv.data(),
                n,
                c,
                &geom,
                wv.data(),
                g,
                (needs(nodes, *x), needs(nodes, *w), need_b),
            );
            conv_accumulate(nodes, grads, (*x, *w, *b), r);
        }
        Op::LayerNorm { x, gamma, beta, eps } => {
            let (xv, gv) = (val(*x), val(*gamma));
            let d = gv.numel();
            let (xhat, rstd) = kernels::normalize_rows(xv.data(), d, T::of(*eps));
            if needs(nodes, *gamma) || needs(nodes, *beta) {
                let mut dg = vec![T::zero(); d];
                let mut db = vec![T::zero(); d];
                for (grow, xrow) in g.chunks(d).zip(xhat.chunks(d)) {
                    for j in 0..d {
                        dg[j] += grow[j] * xrow[j];
                        db[j] += grow[j];
                    }
                }
                accumulate(nodes, grads, *gamma, dg);
                accumulate(nodes, grads, *beta, db);
            }
            if needs(nodes, *x) {
                let mut dx = vec![T::zero(); xv.numel()];
                let mut dxhat = vec![T::zero(); d];
                for (r, (grow, xrow)) in g.chunks(d).zip(xhat.chunks(d)).enumerate() {
                    for j in 0..d {
                        dxhat[j] = grow[j] * gv.data()[j];
                    }
                    kernels::normalize_backward(xrow, &dxhat, rstd[r], &mut dx[r * d..(r + 1) * d]);
                }
                accumulate(nodes, grads, *x, dx);
            }
        }
        Op::BatchNorm2d { x, gamma, beta, eps } => {
            let (xv, gv) = (val(*x), val(*gamma));
            let s = xv.shape();
            let (n, c, plane) = (s[0], s[1], s[2] * s[3]);
            let m = n * plane;
            let rows = channel_rows(xv.data(), n, c, plane);
            let grows = channel_rows(g, n, c, plane);
            let (xhat, rstd) = kernels::normalize_rows(&rows, m, T::of(*eps));
            if needs(nodes, *gamma) || needs(nodes, *beta) {
                let mut dg = vec![T::zero(); c];
                let mut db = vec![T::zero(); c];
                for ch in 0..c {
                    let gr = &grows[ch * m..(ch + 1) * m];
                    let xr = &xhat[ch * m..(ch + 1) * m];
                    dg[ch] = gr.iter().zip(xr).map(|(&a, &b)| a * b).sum();
                    db[ch] = gr.iter().copied().sum();
                }
                accumulate(nodes, grads, *gamma, dg);
                accumulate(nodes, grads, *beta, db);
            }
            if needs(nodes, *x) {
                let mut drows = vec![T::zero(); rows.len()];
                for ch in 0..c {
                    let gam = gv.data()[ch];
                    let dxhat: Vec<T> = grows[ch * m..(ch + 1) * m].iter().map(|&v| v * gam).collect();
                    kernels::normalize_backward(
                        &xhat[ch * m..(ch + 1) * m],
                        &dxhat,
                        rstd[ch],
                        &mut drows[ch * m..(ch + 1) * m],
                    );
                }
                let mut dx = vec![T::zero(); xv.numel()];
                for ch in 0..c {
                    for s_ in 0..n {
                        dx[(s_ * c + ch) * plane..(s_ * c + ch + 1) * plane].copy_from_slice(
                            &drows[ch * m + s_ * plane..ch * m + (s_ + 1) * plane],
                        );
                    }
                }
                accumulate(nodes, grads, *x, dx);
            }
        }
        Op::Softmax { x } => {
            let k = *out.shape().last().unwrap();
            let mut dx = vec![T::zero(); out.numel()];
            for ((grow, yrow), drow) in g.chunks(k).zip(out.data().chunks(k)).zip(dx.chunks_mut(k)) {
                let dot: T = grow.iter().zip(yrow).map(|(&a, &b)| a * b).sum();
                for ((d, &gi), &yi) in drow.iter_mut().zip(grow).zip(yrow) {
                    *d = yi * (gi - dot);
                }
            }
            accumulate(nodes, grads, *x, dx);
        }
        Op::AvgPool2d { x, k } => {
            let s = nodes[*x].value.shape().to_vec();
            let (h, w) = (s[2], s[3]);
            let (oh, ow) = (h / k, w / k);
            let inv = T::of(1.0 / (k * k) as f64);
            let planes = s[0] * s[1];
            let mut dx = vec![T::zero(); numel(&s)];
            for p in 0..planes {
                for y in 0..h {
                    for xx in 0..w {
                        dx[p * h * w + y * w + xx] = g[p * oh * ow + (y / k) * ow + xx / k] * inv;
                    }
                }
            }
            accumulate(nodes, grads, *x, dx);
        }
    }
}

fn conv_accumulate<T: Element>(
    nodes: &[Node<T>],
    grads: &mut Grads<T>,
    (x, w, b): (usize, usize, Option<usize>),
    r: kernels::ConvGrads<T>,
) {
    if let Some(dx) = r.dx {
        accumulate(nodes, grads, x, dx);
    }
    if let Some(dw) = r.dw {
        accumulate(nodes, grads, w, dw);
    }
    if let (Some(b), Some(db)) = (b, r.db) {
        accumulate(nodes, grads, b, db);
    }
}
