//! Slice-level numeric kernels. Shapes are validated by the callers in `ops`.

use crate::element::{gemm, Element};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn out_h(&self) -> usize {
        (self.height + 2 * self.pad - self.kh) / self.stride + 1
    }

    pub fn out_w(&self) -> usize {
        (self.width + 2 * self.pad - self.kw) / self.stride + 1
    }

    pub fn col_rows(&self) -> usize {
        self.channels * self.kh * self.kw
    }

    pub fn col_cols(&self) -> usize {
        self.out_h() * self.out_w()
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }
}

/// Unfolds one `[C,H,W]` image into `[C*kh*kw, Ho*Wo]` patch columns.
pub fn im2col<T: Element>(img: &[T], g: &ConvGeom, cols: &mut [T]) {
    let (ho, wo) = (g.out_h(), g.out_w());
    let hw = ho * wo;
    for c in 0..g.channels {
        let plane = &img[c * g.height * g.width..(c + 1) * g.height * g.width];
        for i in 0..g.kh {
            for j in 0..g.kw {
                let row = (c * g.kh + i) * g.kw + j;
                let dst = &mut cols[row * hw..(row + 1) * hw];
                for oh in 0..ho {
                    let ih = (oh * g.stride + i) as isize - g.pad as isize;
                    let line = &mut dst[oh * wo..(oh + 1) * wo];
                    if ih < 0 || ih >= g.height as isize {
                        line.iter_mut().for_each(|v| *v = T::zero());
                        continue;
                    }
                    let src = &plane[ih as usize * g.width..(ih as usize + 1) * g.width];
                    for (ow, v) in line.iter_mut().enumerate() {
                        let iw = (ow * g.stride + j) as isize - g.pad as isize;
                        *v = if iw < 0 || iw >= g.width as isize {
                            T::zero()
                        } else {
                            src[iw as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters patch columns back, accumulating into `img`.
pub fn col2im<T: Element>(cols: &[T], g: &ConvGeom, img: &mut [T]) {
    let (ho, wo) = (g.out_h(), g.out_w());
    let hw = ho * wo;
    for c in 0..g.channels {
        let plane = &mut img[c * g.height * g.width..(c + 1) * g.height * g.width];
        for i in 0..g.kh {
            for j in 0..g.kw {
                let row = (c * g.kh + i) * g.kw + j;
                let src = &cols[row * hw..(row + 1) * hw];
                for oh in 0..ho {
                    let ih = (oh * g.stride + i) as isize - g.pad as isize;
                    if ih < 0 || ih >= g.height as isize {
                        continue;
                    }
                    let dst = &mut plane[ih as usize * g.width..(ih as usize + 1) * g.width];
                    for ow in 0..wo {
                        let iw = (ow * g.stride + j) as isize - g.pad as isize;
                        if iw >= 0 && iw < g.width as isize {
                            dst[iw as usize] += src[oh * wo + ow];
                        }
                    }
                }
            }
        }
    }
}

/// `x: [N,C,H,W]`, `w: [O,C,kh,kw]`, `b: [O]` -> `[N,O,Ho,Wo]`.
pub fn conv2d_forward<T: Element>(
    x: &[T],
    n: usize,
    g: &ConvGeom,
    w: &[T],
    b: Option<&[T]>,
    out_ch: usize,
) -> Vec<T> {
    let hw = g.col_cols();
    let in_sz = g.channels * g.height * g.width;
    let mut out = vec![T::zero(); n * out_ch * hw];
    let mut cols = if g.is_pointwise() { Vec::new() } else { vec![T::zero(); g.col_rows() * hw] };
    for s in 0..n {
        let xs = &x[s * in_sz..(s + 1) * in_sz];
        let col_ref: &[T] = if g.is_pointwise() {
            xs
        } else {
            im2col(xs, g, &mut cols);
            &cols
        };
        let os = &mut out[s * out_ch * hw..(s + 1) * out_ch * hw];
        if let Some(b) = b {
            for (o, chunk) in os.chunks_mut(hw).enumerate() {
                chunk.iter_mut().for_each(|v| *v = b[o]);
            }
        }
        gemm(out_ch, g.col_rows(), hw, w, false, col_ref, false, os, b.is_some());
    }
    out
}

pub struct ConvGrads<T> {
    pub dx: Option<Vec<T>>,
    pub dw: Option<Vec<T>>,
    pub db: Option<Vec<T>>,
}

#[allow(clippy::too_many_arguments)]
pub fn conv2d_backward<T: Element>(
    x: &[T],
    n: usize,
    g: &ConvGeom,
    w: &[T],
    out_ch: usize,
    dy: &[T],
    need: (bool, bool, bool),
) -> ConvGrads<T> {
    let hw = g.col_cols();
    let rows = g.col_rows();
    let in_sz = g.channels * g.height * g.width;
    let mut dx = need.0.then(|| vec![T::zero(); n * in_sz]);
    let mut dw = need.1.then(|| vec![T::zero(); out_ch * rows]);
    let mut db = need.2.then(|| vec![T::zero(); out_ch]);
    let mut cols = vec![T::zero(); if g.is_pointwise() { 0 } else { rows * hw }];
    let mut dcols = vec![T::zero(); if dx.is_some() && !g.is_pointwise() { rows * hw } else { 0 }];
    for s in 0..n {
        let dys = &dy[s * out_ch * hw..(s + 1) * out_ch * hw];
        if let Some(db) = db.as_mut() {
            for (o, chunk) in dys.chunks(hw).enumerate() {
                db[o] += chunk.iter().copied().sum::<T>();
            }
        }
        if let Some(dw) = dw.as_mut() {
            let xs = &x[s * in_sz..(s + 1) * in_sz];
            let col_ref: &[T] = if g.is_pointwise() {
                xs
            } else {
                im2col(xs, g, &mut cols);
                &cols
            };
            gemm(out_ch, hw, rows, dys, false, col_ref, true, dw, true);
        }
        if let Some(dx) = dx.as_mut() {
            let dxs = &mut dx[s * in_sz..(s + 1) * in_sz];
            if g.is_pointwise() {
                gemm(rows, out_ch, hw, w, true, dys, false, dxs, true);
            } else {
                gemm(rows, out_ch, hw, w, true, dys, false, &mut dcols, false);
                col2im(&dcols, g, dxs);
            }
        }
    }
    ConvGrads { dx, dw, db }
}

/// Geometry of a transposed convolution expressed through the forward
/// convolution it is the adjoint of: the output image is the "conv input".
pub fn transposed_geom(
    out_ch: usize,
    in_h: usize,
    in_w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
) -> Option<ConvGeom> {
    let oh = ((in_h - 1) * stride + kh).checked_sub(2 * pad)?;
    let ow = ((in_w - 1) * stride + kw).checked_sub(2 * pad)?;
    if oh == 0 || ow == 0 {
        return None;
    }
    let g = ConvGeom { channels: out_ch, height: oh, width: ow, kh, kw, stride, pad };
    (g.out_h() == in_h && g.out_w() == in_w).then_some(g)
}

/// `x: [N,C,H,W]`, `w: [C,O,kh,kw]` -> `[N,O,Ho,Wo]`; `g` from [`transposed_geom`].
pub fn conv_transpose2d_forward<T: Element>(
    x: &[T],
    n: usize,
    in_ch: usize,
    g: &ConvGeom,
    w: &[T],
    b: Option<&[T]>,
) -> Vec<T> {
    let hw = g.col_cols();
    let rows = g.col_rows();
    let out_sz = g.channels * g.height * g.width;
    let mut out = vec![T::zero(); n * out_sz];
    let mut cols = vec![T::zero(); rows * hw];
    for s in 0..n {
        let xs = &x[s * in_ch * hw..(s + 1) * in_ch * hw];
        gemm(rows, in_ch, hw, w, true, xs, false, &mut cols, false);
        let os = &mut out[s * out_sz..(s + 1) * out_sz];
        col2im(&cols, g, os);
        if let Some(b) = b {
            let plane = g.height * g.width;
            for (o, chunk) in os.chunks_mut(plane).enumerate() {
                chunk.iter_mut().for_each(|v| *v += b[o]);
            }
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
pub fn conv_transpose2d_backward<T: Element>(
    x: &[T],
    n: usize,
    in_ch: usize,
    g: &ConvGeom,
    w: &[T],
    dy: &[T],
    need: (bool, bool, bool),
) -> ConvGrads<T> {
    let hw = g.col_cols();
    let rows = g.col_rows();
    let out_sz = g.channels * g.height * g.width;
    let mut dx = need.0.then(|| vec![T::zero(); n * in_ch * hw]);
    let mut dw = need.1.then(|| vec![T::zero(); in_ch * rows]);
    let mut db = need.2.then(|| vec![T::zero(); g.channels]);
    let mut dcols = vec![T::zero(); rows * hw];
    let plane = g.height * g.width;
    for s in 0..n {
        let dys = &dy[s * out_sz..(s + 1) * out_sz];
        if let Some(db) = db.as_mut() {
            for (o, chunk) in dys.chunks(plane).enumerate() {
                db[o] += chunk.iter().copied().sum::<T>();
            }
        }
        if dx.is_none() && dw.is_none() {
            continue;
        }
        im2col(dys, g, &mut dcols);
        if let Some(dx) = dx.as_mut() {
            gemm(in_ch, rows, hw, w, false, &dcols, false, &mut dx[s * in_ch * hw..(s + 1) * in_ch * hw], false);
        }
        if let Some(dw) = dw.as_mut() {
            let xs = &x[s * in_ch * hw..(s + 1) * in_ch * hw];
            gemm(in_ch, hw, rows, xs, false, &dcols, true, dw, true);
        }
    }
    ConvGrads { dx, dw, db }
}

/// Source taps for 2x bilinear upsampling along one axis (half-pixel centers,
/// edge-clamped): `(lo, hi, weight_of_hi)` per output index.
pub fn bilinear_taps(len: usize) -> Vec<(usize, usize, f64)> {
    (0..2 * len)
        .map(|o| {
            let src = ((o as f64 + 0.5) / 2.0 - 0.5).max(0.0);
            let lo = (src.floor() as usize).min(len - 1);
            let hi = (lo + 1).min(len - 1);
            (lo, hi, src - lo as f64)
        })
        .collect()
}

pub fn upsample2x_forward<T: Element>(x: &[T], planes: usize, h: usize, w: usize) -> Vec<T> {
    let th = bilinear_taps(h);
    let tw = bilinear_taps(w);
    let (oh, ow) = (2 * h, 2 * w);
    let mut out = vec![T::zero(); planes * oh * ow];
    for p in 0..planes {
        let src = &x[p * h * w..(p + 1) * h * w];
        let dst = &mut out[p * oh * ow..(p + 1) * oh * ow];
        for (y, &(y0, y1, fy)) in th.iter().enumerate() {
            let fy = T::of(fy);
            for (xo, &(x0, x1, fx)) in tw.iter().enumerate() {
                let fx = T::of(fx);
                let top = src[y0 * w + x0] * (T::one() - fx) + src[y0 * w + x1] * fx;
                let bot = src[y1 * w + x0] * (T::one() - fx) + src[y1 * w + x1] * fx;
                dst[y * ow + xo] = top * (T::one() - fy) + bot * fy;
            }
        }
    }
    out
}

pub fn upsample2x_backward<T: Element>(dy: &[T], planes: usize, h: usize, w: usize) -> Vec<T> {
    let th = bilinear_taps(h);
    let tw = bilinear_taps(w);
    let (oh, ow) = (2 * h, 2 * w);
    let mut dx = vec![T::zero(); planes * h * w];
    for p in 0..planes {
        let g = &dy[p * oh * ow..(p + 1) * oh * ow];
        let d = &mut dx[p * h * w..(p + 1) * h * w];
        for (y, &(y0, y1, fy)) in th.iter().enumerate() {
            let fy = T::of(fy);
            for (xo, &(x0, x1, fx)) in tw.iter().enumerate() {
                let fx = T::of(fx);
                let v = g[y * ow + xo];
                d[y0 * w + x0] += v * (T::one() - fy) * (T::one() - fx);
                d[y0 * w + x1] += v * (T::one() - fy) * fx;
                d[y1 * w + x0] += v * fy * (T::one() - fx);
                d[y1 * w + x1] += v * fy * fx;
            }
        }
    }
    dx
}

/// Normalizes each contiguous row of length `d`; returns `(xhat, rstd)`.
pub fn normalize_rows<T: Element>(x: &[T], d: usize, eps: T) -> (Vec<T>, Vec<T>) {
    let rows = x.len() / d;
    let mut xhat = vec![T::zero(); x.len()];
    let mut rstd = vec![T::zero(); rows];
    let inv_d = T::one() / T::of(d as f64);
    for r in 0..rows {
        let row = &x[r * d..(r + 1) * d];
        let mean = row.iter().copied().sum::<T>() * inv_d;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_d;
        let rs = T::one() / (var + eps).sqrt();
        rstd[r] = rs;
        for (o, &v) in xhat[r * d..(r + 1) * d].iter_mut().zip(row) {
            *o = (v - mean) * rs;
        }
    }
    (xhat, rstd)
}

/// Gradient through `xhat = (x - mean) * rstd` for one group of `m` values
/// given `dxhat`: `dx = rstd/m * (m*dxhat - sum(dxhat) - xhat*sum(dxhat*xhat))`.
pub fn normalize_backward<T: Element>(xhat: &[T], dxhat: &[T], rstd: T, dx: &mut [T]) {
    let m = T::of(xhat.len() as f64);
    let s1 = dxhat.iter().copied().sum::<T>();
    let s2 = dxhat.iter().zip(xhat).map(|(&a, &b)| a * b).sum::<T>();
    let k = rstd / m;
    for ((o, &dh), &xh) in dx.iter_mut().zip(dxhat).zip(xhat) {
        *o += k * (m * dh - s1 - xh * s2);
    }
}

pub fn softmax_rows<T: Element>(x: &[T], k: usize) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    for (src, dst) in x.chunks(k).zip(out.chunks_mut(k)) {
        let max = src.iter().copied().fold(T::neg_infinity(), T::max);
        let mut sum = T::zero();
        for (d, &s) in dst.iter_mut().zip(src) {
            *d = (s - max).exp();
            sum += *d;
        }
        let inv = T::one() / sum;
        dst.iter_mut().for_each(|d| *d *= inv);
    }
    out
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

pub fn gelu<T: Element>(x: T) -> T {
    let c = T::of(GELU_C);
    let a = T::of(GELU_A);
    let half = T::of(0.5);
    half * x * (T::one() + (c * (x + a * x * x * x)).tanh())
}

pub fn gelu_grad<T: Element>(x: T) -> T {
    let c = T::of(GELU_C);
    let a = T::of(GELU_A);
    let half = T::of(0.5);
    let t = (c * (x + a * x * x * x)).tanh();
    half * (T::one() + t) + half * x * (T::one() - t * t) * c * (T::one() + T::of(3.0) * a * x * x)
}

/// Row-major strides for `shape`.
pub fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Materializes `x` with axes reordered so that output axis `i` is input axis `perm[i]`.
pub fn permute<T: Element>(x: &[T], shape: &[usize], perm: &[usize]) -> Vec<T> {
    let in_strides = strides(shape);
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let src_strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let nd = out_shape.len();
    let mut out = Vec::with_capacity(x.len());
    if nd == 0 {
        out.extend_from_slice(x);
        return out;
    }
    let mut idx = vec![0usize; nd];
    let inner = out_shape[nd - 1];
    let inner_stride = src_strides[nd - 1];
    loop {
        let base: usize = idx.iter().zip(&src_strides).map(|(i, s)| i * s).sum();
        for i in 0..inner {
            out.push(x[base + i * inner_stride]);
        }
        // advance all but the innermost axis
        let mut ax = nd - 1;
        loop {
            if ax == 0 {
                return out;
            }
            ax -= 1;
            idx[ax] += 1;
            if idx[ax] < out_shape[ax] {
                break;
            }
            idx[ax] = 0;
        }
    }
}

pub fn inverse_perm(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        inv[p] = i;
    }
    inv
}
