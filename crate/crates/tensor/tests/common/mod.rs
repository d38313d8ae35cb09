#![allow(dead_code)]

use cvit_tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn randn(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(-1.0..1.0))
}

pub fn randn32(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f32> {
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(-1.0f32..1.0))
}

/// Direct nested-loop convolution.
pub fn conv_oracle(x: &Tensor<f64>, w: &Tensor<f64>, b: &[f64], stride: usize, pad: usize) -> Tensor<f64> {
    let (n, c, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (o, kh, kw) = (w.shape()[0], w.shape()[2], w.shape()[3]);
    let ho = (h + 2 * pad - kh) / stride + 1;
    let wo = (wd + 2 * pad - kw) / stride + 1;
    let mut out = vec![0.0; n * o * ho * wo];
    for s in 0..n {
        for oc in 0..o {
            for y in 0..ho {
                for xx in 0..wo {
                    let mut acc = b[oc];
                    for ic in 0..c {
                        for i in 0..kh {
                            for j in 0..kw {
                                let iy = (y * stride + i) as isize - pad as isize;
                                let ix = (xx * stride + j) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                    continue;
                                }
                                acc += x.data()[((s * c + ic) * h + iy as usize) * wd + ix as usize]
                                    * w.data()[((oc * c + ic) * kh + i) * kw + j];
                            }
                        }
                    }
                    out[((s * o + oc) * ho + y) * wo + xx] = acc;
                }
            }
        }
    }
    Tensor::new(vec![n, o, ho, wo], out).unwrap()
}

/// Transposed convolution as an ordinary convolution over a zero-stuffed,
/// re-padded input with the spatially flipped, channel-swapped kernel.
pub fn deconv_oracle(x: &Tensor<f64>, w: &Tensor<f64>, b: &[f64], stride: usize, pad: usize) -> Tensor<f64> {
    let (n, c, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (o, kh, kw) = (w.shape()[1], w.shape()[2], w.shape()[3]);
    let (ph, pw) = (kh - 1 - pad, kw - 1 - pad);
    let sh = (h - 1) * stride + 1 + 2 * ph;
    let sw = (wd - 1) * stride + 1 + 2 * pw;
    let mut stuffed = vec![0.0; n * c * sh * sw];
    for s in 0..n {
        for ic in 0..c {
            for y in 0..h {
                for xx in 0..wd {
                    stuffed[((s * c + ic) * sh + ph + y * stride) * sw + pw + xx * stride] =
                        x.data()[((s * c + ic) * h + y) * wd + xx];
                }
            }
        }
    }
    let stuffed = Tensor::new(vec![n, c, sh, sw], stuffed).unwrap();
    let mut flipped = vec![0.0; o * c * kh * kw];
    for ic in 0..c {
        for oc in 0..o {
            for i in 0..kh {
                for j in 0..kw {
                    flipped[((oc * c + ic) * kh + (kh - 1 - i)) * kw + (kw - 1 - j)] =
                        w.data()[((ic * o + oc) * kh + i) * kw + j];
                }
            }
        }
    }
    let flipped = Tensor::new(vec![o, c, kh, kw], flipped).unwrap();
    conv_oracle(&stuffed, &flipped, b, 1, 0)
}
