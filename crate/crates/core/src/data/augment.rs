use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::sample::{Mask, Rgb, SamplePair};
use super::derive_seed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentConfig {
    pub hflip: bool,
    pub vflip: bool,
    pub crop: bool,
    /// Crop side as a fraction of the image side, drawn uniformly from `[crop_min, 1]`.
    pub crop_min: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig { hflip: true, vflip: true, crop: true, crop_min: 0.8 }
    }
}

impl AugmentConfig {
    pub fn none() -> Self {
        AugmentConfig { hflip: false, vflip: false, crop: false, crop_min: 1.0 }
    }

    pub fn is_identity(&self) -> bool {
        !self.hflip && !self.vflip && !self.crop
    }
}

/// RNG for one sample in one epoch.
pub fn augment_rng(seed: u64, epoch: usize, id: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(&[b"augment", &seed.to_le_bytes(), &(epoch as u64).to_le_bytes(), id.as_bytes()]))
}

/// A geometric map shared by both images and the mask.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Transform {
    pub hflip: bool,
    pub vflip: bool,
    /// `(y0, x0, h, w)` of the crop window.
    pub crop: (usize, usize, usize, usize),
}

impl Transform {
    pub fn identity(height: usize, width: usize) -> Self {
        Transform { hflip: false, vflip: false, crop: (0, 0, height, width) }
    }

    pub fn sample(cfg: &AugmentConfig, height: usize, width: usize, rng: &mut impl Rng) -> Self {
        let hflip = cfg.hflip && rng.random_bool(0.5);
        let vflip = cfg.vflip && rng.random_bool(0.5);
        let mut crop = (0, 0, height, width);
        if cfg.crop && cfg.crop_min < 1.0 {
            let s = rng.random_range(cfg.crop_min..=1.0);
            let ch = ((height as f64 * s).round() as usize).clamp(1, height);
            let cw = ((width as f64 * s).round() as usize).clamp(1, width);
            let y0 = rng.random_range(0..=height - ch);
            let x0 = rng.random_range(0..=width - cw);
            crop = (y0, x0, ch, cw);
        }
        Transform { hflip, vflip, crop }
    }

    /// Source coordinate (continuous, pixel-centre convention) for output pixel `(y, x)`.
    fn source(&self, y: usize, x: usize, height: usize, width: usize) -> (f64, f64) {
        let (y0, x0, ch, cw) = self.crop;
        let y = if self.vflip { height - 1 - y } else { y };
        let x = if self.hflip { width - 1 - x } else { x };
        let sy = (y as f64 + 0.5) * ch as f64 / height as f64 - 0.5 + y0 as f64;
        let sx = (x as f64 + 0.5) * cw as f64 / width as f64 - 0.5 + x0 as f64;
        (sy, sx)
    }

    /// Bilinear resampling, clamped to the crop window.
    pub fn apply_rgb(&self, img: &Rgb) -> Rgb {
        let (h, w) = (img.height(), img.width());
        let (y0, x0, ch, cw) = self.crop;
        let tap = |s: f64, lo: usize, n: usize| {
            let s = s.clamp(lo as f64, (lo + n - 1) as f64);
            let i = (s.floor() as usize).min(lo + n - 1);
            let j = (i + 1).min(lo + n - 1);
            (i, j, (s - i as f64) as f32)
        };
        let src = img.data();
        let mut out = Vec::with_capacity(h * w * 3);
        for y in 0..h {
            for x in 0..w {
                let (sy, sx) = self.source(y, x, h, w);
                let (ya, yb, fy) = tap(sy, y0, ch);
                let (xa, xb, fx) = tap(sx, x0, cw);
                for c in 0..3 {
                    let p = |yy: usize, xx: usize| src[(yy * w + xx) * 3 + c];
                    let top = p(ya, xa) * (1.0 - fx) + p(ya, xb) * fx;
                    let bot = p(yb, xa) * (1.0 - fx) + p(yb, xb) * fx;
                    out.push(top * (1.0 - fy) + bot * fy);
                }
            }
        }
        Rgb::new(h, w, out).expect("same dimensions")
    }

    /// Nearest-neighbour resampling, so the mask stays binary.
    pub fn apply_mask(&self, mask: &Mask) -> Mask {
        let (h, w) = (mask.height(), mask.width());
        let (y0, x0, ch, cw) = self.crop;
        let mut out = Mask::zeros(h, w);
        for y in 0..h {
            for x in 0..w {
                let (sy, sx) = self.source(y, x, h, w);
                let iy = ((sy + 0.5).floor().max(y0 as f64) as usize).min(y0 + ch - 1);
                let ix = ((sx + 0.5).floor().max(x0 as f64) as usize).min(x0 + cw - 1);
                out.set(y, x, mask.get(iy, ix) == 1);
            }
        }
        out
    }

    pub fn apply(&self, s: &SamplePair) -> SamplePair {
        SamplePair {
            id: s.id.clone(),
            img_a: self.apply_rgb(&s.img_a),
            img_b: self.apply_rgb(&s.img_b),
            mask: self.apply_mask(&s.mask),
        }
    }
}

/// Joint random flip and scale-crop of both images and the mask.
pub fn augment(s: &SamplePair, cfg: &AugmentConfig, rng: &mut impl Rng) -> SamplePair {
    if cfg.is_identity() {
        return s.clone();
    }
    Transform::sample(cfg, s.height(), s.width(), rng).apply(s)
}
