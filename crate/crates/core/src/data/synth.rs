//! Procedural bi-temporal scenes: a smooth textured background with
//! rectangular objects that appear or disappear between the two phases.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::derive_seed;
use super::sample::{Mask, Rgb, SamplePair};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSpec {
    pub canvas: usize,
    pub objects: usize,
    /// Object area as a fraction of the canvas, drawn log-uniformly from `[lo, hi]`.
    pub size_range: (f64, f64),
    /// Largest width/height ratio of an object.
    pub max_aspect: f64,
    /// Probability that an object toggles presence between the phases.
    pub change_prob: f64,
    /// Probability that an object is present in the first phase.
    pub present_prob: f64,
    pub texture_seed: u64,
    /// Std of the per-phase Gaussian pixel noise.
    pub noise: f64,
    /// Cells per side of the background value-noise grid.
    pub texture_cells: usize,
    /// Object contrast against mid-grey at the smallest and at the largest
    /// area of `size_range`, interpolated in log-area. `(1, 1)` keeps full colours.
    pub contrast: (f64, f64),
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            canvas: 64,
            objects: 4,
            size_range: (0.005, 0.1),
            max_aspect: 2.0,
            change_prob: 0.5,
            present_prob: 0.5,
            texture_seed: 0,
            noise: 0.02,
            texture_cells: 4,
            contrast: (1.0, 1.0),
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.size_range;
        let bad = |m: String| Err(Error::Config(format!("synth spec: {m}")));
        if self.canvas == 0 {
            return bad("canvas must be positive".into());
        }
        if hi > 1.0 {
            return bad(format!("object area fraction {hi} exceeds the canvas"));
        }
        if !(lo > 0.0 && lo <= hi) {
            return bad(format!("size range ({lo}, {hi}) must satisfy 0 < lo <= hi <= 1"));
        }
        if !(self.max_aspect >= 1.0) {
            return bad("max_aspect must be >= 1".into());
        }
        for (name, p) in [("change_prob", self.change_prob), ("present_prob", self.present_prob)] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} {p} outside [0, 1]"));
            }
        }
        let (c0, c1) = self.contrast;
        if !(0.0..=1.0).contains(&c0) || !(0.0..=1.0).contains(&c1) {
            return bad(format!("contrast ({c0}, {c1}) outside [0, 1]"));
        }
        if !(self.noise >= 0.0) || self.texture_cells == 0 {
            return bad("noise must be >= 0 and texture_cells >= 1".into());
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SynthObject {
    pub y0: usize,
    pub x0: usize,
    pub h: usize,
    pub w: usize,
    pub color: [f32; 3],
    pub in_a: bool,
    pub in_b: bool,
}

/// Scene before noise: background, objects and the top-most object per pixel.
pub struct Scene {
    pub background: Rgb,
    pub objects: Vec<SynthObject>,
}

impl Scene {
    /// Top-most object index at each pixel for one phase (`usize::MAX` for background).
    pub fn layer(&self, phase_b: bool) -> Vec<usize> {
        let n = self.background.width();
        let mut layer = vec![usize::MAX; self.background.height() * n];
        for (k, o) in self.objects.iter().enumerate() {
            if (phase_b && o.in_b) || (!phase_b && o.in_a) {
                for y in o.y0..o.y0 + o.h {
                    layer[y * n + o.x0..y * n + o.x0 + o.w].fill(k);
                }
            }
        }
        layer
    }

    pub fn mask(&self) -> Mask {
        let (la, lb) = (self.layer(false), self.layer(true));
        let data = la.iter().zip(&lb).map(|(a, b)| u8::from(a != b)).collect();
        Mask::new(self.background.height(), self.background.width(), data).expect("canvas sized")
    }

    fn render(&self, phase_b: bool, noise: f64, rng: &mut ChaCha8Rng) -> Rgb {
        let layer = self.layer(phase_b);
        let normal = Normal::new(0.0, noise.max(f64::MIN_POSITIVE)).expect("valid std");
        let w = self.background.width();
        Rgb::from_fn(self.background.height(), w, |y, x, c| {
            let base = match layer[y * w + x] {
                usize::MAX => self.background.pixel(y, x)[c],
                k => self.objects[k].color[c],
            };
            let n = if noise > 0.0 { normal.sample(rng) as f32 } else { 0.0 };
            (base + n).clamp(0.0, 1.0)
        })
    }
}

fn value_noise(size: usize, cells: usize, rng: &mut ChaCha8Rng) -> Rgb {
    let g = cells + 1;
    let lattice: Vec<[f32; 3]> = (0..g * g)
        .map(|_| {
            let v: f32 = rng.random_range(0.25..0.6);
            [v + rng.random_range(-0.05..0.05), v + rng.random_range(-0.05..0.05), v + rng.random_range(-0.05..0.05)]
        })
        .collect();
    let step = size as f32 / cells as f32;
    Rgb::from_fn(size, size, |y, x, c| {
        let fy = (y as f32 + 0.5) / step;
        let fx = (x as f32 + 0.5) / step;
        let (iy, ix) = ((fy as usize).min(cells - 1), (fx as usize).min(cells - 1));
        let (ty, tx) = (fy - iy as f32, fx - ix as f32);
        let (ty, tx) = (ty * ty * (3.0 - 2.0 * ty), tx * tx * (3.0 - 2.0 * tx));
        let at = |a: usize, b: usize| lattice[a * g + b][c];
        let top = at(iy, ix) * (1.0 - tx) + at(iy, ix + 1) * tx;
        let bot = at(iy + 1, ix) * (1.0 - tx) + at(iy + 1, ix + 1) * tx;
        top * (1.0 - ty) + bot * ty
    })
}

const GREY: f32 = 0.45;

fn object_color(rng: &mut ChaCha8Rng, contrast: f32) -> [f32; 3] {
    // bright or dark, away from the mid-grey background
    let mut c = [0.0f32; 3];
    let bright = rng.random_bool(0.5);
    for v in &mut c {
        *v = if bright { rng.random_range(0.7..1.0) } else { rng.random_range(0.0..0.15) };
    }
    let hue = rng.random_range(0..3);
    c[hue] = if bright { rng.random_range(0.0..0.5) } else { rng.random_range(0.5..0.9) };
    c.map(|v| GREY + contrast * (v - GREY))
}

/// Scene for sample `index`; the same `(spec, seed, index)` always gives the same scene.
pub fn synth_scene(spec: &SynthSpec, seed: u64, index: usize) -> Result<Scene> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[b"scene", &seed.to_le_bytes(), &(index as u64).to_le_bytes()]));
    let mut tex_rng =
        ChaCha8Rng::seed_from_u64(derive_seed(&[b"texture", &spec.texture_seed.to_le_bytes(), &(index as u64).to_le_bytes()]));
    let n = spec.canvas;
    let background = value_noise(n, spec.texture_cells, &mut tex_rng);
    let (lo, hi) = spec.size_range;
    let mut objects = Vec::with_capacity(spec.objects);
    for _ in 0..spec.objects {
        let frac = if hi > lo { (rng.random_range(lo.ln()..=hi.ln())).exp() } else { lo };
        let t = if hi > lo { (frac.ln() - lo.ln()) / (hi.ln() - lo.ln()) } else { 0.0 };
        let contrast = (spec.contrast.0 + t * (spec.contrast.1 - spec.contrast.0)) as f32;
        let area = frac * (n * n) as f64;
        let aspect = if spec.max_aspect > 1.0 { rng.random_range(spec.max_aspect.recip()..=spec.max_aspect) } else { 1.0 };
        let h = ((area * aspect).sqrt().round() as usize).clamp(1, n);
        let w = ((area / h as f64).round() as usize).clamp(1, n);
        let y0 = rng.random_range(0..=n - h);
        let x0 = rng.random_range(0..=n - w);
        let color = object_color(&mut rng, contrast);
        let in_a = rng.random_bool(spec.present_prob);
        let in_b = in_a ^ rng.random_bool(spec.change_prob);
        objects.push(SynthObject { y0, x0, h, w, color, in_a, in_b });
    }
    Ok(Scene { background, objects })
}

pub fn synth_sample(spec: &SynthSpec, seed: u64, index: usize) -> Result<SamplePair> {
    let scene = synth_scene(spec, seed, index)?;
    let mut noise_rng = ChaCha8Rng::seed_from_u64(derive_seed(&[b"noise", &seed.to_le_bytes(), &(index as u64).to_le_bytes()]));
    let img_a = scene.render(false, spec.noise, &mut noise_rng);
    let img_b = scene.render(true, spec.noise, &mut noise_rng);
    SamplePair::new(format!("{index:05}"), img_a, img_b, scene.mask())
}

pub fn synth_generate(spec: &SynthSpec, n: usize, seed: u64) -> Result<Vec<SamplePair>> {
    spec.validate()?;
    (0..n).map(|i| synth_sample(spec, seed, i)).collect()
}
