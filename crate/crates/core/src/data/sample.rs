use crate::error::{Error, Result};

/// Binary `H x W` map with values in {0, 1}.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Mask {
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl Mask {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::Contract(format!("mask {height}x{width} with {} values", data.len())));
        }
        if let Some(v) = data.iter().find(|&&v| v > 1) {
            return Err(Error::Contract(format!("mask value {v} is not binary")));
        }
        Ok(Mask { height, width, data })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Mask { height, width, data: vec![0; height * width] }
    }

    /// `P >= tau` maps to 1.
    pub fn threshold<F: Copy + Into<f64>>(height: usize, width: usize, prob: &[F], tau: f64) -> Result<Self> {
        if prob.len() != height * width {
            return Err(Error::Contract(format!("{} probabilities for a {height}x{width} map", prob.len())));
        }
        let data = prob.iter().map(|&p| u8::from(p.into() >= tau)).collect();
        Ok(Mask { height, width, data })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, y: usize, x: usize) -> u8 {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, y: usize, x: usize, v: bool) {
        self.data[y * self.width + x] = u8::from(v);
    }

    pub fn ones(&self) -> usize {
        self.data.iter().map(|&v| v as usize).sum()
    }

    /// Fraction of pixels equal to 1.
    pub fn ratio(&self) -> f64 {
        self.ones() as f64 / self.data.len() as f64
    }
}

/// `H x W x 3` image, interleaved, values in [0, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct Rgb {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl Rgb {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != height * width * 3 {
            return Err(Error::Contract(format!("image {height}x{width}x3 with {} values", data.len())));
        }
        Ok(Rgb { height, width, data })
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(height * width * 3);
        for y in 0..height {
            for x in 0..width {
                for c in 0..3 {
                    data.push(f(y, x, c));
                }
            }
        }
        Rgb { height, width, data }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn pixel(&self, y: usize, x: usize) -> [f32; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    /// Planar `3 x H x W` copy.
    pub fn to_chw(&self) -> Vec<f32> {
        let plane = self.height * self.width;
        let mut out = vec![0.0; plane * 3];
        for (i, px) in self.data.chunks_exact(3).enumerate() {
            for c in 0..3 {
                out[c * plane + i] = px[c];
            }
        }
        out
    }
}

/// One bi-temporal sample.
#[derive(Clone, Debug, PartialEq)]
pub struct SamplePair {
    pub id: String,
    pub img_a: Rgb,
    pub img_b: Rgb,
    pub mask: Mask,
}

impl SamplePair {
    pub fn new(id: impl Into<String>, img_a: Rgb, img_b: Rgb, mask: Mask) -> Result<Self> {
        let id = id.into();
        let dims = |h: usize, w: usize| (h, w);
        let a = dims(img_a.height, img_a.width);
        if a != dims(img_b.height, img_b.width) || a != dims(mask.height, mask.width) {
            return Err(Error::Manifest { id, msg: "image and mask sizes differ".into() });
        }
        Ok(SamplePair { id, img_a, img_b, mask })
    }

    pub fn height(&self) -> usize {
        self.mask.height
    }

    pub fn width(&self) -> usize {
        self.mask.width
    }

    pub fn change_ratio(&self) -> f64 {
        self.mask.ratio()
    }
}
