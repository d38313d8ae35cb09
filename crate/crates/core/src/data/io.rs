use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use image::{ColorType, DynamicImage, GrayImage, ImageReader, RgbImage};

use super::sample::{Mask, Rgb, SamplePair};
use crate::error::{Error, Result};

pub const KINDS: [&str; 3] = ["A", "B", "label"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            _ => Err(Error::Config(format!("unknown split {s:?} (train, val, test)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub id: String,
    pub a: PathBuf,
    pub b: PathBuf,
    pub label: PathBuf,
}

#[derive(Clone, Debug)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub split: Split,
    pub entries: Vec<ManifestEntry>,
}

fn png_stems(dir: &Path) -> Result<BTreeSet<String>> {
    let mut out = BTreeSet::new();
    if !dir.is_dir() {
        return Ok(out);
    }
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if path.extension().and_then(|e| e.to_str()) == Some("png") {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                out.insert(stem.to_string());
            }
        }
    }
    Ok(out)
}

/// Reads `root/<split>/{A,B,label}/*.png`; ids are file stems in sorted order.
pub fn load_dataset(root: impl AsRef<Path>, split: Split) -> Result<DatasetManifest> {
    let root = root.as_ref().to_path_buf();
    let dir = root.join(split.as_str());
    if !dir.is_dir() {
        return Err(Error::Config(format!("dataset split directory {} not found", dir.display())));
    }
    let sets = KINDS.map(|k| png_stems(&dir.join(k)));
    let [a, b, label] = sets;
    let (a, b, label) = (a?, b?, label?);
    let all: BTreeSet<&String> = a.iter().chain(&b).chain(&label).collect();
    let mut entries = Vec::with_capacity(all.len());
    for id in all {
        for (kind, set) in KINDS.iter().zip([&a, &b, &label]) {
            if !set.contains(id) {
                return Err(Error::Manifest { id: id.clone(), msg: format!("missing {kind}/{id}.png") });
            }
        }
        let file = format!("{id}.png");
        entries.push(ManifestEntry {
            id: id.clone(),
            a: dir.join("A").join(&file),
            b: dir.join("B").join(&file),
            label: dir.join("label").join(&file),
        });
    }
    Ok(DatasetManifest { root, split, entries })
}

fn open(path: &Path) -> Result<DynamicImage> {
    let ingest = |msg: String| Error::Ingest { path: path.to_path_buf(), msg };
    ImageReader::open(path)
        .map_err(|e| ingest(e.to_string()))?
        .with_guessed_format()
        .map_err(|e| ingest(e.to_string()))?
        .decode()
        .map_err(|e| ingest(e.to_string()))
}

pub fn read_rgb(path: &Path) -> Result<Rgb> {
    let img = open(path)?.to_rgb8();
    let (w, h) = img.dimensions();
    let data = img.into_raw().into_iter().map(|v| v as f32 / 255.0).collect();
    Rgb::new(h as usize, w as usize, data)
}

/// Threshold raw 8-bit label values: `v > 127` is change.
pub fn binarize_mask(height: usize, width: usize, raw: &[u8]) -> Result<Mask> {
    Mask::new(height, width, raw.iter().map(|&v| u8::from(v > 127)).collect())
}

pub fn read_mask(path: &Path) -> Result<Mask> {
    let img = open(path)?;
    if img.color() != ColorType::L8 {
        return Err(Error::Ingest { path: path.to_path_buf(), msg: format!("label must be 8-bit grayscale, found {:?}", img.color()) });
    }
    let g = img.into_luma8();
    let (w, h) = g.dimensions();
    binarize_mask(h as usize, w as usize, g.as_raw())
}

fn save(path: &Path, img: DynamicImage) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| Error::Ingest { path: path.to_path_buf(), msg: e.to_string() })
}

pub fn to_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn write_rgb(path: &Path, img: &Rgb) -> Result<()> {
    let raw = img.data().iter().map(|&v| to_u8(v)).collect();
    let buf = RgbImage::from_raw(img.width() as u32, img.height() as u32, raw).expect("length checked by Rgb");
    save(path, DynamicImage::ImageRgb8(buf))
}

/// Grayscale PNG from raw 8-bit values.
pub fn write_gray(path: &Path, height: usize, width: usize, raw: Vec<u8>) -> Result<()> {
    let buf = GrayImage::from_raw(width as u32, height as u32, raw)
        .ok_or_else(|| Error::Contract(format!("gray image {height}x{width} with wrong length")))?;
    save(path, DynamicImage::ImageLuma8(buf))
}

/// Label PNG with values 0 / 255.
pub fn write_mask(path: &Path, mask: &Mask) -> Result<()> {
    write_gray(path, mask.height(), mask.width(), mask.data().iter().map(|&v| v * 255).collect())
}

/// Writes the triplet under `dir/{A,B,label}/<id>.png`.
pub fn write_sample(dir: &Path, s: &SamplePair) -> Result<()> {
    let file = format!("{}.png", s.id);
    write_rgb(&dir.join("A").join(&file), &s.img_a)?;
    write_rgb(&dir.join("B").join(&file), &s.img_b)?;
    write_mask(&dir.join("label").join(&file), &s.mask)
}

impl DatasetManifest {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.id.as_str())
    }

    pub fn load(&self, index: usize) -> Result<SamplePair> {
        let e = &self.entries[index];
        SamplePair::new(e.id.clone(), read_rgb(&e.a)?, read_rgb(&e.b)?, read_mask(&e.label)?)
    }

    pub fn load_all(&self) -> Result<Vec<SamplePair>> {
        (0..self.len()).map(|i| self.load(i)).collect()
    }
}
