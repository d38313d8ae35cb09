//! Binary checkpoint: `"CVIT"`, u32 version, u64 config hash, u64 iteration,
//! u64 optimizer step, u32 array count, then per array a u32-prefixed name,
//! u32 rank, u64 dims and f32 data. All little-endian.

use std::fs;
use std::io::Write;
use std::path::Path;

use cvit_tensor::Tensor;

use super::optim::Adam;
use crate::error::{Error, Result};
use crate::model::{ChangeVit, ModelConfig};

pub const MAGIC: &[u8; 4] = b"CVIT";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config_hash: u64,
    pub iter: u64,
    pub adam_step: u64,
    pub arrays: Vec<(String, Tensor<f32>)>,
}

const M_PREFIX: &str = "adam_m/";
const V_PREFIX: &str = "adam_v/";
const BEST_F1: &str = "meta/best_val_f1";

impl Checkpoint {
    pub fn capture(model: &ChangeVit<f32>, adam: &Adam<f32>, iter: u64, best_val_f1: Option<f64>) -> Self {
        let params = model.params();
        let mut arrays: Vec<(String, Tensor<f32>)> =
            params.iter().map(|(_, name, t)| (name.to_string(), t.clone())).collect();
        for (k, (_, name, _)) in params.iter().enumerate() {
            arrays.push((format!("{M_PREFIX}{name}"), adam.m[k].clone()));
            arrays.push((format!("{V_PREFIX}{name}"), adam.v[k].clone()));
        }
        if let Some(f1) = best_val_f1 {
            arrays.push((BEST_F1.into(), Tensor::from_f64([1], &[f1]).expect("one element")));
        }
        Checkpoint { config_hash: model.config().hash(), iter, adam_step: adam.t, arrays }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&self.config_hash.to_le_bytes());
        out.extend_from_slice(&self.iter.to_le_bytes());
        out.extend_from_slice(&self.adam_step.to_le_bytes());
        out.extend_from_slice(&(self.arrays.len() as u32).to_le_bytes());
        for (name, t) in &self.arrays {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.ndim() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Checkpoint("bad magic bytes".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported format version {version}")));
        }
        let config_hash = r.u64()?;
        let iter = r.u64()?;
        let adam_step = r.u64()?;
        let n = r.u32()? as usize;
        let mut arrays = Vec::with_capacity(n.min(1 << 16));
        for _ in 0..n {
            let len = r.u32()? as usize;
            let name = String::from_utf8(r.take(len)?.to_vec()).map_err(|_| Error::Checkpoint("array name is not UTF-8".into()))?;
            let ndim = r.u32()? as usize;
            let shape = (0..ndim).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let numel = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or_else(|| Error::Checkpoint("array too large".into()))?;
            let raw = r.take(numel.checked_mul(4).ok_or_else(|| Error::Checkpoint("array too large".into()))?)?;
            let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
            let t = Tensor::new(shape, data).map_err(|e| Error::Checkpoint(format!("array {name}: {e}")))?;
            arrays.push((name, t));
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Checkpoint { config_hash, iter, adam_step, arrays })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        let mut f = fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }

    pub fn best_val_f1(&self) -> Option<f64> {
        self.find(BEST_F1).map(|t| t.data()[0] as f64)
    }

    fn find(&self, name: &str) -> Option<&Tensor<f32>> {
        self.arrays.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    /// Rebuilds model and optimizer state; the config must hash to the stored value.
    pub fn restore(&self, config: &ModelConfig) -> Result<(ChangeVit<f32>, Adam<f32>)> {
        let expected = config.hash();
        if expected != self.config_hash {
            return Err(Error::Incompatible { expected, found: self.config_hash });
        }
        let mut model = ChangeVit::<f32>::new(config.clone(), 0)?;
        let mut adam = Adam::new(model.params());
        adam.t = self.adam_step;
        let ids: Vec<_> = model.params().ids().collect();
        for (k, id) in ids.into_iter().enumerate() {
            let name = model.params().name(id).to_string();
            let shape = model.params().get(id).shape().to_vec();
            let fetch = |key: &str| -> Result<Tensor<f32>> {
                let t = self.find(key).ok_or_else(|| Error::Checkpoint(format!("missing array {key}")))?;
                if t.shape() != shape.as_slice() {
                    return Err(Error::Checkpoint(format!("array {key} has shape {:?}, expected {shape:?}", t.shape())));
                }
                Ok(t.clone())
            };
            *model.params_mut().get_mut(id) = fetch(&name)?;
            adam.m[k] = fetch(&format!("{M_PREFIX}{name}"))?;
            adam.v[k] = fetch(&format!("{V_PREFIX}{name}"))?;
        }
        Ok((model, adam))
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::Checkpoint(format!("truncated file: wanted {n} bytes at offset {}", self.pos))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}
