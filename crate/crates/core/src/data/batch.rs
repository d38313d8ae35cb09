use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use cvit_tensor::Tensor;

use super::derive_seed;
use super::io::DatasetManifest;
use super::sample::SamplePair;
use crate::error::{Error, Result};

/// Anything that yields sample pairs by position.
pub trait PairSource {
    fn len(&self) -> usize;
    fn id(&self, index: usize) -> &str;
    fn load(&self, index: usize) -> Result<SamplePair>;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl PairSource for [SamplePair] {
    fn len(&self) -> usize {
        <[SamplePair]>::len(self)
    }

    fn id(&self, index: usize) -> &str {
        &self[index].id
    }

    fn load(&self, index: usize) -> Result<SamplePair> {
        Ok(self[index].clone())
    }
}

impl PairSource for Vec<SamplePair> {
    fn len(&self) -> usize {
        self.as_slice().len()
    }

    fn id(&self, index: usize) -> &str {
        &self[index].id
    }

    fn load(&self, index: usize) -> Result<SamplePair> {
        Ok(self[index].clone())
    }
}

impl PairSource for DatasetManifest {
    fn len(&self) -> usize {
        self.entries.len()
    }

    fn id(&self, index: usize) -> &str {
        &self.entries[index].id
    }

    fn load(&self, index: usize) -> Result<SamplePair> {
        DatasetManifest::load(self, index)
    }
}

/// Sample order for one epoch; `None` keeps manifest order.
pub fn epoch_order(n: usize, shuffle_seed: Option<u64>, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    if let Some(seed) = shuffle_seed {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[b"shuffle", &seed.to_le_bytes(), &(epoch as u64).to_le_bytes()]));
        order.shuffle(&mut rng);
    }
    order
}

/// Index batches of one epoch; the final partial batch is kept.
pub fn batch_indices(n: usize, batch_size: usize, shuffle_seed: Option<u64>, epoch: usize) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        return Err(Error::Contract("batch size must be at least 1".into()));
    }
    if n == 0 {
        return Err(Error::Contract("cannot batch an empty dataset".into()));
    }
    Ok(epoch_order(n, shuffle_seed, epoch).chunks(batch_size).map(<[usize]>::to_vec).collect())
}

/// Stacked tensors: images `[N,3,H,W]`, mask `[N,1,H,W]` in {0, 1}.
#[derive(Clone, Debug)]
pub struct Batch {
    pub ids: Vec<String>,
    pub img_a: Tensor<f32>,
    pub img_b: Tensor<f32>,
    pub mask: Tensor<f32>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

pub fn collate(samples: &[SamplePair]) -> Result<Batch> {
    let first = samples.first().ok_or_else(|| Error::Contract("empty batch".into()))?;
    let (h, w) = (first.height(), first.width());
    let mut a = Vec::with_capacity(samples.len() * 3 * h * w);
    let mut b = Vec::with_capacity(a.capacity());
    let mut m = Vec::with_capacity(samples.len() * h * w);
    for s in samples {
        if (s.height(), s.width()) != (h, w) {
            return Err(Error::Manifest { id: s.id.clone(), msg: format!("size {}x{} differs from batch {h}x{w}", s.height(), s.width()) });
        }
        a.extend(s.img_a.to_chw());
        b.extend(s.img_b.to_chw());
        m.extend(s.mask.data().iter().map(|&v| v as f32));
    }
    let n = samples.len();
    Ok(Batch {
        ids: samples.iter().map(|s| s.id.clone()).collect(),
        img_a: Tensor::new([n, 3, h, w], a)?,
        img_b: Tensor::new([n, 3, h, w], b)?,
        mask: Tensor::new([n, 1, h, w], m)?,
    })
}

/// Iterator over collated batches of one epoch.
pub struct BatchIter<'a, S: PairSource + ?Sized> {
    source: &'a S,
    batches: std::vec::IntoIter<Vec<usize>>,
}

pub fn batch_iter<S: PairSource + ?Sized>(
    source: &S,
    batch_size: usize,
    shuffle_seed: Option<u64>,
    epoch: usize,
) -> Result<BatchIter<'_, S>> {
    let batches = batch_indices(source.len(), batch_size, shuffle_seed, epoch)?;
    Ok(BatchIter { source, batches: batches.into_iter() })
}

impl<S: PairSource + ?Sized> Iterator for BatchIter<'_, S> {
    type Item = Result<Batch>;

    fn next(&mut self) -> Option<Self::Item> {
        let idx = self.batches.next()?;
        Some(idx.iter().map(|&i| self.source.load(i)).collect::<Result<Vec<_>>>().and_then(|s| collate(&s)))
    }
}
