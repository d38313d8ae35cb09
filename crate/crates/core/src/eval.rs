//! Batched inference and confusion accumulation.

use cvit_tensor::Tensor;

use crate::data::{batch_indices, collate, Mask, PairSource, SamplePair};
use crate::error::Result;
use crate::metrics::{confusion, metrics, ConfusionCounts, MetricReport};
use crate::model::ChangeVit;

pub struct Prediction {
    pub id: String,
    /// Probability map, row-major `H x W`.
    pub prob: Vec<f32>,
    pub mask: Mask,
}

/// Runs the model over `source` in order, `batch_size` samples at a time.
pub fn predict_all<S: PairSource + ?Sized>(model: &ChangeVit<f32>, source: &S, batch_size: usize) -> Result<Vec<Prediction>> {
    let tau = model.config().threshold;
    let mut out = Vec::with_capacity(source.len());
    if source.is_empty() {
        return Ok(out);
    }
    for idx in batch_indices(source.len(), batch_size, None, 0)? {
        let samples = idx.iter().map(|&i| source.load(i)).collect::<Result<Vec<_>>>()?;
        out.extend(predict_batch(model, &samples, tau)?);
    }
    Ok(out)
}

pub fn predict_batch(model: &ChangeVit<f32>, samples: &[SamplePair], tau: f64) -> Result<Vec<Prediction>> {
    let batch = collate(samples)?;
    let p = model.predict(&batch.img_a, &batch.img_b)?;
    split_probs(&p, &batch.ids, tau)
}

fn split_probs(p: &Tensor<f32>, ids: &[String], tau: f64) -> Result<Vec<Prediction>> {
    let s = p.shape();
    let (h, w) = (s[2], s[3]);
    p.data()
        .chunks_exact(h * w)
        .zip(ids)
        .map(|(prob, id)| {
            Ok(Prediction { id: id.clone(), prob: prob.to_vec(), mask: Mask::threshold(h, w, prob, tau)? })
        })
        .collect()
}

pub struct Evaluation {
    pub per_sample: Vec<(String, ConfusionCounts)>,
    pub total: ConfusionCounts,
    pub report: MetricReport,
}

/// Pooled confusion over the whole set plus per-sample counts.
pub fn evaluate<S: PairSource + ?Sized>(model: &ChangeVit<f32>, source: &S, batch_size: usize) -> Result<Evaluation> {
    let tau = model.config().threshold;
    let mut per_sample = Vec::with_capacity(source.len());
    for idx in batch_indices(source.len(), batch_size, None, 0)? {
        let samples = idx.iter().map(|&i| source.load(i)).collect::<Result<Vec<_>>>()?;
        for (p, s) in predict_batch(model, &samples, tau)?.into_iter().zip(&samples) {
            per_sample.push((p.id, confusion(&p.mask, &s.mask)?));
        }
    }
    let total = per_sample.iter().map(|(_, c)| *c).sum();
    let report = metrics(&total)?;
    Ok(Evaluation { per_sample, total, report })
}
