//! Change-size stratified evaluation: sort by ground-truth change ratio,
//! split into equal buckets, score each bucket.

use std::io::Write;

use crate::data::Mask;
use crate::error::{Error, Result};
use crate::metrics::{confusion, metrics};

pub struct StratSample<'a> {
    pub id: &'a str,
    pub pred: &'a Mask,
    pub truth: &'a Mask,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BucketRow {
    pub index: usize,
    pub n: usize,
    pub mean_ratio: f64,
    pub f1: f64,
    pub iou: f64,
    pub oa: f64,
    /// Method A minus method B mean IoU, when a second method is given.
    pub delta_iou: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SizeBucketReport {
    pub rows: Vec<BucketRow>,
    /// Sample positions (into the input slice) per bucket, ascending ratio.
    pub assignment: Vec<Vec<usize>>,
}

/// Order by ratio, ties by id; then `k` contiguous groups, earlier groups
/// take the remainder.
pub fn assign_buckets(ratios: &[f64], ids: &[&str], k: usize) -> Result<Vec<Vec<usize>>> {
    if k == 0 || ratios.len() < k {
        return Err(Error::Contract(format!("{} samples cannot fill {k} buckets", ratios.len())));
    }
    if ids.len() != ratios.len() {
        return Err(Error::Contract("ids and ratios differ in length".into()));
    }
    let mut order: Vec<usize> = (0..ratios.len()).collect();
    order.sort_by(|&a, &b| ratios[a].total_cmp(&ratios[b]).then_with(|| ids[a].cmp(ids[b])));
    let (base, extra) = (ratios.len() / k, ratios.len() % k);
    let mut out = Vec::with_capacity(k);
    let mut start = 0;
    for b in 0..k {
        let len = base + usize::from(b < extra);
        out.push(order[start..start + len].to_vec());
        start += len;
    }
    Ok(out)
}

/// Per-sample scores averaged within each bucket.
pub fn size_stratified_eval(
    a: &[StratSample<'_>],
    b: Option<&[StratSample<'_>]>,
    k: usize,
) -> Result<SizeBucketReport> {
    let ratios: Vec<f64> = a.iter().map(|s| s.truth.ratio()).collect();
    let ids: Vec<&str> = a.iter().map(|s| s.id).collect();
    let assignment = assign_buckets(&ratios, &ids, k)?;
    let scores = |set: &[StratSample<'_>]| -> Result<Vec<(f64, f64, f64)>> {
        set.iter()
            .map(|s| {
                let m = metrics(&confusion(s.pred, s.truth)?)?;
                Ok((m.f1, m.iou, m.oa))
            })
            .collect()
    };
    let sa = scores(a)?;
    let sb = match b {
        Some(b) => {
            if b.len() != a.len() || b.iter().zip(a).any(|(x, y)| x.id != y.id) {
                return Err(Error::Contract("second method covers different samples".into()));
            }
            Some(scores(b)?)
        }
        None => None,
    };
    let rows = assignment
        .iter()
        .enumerate()
        .map(|(index, members)| {
            let n = members.len();
            let mean = |f: &dyn Fn(usize) -> f64| members.iter().map(|&i| f(i)).sum::<f64>() / n as f64;
            let iou = mean(&|i| sa[i].1);
            BucketRow {
                index: index + 1,
                n,
                mean_ratio: mean(&|i| ratios[i]),
                f1: mean(&|i| sa[i].0),
                iou,
                oa: mean(&|i| sa[i].2),
                delta_iou: sb.as_ref().map(|sb| iou - mean(&|i| sb[i].1)),
            }
        })
        .collect();
    Ok(SizeBucketReport { rows, assignment })
}

impl SizeBucketReport {
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "bucket_index,n,mean_ratio,f1,iou,oa,delta_iou")?;
        for r in &self.rows {
            let delta = r.delta_iou.map(|d| format!("{d:.6}")).unwrap_or_default();
            writeln!(w, "{},{},{:.6},{:.6},{:.6},{:.6},{}", r.index, r.n, r.mean_ratio, r.f1, r.iou, r.oa, delta)?;
        }
        Ok(())
    }
}
