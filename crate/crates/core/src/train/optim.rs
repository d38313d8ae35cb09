use cvit_tensor::{Element, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ParamStore;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr0: f64,
    pub betas: (f64, f64),
    pub weight_decay: f64,
    /// Power of the polynomial decay.
    pub alpha: f64,
    pub eps: f64,
    pub max_iter: usize,
    pub batch_size: usize,
    /// Shuffle and augmentation seed, taken from the run-level seed.
    #[serde(skip)]
    pub seed: u64,
    /// Validate every this many iterations; 0 only at the end.
    pub eval_interval: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr0: 2e-4,
            betas: (0.9, 0.99),
            weight_decay: 1e-4,
            alpha: 0.9,
            eps: 1e-8,
            max_iter: 2000,
            batch_size: 4,
            seed: 0,
            eval_interval: 200,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let (b1, b2) = self.betas;
        if !(self.lr0 > 0.0) {
            return Err(Error::Config(format!("lr0 must be positive, got {}", self.lr0)));
        }
        if !((0.0..1.0).contains(&b1) && (0.0..1.0).contains(&b2)) {
            return Err(Error::Config(format!("betas ({b1}, {b2}) must lie in [0, 1)")));
        }
        if self.weight_decay < 0.0 || !(self.eps > 0.0) || self.alpha < 0.0 {
            return Err(Error::Config("weight_decay, eps and alpha must be non-negative (eps positive)".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        Ok(())
    }
}

/// `lr0 * (1 - it / max_iter)^alpha`.
pub fn poly_lr(it: usize, cfg: &TrainConfig) -> Result<f64> {
    if it > cfg.max_iter {
        return Err(Error::Contract(format!("iteration {it} beyond max_iter {}", cfg.max_iter)));
    }
    if cfg.max_iter == 0 {
        return Ok(cfg.lr0);
    }
    Ok(cfg.lr0 * (1.0 - it as f64 / cfg.max_iter as f64).powf(cfg.alpha))
}

/// Adam moments, one pair per parameter in store order.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam<T: Element> {
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    pub t: u64,
}

impl<T: Element> Adam<T> {
    pub fn new(params: &ParamStore<T>) -> Self {
        let zeros = || params.iter().map(|(_, _, p)| Tensor::zeros(p.shape())).collect();
        Adam { m: zeros(), v: zeros(), t: 0 }
    }

    /// One bias-corrected update with weight decay folded into the gradient.
    /// A missing gradient counts as zero.
    pub fn step(&mut self, params: &mut ParamStore<T>, grads: &[Option<Tensor<T>>], lr: f64, cfg: &TrainConfig) -> Result<()> {
        if grads.len() != params.len() || self.m.len() != params.len() {
            return Err(Error::Contract(format!(
                "{} gradients and {} moment buffers for {} parameters",
                grads.len(),
                self.m.len(),
                params.len()
            )));
        }
        let ids: Vec<_> = params.ids().collect();
        for (k, id) in ids.into_iter().enumerate() {
            let shape = params.get(id).shape().to_vec();
            if let Some(g) = &grads[k] {
                if g.shape() != shape.as_slice() {
                    return Err(Error::Contract(format!("gradient {:?} for parameter {} {:?}", g.shape(), params.name(id), shape)));
                }
            }
            if self.m[k].shape() != shape.as_slice() {
                return Err(Error::Contract(format!("moment buffer shape mismatch for {}", params.name(id))));
            }
        }
        self.t += 1;
        let (b1, b2) = cfg.betas;
        let c1 = 1.0 - b1.powf(self.t as f64);
        let c2 = 1.0 - b2.powf(self.t as f64);
        let (b1t, b2t, wd, eps) = (T::of(b1), T::of(b2), T::of(cfg.weight_decay), T::of(cfg.eps));
        let (lr_t, c1t, c2t) = (T::of(lr), T::of(c1), T::of(c2));
        let one = T::of(1.0);
        let ids: Vec<_> = params.ids().collect();
        for (k, id) in ids.into_iter().enumerate() {
            let p = params.get_mut(id).data_mut();
            let m = self.m[k].data_mut();
            let v = self.v[k].data_mut();
            let g = grads[k].as_ref().map(|g| g.data());
            for i in 0..p.len() {
                let gi = g.map_or(T::of(0.0), |g| g[i]) + wd * p[i];
                m[i] = b1t * m[i] + (one - b1t) * gi;
                v[i] = b2t * v[i] + (one - b2t) * gi * gi;
                let mh = m[i] / c1t;
                let vh = v[i] / c2t;
                p[i] -= lr_t * mh / (vh.sqrt() + eps);
            }
        }
        Ok(())
    }
}
