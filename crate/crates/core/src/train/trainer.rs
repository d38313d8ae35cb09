use std::fmt::Write as _;
use std::io::Write;
use std::ops::ControlFlow;
use std::path::{Path, PathBuf};

use cvit_tensor::{Graph, TensorError};

use super::checkpoint::Checkpoint;
use super::optim::{poly_lr, Adam, TrainConfig};
use crate::data::{augment, augment_rng, batch_indices, collate, AugmentConfig, Batch, PairSource};
use crate::error::{Error, Result};
use crate::eval::evaluate;
use crate::loss::total_loss;
use crate::metrics::MetricReport;
use crate::model::ChangeVit;
use crate::params::ParamStore;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ValScores {
    pub f1: f64,
    pub iou: f64,
    pub oa: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LogRow {
    pub iter: usize,
    pub lr: f64,
    pub bce: f64,
    pub dice: f64,
    pub total: f64,
    pub val: Option<ValScores>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub rows: Vec<LogRow>,
}

impl TrainLog {
    pub const HEADER: &'static str = "iter,lr,loss_bce,loss_dice,loss_total,val_f1,val_iou,val_oa";

    pub fn to_csv(&self) -> String {
        let mut s = String::from(Self::HEADER);
        s.push('\n');
        for r in &self.rows {
            let _ = write!(s, "{},{:e},{},{},{}", r.iter, r.lr, r.bce, r.dice, r.total);
            match r.val {
                Some(v) => {
                    let _ = writeln!(s, ",{},{},{}", v.f1, v.iou, v.oa);
                }
                None => s.push_str(",,,\n"),
            }
        }
        s
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(self.to_csv().as_bytes())?;
        Ok(())
    }
}

pub const BEST_CHECKPOINT: &str = "best.ckpt";
pub const LAST_CHECKPOINT: &str = "last.ckpt";

/// Optimization state: model, Adam moments, position in the schedule.
pub struct Trainer {
    model: ChangeVit<f32>,
    adam: Adam<f32>,
    cfg: TrainConfig,
    augment: AugmentConfig,
    iter: usize,
    log: TrainLog,
    best_val_f1: Option<f64>,
    best: Option<ParamStore<f32>>,
    checkpoint_dir: Option<PathBuf>,
    grad_seen: Vec<bool>,
}

impl Trainer {
    pub fn new(model: ChangeVit<f32>, cfg: TrainConfig, augment: AugmentConfig) -> Result<Self> {
        cfg.validate()?;
        let adam = Adam::new(model.params());
        Ok(Self::assemble(model, adam, cfg, augment, 0, None))
    }

    pub fn resume(ckpt: &Checkpoint, model_cfg: &crate::model::ModelConfig, cfg: TrainConfig, augment: AugmentConfig) -> Result<Self> {
        cfg.validate()?;
        let (model, adam) = ckpt.restore(model_cfg)?;
        let iter = ckpt.iter as usize;
        if iter > cfg.max_iter {
            return Err(Error::Contract(format!("checkpoint at iteration {iter} is past max_iter {}", cfg.max_iter)));
        }
        Ok(Self::assemble(model, adam, cfg, augment, iter, ckpt.best_val_f1()))
    }

    fn assemble(model: ChangeVit<f32>, adam: Adam<f32>, cfg: TrainConfig, augment: AugmentConfig, iter: usize, best_val_f1: Option<f64>) -> Self {
        let n = model.params().len();
        Trainer { model, adam, cfg, augment, iter, log: TrainLog::default(), best_val_f1, best: None, checkpoint_dir: None, grad_seen: vec![false; n] }
    }

    /// Writes `best.ckpt` on every validation improvement and `last.ckpt` when a run ends.
    pub fn with_checkpoint_dir(mut self, dir: impl Into<PathBuf>) -> Self {
        self.checkpoint_dir = Some(dir.into());
        self
    }

    pub fn model(&self) -> &ChangeVit<f32> {
        &self.model
    }

    pub fn into_model(self) -> ChangeVit<f32> {
        self.model
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn optimizer(&self) -> &Adam<f32> {
        &self.adam
    }

    pub fn iter(&self) -> usize {
        self.iter
    }

    pub fn log(&self) -> &TrainLog {
        &self.log
    }

    pub fn best_val_f1(&self) -> Option<f64> {
        self.best_val_f1
    }

    /// Model with the best validation parameters seen in this session, if any.
    pub fn best_model(&self) -> Option<ChangeVit<f32>> {
        self.best.as_ref().map(|p| {
            let mut m = self.model.clone();
            *m.params_mut() = p.clone();
            m
        })
    }

    /// Per parameter, whether any step so far produced a nonzero gradient.
    pub fn grad_seen(&self) -> &[bool] {
        &self.grad_seen
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::capture(&self.model, &self.adam, self.iter as u64, self.best_val_f1)
    }

    /// The augmented batch consumed at iteration `it`.
    pub fn batch_for<S: PairSource + ?Sized>(&self, train: &S, it: usize) -> Result<Batch> {
        let bs = self.cfg.batch_size;
        let per_epoch = train.len().div_ceil(bs.max(1)).max(1);
        let (epoch, j) = (it / per_epoch, it % per_epoch);
        let batches = batch_indices(train.len(), bs, Some(self.cfg.seed), epoch)?;
        let samples = batches[j]
            .iter()
            .map(|&i| {
                let s = train.load(i)?;
                let mut rng = augment_rng(self.cfg.seed, epoch, &s.id);
                Ok(augment(&s, &self.augment, &mut rng))
            })
            .collect::<Result<Vec<_>>>()?;
        collate(&samples)
    }

    /// One optimization step on the scheduled batch.
    pub fn step<S: PairSource + ?Sized>(&mut self, train: &S) -> Result<&LogRow> {
        let it = self.iter;
        if it >= self.cfg.max_iter {
            return Err(Error::Contract(format!("schedule finished at iteration {}", self.cfg.max_iter)));
        }
        let batch = self.batch_for(train, it)?;
        let lr = poly_lr(it, &self.cfg)?;
        let nan = |ids: &[String]| Error::NonFiniteLoss { iter: it, batch: ids.to_vec() };
        let g = Graph::new();
        let ps = self.model.params().bind(&g);
        let forward = self
            .model
            .forward(g.constant(batch.img_a.clone()), g.constant(batch.img_b.clone()), &ps)
            .and_then(|p| total_loss(p, &batch.mask).map_err(Error::from));
        let terms = match forward {
            Ok(t) => t,
            Err(Error::Tensor(TensorError::NonFinite { .. })) => return Err(nan(&batch.ids)),
            Err(e) => return Err(e),
        };
        let (bce, dice, total) = (terms.bce.value().item()? as f64, terms.dice.value().item()? as f64, terms.total.value().item()? as f64);
        if !total.is_finite() {
            return Err(nan(&batch.ids));
        }
        match g.backward(terms.total) {
            Ok(()) => {}
            Err(TensorError::NonFinite { .. }) => return Err(nan(&batch.ids)),
            Err(e) => return Err(e.into()),
        }
        let grads = ps.grads();
        if grads.iter().flatten().any(|t| !t.all_finite()) {
            return Err(nan(&batch.ids));
        }
        for (seen, gr) in self.grad_seen.iter_mut().zip(&grads) {
            *seen |= gr.as_ref().is_some_and(|t| t.max_abs() > 0.0);
        }
        drop(ps);
        self.adam.step(self.model.params_mut(), &grads, lr, &self.cfg)?;
        self.iter += 1;
        self.log.rows.push(LogRow { iter: it, lr, bce, dice, total, val: None });
        Ok(self.log.rows.last().expect("just pushed"))
    }

    fn eval_due(&self) -> bool {
        let k = self.cfg.eval_interval;
        self.iter == self.cfg.max_iter || (k > 0 && self.iter.is_multiple_of(k))
    }

    /// Scores `val`, attaches them to the latest log row and keeps the best parameters.
    pub fn validate<V: PairSource + ?Sized>(&mut self, val: &V) -> Result<MetricReport> {
        let report = evaluate(&self.model, val, self.cfg.batch_size)?.report;
        if let Some(row) = self.log.rows.last_mut() {
            row.val = Some(ValScores { f1: report.f1, iou: report.iou, oa: report.oa });
        }
        if self.best_val_f1.is_none_or(|b| report.f1 > b) {
            self.best_val_f1 = Some(report.f1);
            self.best = Some(self.model.params().clone());
            if let Some(dir) = &self.checkpoint_dir {
                self.checkpoint().save(dir.join(BEST_CHECKPOINT))?;
            }
        }
        Ok(report)
    }

    /// Steps until `stop` (capped at `max_iter`), validating on schedule.
    /// `on_eval` may break to end the run early.
    pub fn run<S, V>(
        &mut self,
        train: &S,
        val: Option<&V>,
        stop: usize,
        mut on_eval: impl FnMut(usize, &MetricReport) -> ControlFlow<()>,
    ) -> Result<()>
    where
        S: PairSource + ?Sized,
        V: PairSource + ?Sized,
    {
        let stop = stop.min(self.cfg.max_iter);
        while self.iter < stop {
            self.step(train)?;
            if let (true, Some(val)) = (self.eval_due(), val) {
                let report = self.validate(val)?;
                if on_eval(self.iter, &report).is_break() {
                    break;
                }
            }
        }
        if let Some(dir) = &self.checkpoint_dir {
            self.checkpoint().save(dir.join(LAST_CHECKPOINT))?;
        }
        Ok(())
    }
}

pub fn log_path(dir: &Path) -> PathBuf {
    dir.join("train_log.csv")
}
