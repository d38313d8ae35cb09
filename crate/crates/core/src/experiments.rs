//! Desk-scale experiment harnesses shared by the examples and the
//! acceptance tests: overfitting a handful of pairs, the change-size
//! ladder comparison of single-branch models, and the injector ablation.

use std::io::Write;
use std::ops::ControlFlow;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::data::{synth_generate, AugmentConfig, SamplePair, SynthSpec};
use crate::error::Result;
use crate::eval::{evaluate, predict_all, Prediction};
use crate::metrics::MetricReport;
use crate::model::{Branches, ChangeVit, InjectorVariant, ModelConfig};
use crate::stratify::{size_stratified_eval, SizeBucketReport, StratSample};
use crate::train::{TrainConfig, TrainLog, Trainer};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OverfitConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub spec: SynthSpec,
    pub pairs: usize,
    pub data_seed: u64,
    /// Stop once training-set F1 reaches this.
    pub target_f1: f64,
}

impl Default for OverfitConfig {
    fn default() -> Self {
        OverfitConfig {
            model: ModelConfig::tiny(),
            train: TrainConfig { max_iter: 2000, batch_size: 4, eval_interval: 50, ..TrainConfig::default() },
            spec: SynthSpec::default(),
            pairs: 8,
            data_seed: 7,
            target_f1: 0.95,
        }
    }
}

pub struct OverfitOutcome {
    pub iterations: usize,
    pub report: MetricReport,
    pub log: TrainLog,
    pub elapsed: Duration,
    pub model: ChangeVit<f32>,
}

/// Trains without augmentation on a fixed synthetic set, scoring the same set.
pub fn overfit(cfg: &OverfitConfig) -> Result<OverfitOutcome> {
    let data = synth_generate(&cfg.spec, cfg.pairs, cfg.data_seed)?;
    overfit_on(cfg, &data)
}

pub fn overfit_on(cfg: &OverfitConfig, data: &[SamplePair]) -> Result<OverfitOutcome> {
    let start = Instant::now();
    let model = ChangeVit::new(cfg.model.clone(), cfg.train.seed)?;
    let mut trainer = Trainer::new(model, cfg.train.clone(), AugmentConfig::none())?;
    let target = cfg.target_f1;
    trainer.run(data, Some(data), cfg.train.max_iter, |_, r| {
        if r.f1 >= target {
            ControlFlow::Break(())
        } else {
            ControlFlow::Continue(())
        }
    })?;
    let report = evaluate(trainer.model(), data, cfg.train.batch_size)?.report;
    Ok(OverfitOutcome {
        iterations: trainer.iter(),
        report,
        log: trainer.log().clone(),
        elapsed: start.elapsed(),
        model: trainer.into_model(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LadderConfig {
    pub spec: SynthSpec,
    pub train_pairs: usize,
    pub test_pairs: usize,
    pub buckets: usize,
    /// Base architecture; `branches` is overridden per arm.
    pub model: ModelConfig,
    pub detail_train: TrainConfig,
    pub vit_train: TrainConfig,
    pub augment: AugmentConfig,
}

impl Default for LadderConfig {
    fn default() -> Self {
        let train = TrainConfig { lr0: 5e-4, batch_size: 4, eval_interval: 0, ..TrainConfig::default() };
        LadderConfig {
            spec: SynthSpec {
                canvas: 96,
                objects: 2,
                size_range: (0.0005, 0.5),
                change_prob: 0.7,
                noise: 0.1,
                contrast: (1.0, 0.15),
                ..SynthSpec::default()
            },
            train_pairs: 64,
            test_pairs: 50,
            buckets: 5,
            model: ModelConfig { image_size: 96, ..ModelConfig::tiny() },
            // one ViT-only step costs about a fifth of a detail-only step;
            // both arms get roughly the same compute
            detail_train: TrainConfig { max_iter: 250, ..train.clone() },
            vit_train: TrainConfig { max_iter: 1250, ..train },
            augment: AugmentConfig::default(),
        }
    }
}

pub struct LadderOutcome {
    pub seed: u64,
    pub detail: SizeBucketReport,
    pub vit: SizeBucketReport,
    pub detail_time: Duration,
    pub vit_time: Duration,
}

impl LadderOutcome {
    /// Detail-only IoU beats ViT-only IoU in the smallest-change bucket.
    pub fn detail_wins_small(&self) -> bool {
        self.detail.rows[0].iou > self.vit.rows[0].iou
    }

    /// ViT-only IoU beats detail-only IoU in the largest-change bucket.
    pub fn vit_wins_large(&self) -> bool {
        let last = self.detail.rows.len() - 1;
        self.vit.rows[last].iou > self.detail.rows[last].iou
    }

    pub fn write_csv<W: Write>(&self, mut w: W, header: bool) -> Result<()> {
        if header {
            writeln!(w, "seed,bucket_index,n,mean_ratio,detail_iou,vit_iou,delta_iou")?;
        }
        for (d, v) in self.detail.rows.iter().zip(&self.vit.rows) {
            writeln!(
                w,
                "{},{},{},{:.6},{:.6},{:.6},{:.6}",
                self.seed,
                d.index,
                d.n,
                d.mean_ratio,
                d.iou,
                v.iou,
                d.delta_iou.unwrap_or(0.0)
            )?;
        }
        Ok(())
    }
}

fn train_arm(
    cfg: &LadderConfig,
    branches: Branches,
    train_cfg: &TrainConfig,
    seed: u64,
    train: &[SamplePair],
    test: &[SamplePair],
) -> Result<(Vec<Prediction>, Duration)> {
    let start = Instant::now();
    let model = ChangeVit::new(ModelConfig { branches, ..cfg.model.clone() }, seed)?;
    let mut trainer = Trainer::new(model, TrainConfig { seed, ..train_cfg.clone() }, cfg.augment.clone())?;
    trainer.run(train, None::<&[SamplePair]>, train_cfg.max_iter, |_, _| ControlFlow::Continue(()))?;
    let preds = predict_all(trainer.model(), test, train_cfg.batch_size)?;
    Ok((preds, start.elapsed()))
}

/// Trains a detail-only and a ViT-only model on one ladder draw and
/// stratifies both on a held-out draw. `seed` moves data and training.
pub fn size_ladder(cfg: &LadderConfig, seed: u64) -> Result<LadderOutcome> {
    let train = synth_generate(&cfg.spec, cfg.train_pairs, 1000 + 2 * seed)?;
    let test = synth_generate(&cfg.spec, cfg.test_pairs, 1001 + 2 * seed)?;
    let (pd, detail_time) = train_arm(cfg, Branches::DetailOnly, &cfg.detail_train, seed, &train, &test)?;
    let (pv, vit_time) = train_arm(cfg, Branches::VitOnly, &cfg.vit_train, seed, &train, &test)?;
    let (sd, sv) = (strat_samples(&pd, &test), strat_samples(&pv, &test));
    let detail = size_stratified_eval(&sd, Some(&sv), cfg.buckets)?;
    let vit = size_stratified_eval(&sv, Some(&sd), cfg.buckets)?;
    Ok(LadderOutcome { seed, detail, vit, detail_time, vit_time })
}

fn strat_samples<'a>(preds: &'a [Prediction], truth: &'a [SamplePair]) -> Vec<StratSample<'a>> {
    preds.iter().zip(truth).map(|(p, s)| StratSample { id: &p.id, pred: &p.mask, truth: &s.mask }).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub variant: InjectorVariant,
    pub iterations: usize,
    pub final_loss: f64,
    pub all_finite: bool,
    pub report: MetricReport,
    pub seconds: f64,
}

pub const ABLATION_HEADER: &str = "variant,iterations,final_loss,finite,f1,iou,oa,seconds";

/// Runs the overfit harness once per injector variant; only `injector` differs.
pub fn injector_ablation(cfg: &OverfitConfig) -> Result<Vec<AblationRow>> {
    let data = synth_generate(&cfg.spec, cfg.pairs, cfg.data_seed)?;
    [InjectorVariant::VitAsQuery, InjectorVariant::DetailAsQuery]
        .into_iter()
        .map(|variant| {
            let run = OverfitConfig { model: ModelConfig { injector: variant, ..cfg.model.clone() }, ..cfg.clone() };
            let out = overfit_on(&run, &data)?;
            let all_finite = out.log.rows.iter().all(|r| r.total.is_finite());
            Ok(AblationRow {
                variant,
                iterations: out.iterations,
                final_loss: out.log.rows.last().map_or(f64::NAN, |r| r.total),
                all_finite,
                report: out.report,
                seconds: out.elapsed.as_secs_f64(),
            })
        })
        .collect()
}

pub fn write_ablation_csv<W: Write>(rows: &[AblationRow], mut w: W) -> Result<()> {
    writeln!(w, "{ABLATION_HEADER}")?;
    for r in rows {
        let name = match r.variant {
            InjectorVariant::VitAsQuery => "vit_as_query",
            InjectorVariant::DetailAsQuery => "detail_as_query",
        };
        writeln!(
            w,
            "{name},{},{:.6},{},{:.6},{:.6},{:.6},{:.1}",
            r.iterations, r.final_loss, r.all_finite, r.report.f1, r.report.iou, r.report.oa, r.seconds
        )?;
    }
    Ok(())
}
