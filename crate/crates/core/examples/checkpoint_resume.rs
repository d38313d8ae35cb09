//! Interrupt a run, resume from the checkpoint, and compare with an
//! uninterrupted run of the same length.

use std::ops::ControlFlow;

use changevit::data::{synth_generate, AugmentConfig, SamplePair, SynthSpec};
use changevit::train::{Checkpoint, TrainConfig, Trainer, LAST_CHECKPOINT};
use changevit::{ChangeVit, ModelConfig};

fn main() -> changevit::Result<()> {
    let model_cfg = ModelConfig { image_size: 32, ..ModelConfig::tiny() };
    let data = synth_generate(&SynthSpec { canvas: 32, ..SynthSpec::default() }, 6, 3)?;
    let cfg = TrainConfig { max_iter: 12, batch_size: 2, eval_interval: 0, seed: 9, ..TrainConfig::default() };
    let go = |_: usize, _: &changevit::metrics::MetricReport| ControlFlow::Continue(());
    let none = None::<&[SamplePair]>;

    let mut full = Trainer::new(ChangeVit::new(model_cfg.clone(), 9)?, cfg.clone(), AugmentConfig::default())?;
    full.run(&data, none, 12, go)?;

    let dir = std::env::temp_dir().join("cvit_resume_example");
    let mut first = Trainer::new(ChangeVit::new(model_cfg.clone(), 9)?, cfg.clone(), AugmentConfig::default())?.with_checkpoint_dir(&dir);
    first.run(&data, none, 6, go)?;
    let ckpt = Checkpoint::load(dir.join(LAST_CHECKPOINT))?;
    println!("checkpoint at iteration {} with {} arrays", ckpt.iter, ckpt.arrays.len());

    let mut resumed = Trainer::resume(&ckpt, &model_cfg, cfg, AugmentConfig::default())?;
    resumed.run(&data, none, 12, go)?;

    let max_diff = full
        .model()
        .params()
        .tensors()
        .iter()
        .zip(resumed.model().params().tensors())
        .flat_map(|(a, b)| a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).collect::<Vec<_>>())
        .fold(0.0f32, f32::max);
    println!("largest parameter difference after resuming: {max_diff:e}");
    print!("{}", resumed.log().to_csv());
    Ok(())
}
