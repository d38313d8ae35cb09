use std::ops::ControlFlow;

use changevit::data::{synth_generate, AugmentConfig, SamplePair, SynthSpec};
use changevit::params::ParamStore;
use changevit::train::{poly_lr, Adam, Checkpoint, TrainConfig, Trainer, BEST_CHECKPOINT, LAST_CHECKPOINT};
use changevit::{ChangeVit, Error, ModelConfig};
use cvit_tensor::Tensor;

fn small_model() -> ModelConfig {
    ModelConfig { image_size: 32, vit_layers: 2, ..ModelConfig::tiny() }
}

fn small_data(n: usize) -> Vec<SamplePair> {
    synth_generate(&SynthSpec { canvas: 32, ..SynthSpec::default() }, n, 21).unwrap()
}

fn cfg(max_iter: usize) -> TrainConfig {
    TrainConfig { max_iter, batch_size: 2, eval_interval: 0, seed: 5, ..TrainConfig::default() }
}

fn trainer(max_iter: usize) -> Trainer {
    Trainer::new(ChangeVit::new(small_model(), 5).unwrap(), cfg(max_iter), AugmentConfig::default()).unwrap()
}

fn no_stop(_: usize, _: &changevit::metrics::MetricReport) -> ControlFlow<()> {
    ControlFlow::Continue(())
}

#[test]
fn poly_schedule_values() {
    let c = TrainConfig { max_iter: 2000, ..TrainConfig::default() };
    assert_eq!(poly_lr(0, &c).unwrap(), 2e-4);
    assert_eq!(poly_lr(2000, &c).unwrap(), 0.0);
    assert!((poly_lr(1000, &c).unwrap() - 1.0718e-4).abs() < 1e-8);
    assert!(matches!(poly_lr(2001, &c), Err(Error::Contract(_))));
    let lrs: Vec<f64> = (0..=2000).map(|i| poly_lr(i, &c).unwrap()).collect();
    assert!(lrs.windows(2).all(|w| w[1] < w[0]));
}

fn scalar_store(v: f64) -> ParamStore<f64> {
    let mut s = ParamStore::default();
    s.insert("w", Tensor::from_f64([1], &[v]).unwrap());
    s
}

#[test]
fn adam_first_step_moves_by_lr() {
    let c = TrainConfig { weight_decay: 0.0, ..TrainConfig::default() };
    let mut p = scalar_store(1.0);
    let mut adam = Adam::new(&p);
    let g = vec![Some(Tensor::from_f64([1], &[1.0]).unwrap())];
    adam.step(&mut p, &g, 0.01, &c).unwrap();
    // bias-corrected m / sqrt(v) is exactly 1 on the first step
    let w = p.tensors()[0].data()[0];
    assert!((w - (1.0 - 0.01 / (1.0 + 1e-8))).abs() < 1e-12, "{w}");
    assert_eq!(adam.t, 1);
}

#[test]
fn adam_zero_gradient_without_decay_is_a_no_op() {
    let c = TrainConfig { weight_decay: 0.0, ..TrainConfig::default() };
    let mut p = scalar_store(0.3);
    let mut adam = Adam::new(&p);
    for _ in 0..5 {
        adam.step(&mut p, &[None], 0.1, &c).unwrap();
    }
    assert_eq!(p.tensors()[0].data()[0], 0.3);
    // weight decay alone pulls towards zero
    let c = TrainConfig::default();
    adam.step(&mut p, &[None], 0.1, &c).unwrap();
    assert!(p.tensors()[0].data()[0] < 0.3);
}

#[test]
fn adam_minimises_a_quadratic() {
    let c = TrainConfig::default();
    let mut p = scalar_store(3.0);
    let mut adam = Adam::new(&p);
    for _ in 0..100 {
        let w = p.tensors()[0].data()[0];
        adam.step(&mut p, &[Some(Tensor::from_f64([1], &[2.0 * w]).unwrap())], 0.1, &c).unwrap();
    }
    let w = p.tensors()[0].data()[0];
    assert!(w * w < 0.5, "{w}");
}

#[test]
fn adam_rejects_bad_gradients() {
    let c = TrainConfig::default();
    let mut p = scalar_store(1.0);
    let mut adam = Adam::new(&p);
    let wrong = vec![Some(Tensor::from_f64([2], &[1.0, 1.0]).unwrap())];
    assert!(matches!(adam.step(&mut p, &wrong, 0.1, &c), Err(Error::Contract(_))));
    assert!(matches!(adam.step(&mut p, &[], 0.1, &c), Err(Error::Contract(_))));
    assert_eq!(adam.t, 0);
}

#[test]
fn checkpoint_round_trip_and_corruption() {
    let t = trainer(3);
    let ck = Checkpoint::capture(t.model(), t.optimizer(), 7, Some(0.25));
    let bytes = ck.to_bytes();
    let back = Checkpoint::from_bytes(&bytes).unwrap();
    assert_eq!(back, ck);
    assert_eq!(back.best_val_f1(), Some(0.25));
    assert!(matches!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]), Err(Error::Checkpoint(_))));
    let mut extra = bytes.clone();
    extra.push(0);
    assert!(matches!(Checkpoint::from_bytes(&extra), Err(Error::Checkpoint(_))));
    let mut bad = bytes;
    bad[0] = b'X';
    assert!(matches!(Checkpoint::from_bytes(&bad), Err(Error::Checkpoint(_))));

    let (model, adam) = back.restore(&small_model()).unwrap();
    assert_eq!(model.params().tensors(), t.model().params().tensors());
    assert_eq!(adam, *t.optimizer());
}

#[test]
fn checkpoint_refuses_another_architecture() {
    let t = trainer(1);
    let ck = t.checkpoint();
    let other = ModelConfig { vit_layers: 3, ..small_model() };
    assert!(matches!(ck.restore(&other), Err(Error::Incompatible { .. })));
    // the decision threshold is not part of the architecture
    assert!(ck.restore(&ModelConfig { threshold: 0.3, ..small_model() }).is_ok());
}

#[test]
fn zero_iterations_still_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_data(2);
    let mut t = trainer(0).with_checkpoint_dir(dir.path());
    t.run(&data, Some(&data), 0, no_stop).unwrap();
    assert_eq!(t.iter(), 0);
    let ck = Checkpoint::load(dir.path().join(LAST_CHECKPOINT)).unwrap();
    assert_eq!(ck.iter, 0);
}

#[test]
fn initial_loss_is_in_the_untrained_range() {
    let data = small_data(4);
    let mut t = trainer(1);
    let row = t.step(&data).unwrap().clone();
    assert!(row.total > 0.5 && row.total < 2.5, "{}", row.total);
    assert_eq!(row.lr, 2e-4);
}

#[test]
fn training_is_deterministic() {
    let data = small_data(4);
    let run = || {
        let mut t = trainer(6);
        t.run(&data, None::<&[SamplePair]>, 6, no_stop).unwrap();
        (t.log().to_csv(), t.model().params().tensors())
    };
    assert_eq!(run(), run());
}

#[test]
fn resume_matches_uninterrupted_run() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_data(5);

    let mut full = trainer(10);
    full.run(&data, None::<&[SamplePair]>, 10, no_stop).unwrap();

    let mut first = trainer(10).with_checkpoint_dir(dir.path());
    first.run(&data, None::<&[SamplePair]>, 5, no_stop).unwrap();
    let ck = Checkpoint::load(dir.path().join(LAST_CHECKPOINT)).unwrap();
    assert_eq!(ck.iter, 5);
    let mut second = Trainer::resume(&ck, &small_model(), cfg(10), AugmentConfig::default()).unwrap();
    assert_eq!(second.iter(), 5);
    let row = second.step(&data).unwrap().clone();
    assert_eq!(row.iter, 5);
    assert_eq!(row.lr, poly_lr(5, &cfg(10)).unwrap());
    second.run(&data, None::<&[SamplePair]>, 10, no_stop).unwrap();

    for (a, b) in full.log().rows[5..].iter().zip(&second.log().rows) {
        assert!((a.total - b.total).abs() < 1e-6, "iter {}: {} vs {}", a.iter, a.total, b.total);
    }
    for (a, b) in full.model().params().tensors().iter().zip(second.model().params().tensors()) {
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() < 1e-6);
        }
    }
    assert_eq!(full.optimizer().t, second.optimizer().t);
}

#[test]
fn validation_keeps_the_best_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_data(4);
    let mut t = trainer(4).with_checkpoint_dir(dir.path());
    let c = TrainConfig { eval_interval: 2, ..cfg(4) };
    t = Trainer::new(t.into_model(), c, AugmentConfig::none()).unwrap().with_checkpoint_dir(dir.path());
    let mut evals = Vec::new();
    t.run(&data, Some(&data), 4, |it, r| {
        evals.push((it, r.f1));
        ControlFlow::Continue(())
    })
    .unwrap();
    assert_eq!(evals.iter().map(|e| e.0).collect::<Vec<_>>(), [2, 4]);
    let best = evals.iter().map(|e| e.1).fold(f64::MIN, f64::max);
    assert_eq!(t.best_val_f1(), Some(best));
    let ck = Checkpoint::load(dir.path().join(BEST_CHECKPOINT)).unwrap();
    // stored as f32
    assert!((ck.best_val_f1().unwrap() - best).abs() < 1e-6);
    let csv = t.log().to_csv();
    assert!(csv.starts_with("iter,lr,loss_bce,loss_dice,loss_total,val_f1,val_iou,val_oa\n"));
    assert_eq!(csv.lines().count(), 5);
}

#[test]
fn early_stop_from_the_eval_callback() {
    let data = small_data(2);
    let c = TrainConfig { eval_interval: 1, ..cfg(10) };
    let mut t = Trainer::new(ChangeVit::new(small_model(), 5).unwrap(), c, AugmentConfig::none()).unwrap();
    t.run(&data, Some(&data), 10, |it, _| if it == 3 { ControlFlow::Break(()) } else { ControlFlow::Continue(()) })
        .unwrap();
    assert_eq!(t.iter(), 3);
}
