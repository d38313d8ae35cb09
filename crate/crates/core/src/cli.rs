//! `cvit` subcommands. [`run`] returns the process exit code:
//! 0 success, 2 usage or configuration, 3 numerical failure, 4 incompatible checkpoint.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::ops::ControlFlow;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::data::{
    load_dataset, read_mask, read_rgb, synth_generate, to_u8, write_gray, write_mask, write_sample, Mask, SamplePair, Split,
    SynthSpec, KINDS,
};
use crate::error::{Error, Result};
use crate::eval::{evaluate, predict_all, predict_batch};
use crate::metrics::{metrics, MetricReport};
use crate::model::ChangeVit;
use crate::stratify::{size_stratified_eval, StratSample};
use crate::train::{log_path, Checkpoint, Trainer, LAST_CHECKPOINT};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;
pub const EXIT_INCOMPATIBLE: i32 = 4;

pub const CONFIG_FILE: &str = "config.toml";
pub const INDEX_FILE: &str = "index.json";

#[derive(Debug, Parser)]
#[command(name = "cvit", about = "Bi-temporal change detection with a plain ViT and a detail-capture branch")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic A/B/label dataset split.
    Synth(SynthArgs),
    /// Train from a run config; writes checkpoints, config.toml and train_log.csv.
    Train(TrainArgs),
    /// Score a checkpoint on a dataset split.
    Eval(EvalArgs),
    /// Probability and binary change maps for one pair or a whole split.
    Predict(PredictArgs),
    /// Size-stratified IoU of one or two prediction directories.
    Stratify(StratifyArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// TOML synth spec; defaults are used for missing keys.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 16)]
    pub count: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "train")]
    pub split: String,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dataset root; overrides `data.root`.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides `train.max_iter`.
    #[arg(long)]
    pub iters: Option<usize>,
    /// Continue from a checkpoint written by an earlier run with the same config.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CheckpointArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Run config; defaults to config.toml next to the checkpoint.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub ckpt: CheckpointArgs,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "test")]
    pub split: String,
    /// Directory for metrics.csv and per_sample.csv; defaults to the checkpoint directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[command(flatten)]
    pub ckpt: CheckpointArgs,
    #[arg(long, requires = "b", conflicts_with = "data")]
    pub a: Option<PathBuf>,
    #[arg(long, requires = "a")]
    pub b: Option<PathBuf>,
    /// Predict every sample of `--split` under this dataset root.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, default_value = "test")]
    pub split: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct StratifyArgs {
    /// Binary prediction PNGs named `<id>.png`.
    #[arg(long)]
    pub pred_dir: PathBuf,
    /// Second method; adds the IoU difference column.
    #[arg(long)]
    pub pred_dir_b: Option<PathBuf>,
    #[arg(long)]
    pub label_dir: PathBuf,
    #[arg(long, default_value_t = 5)]
    pub buckets: usize,
    /// CSV path; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::Manifest { .. } | Error::Ingest { .. } => EXIT_USAGE,
        Error::NonFiniteLoss { .. } | Error::Tensor(cvit_tensor::TensorError::NonFinite { .. }) => EXIT_NUMERIC,
        Error::Incompatible { .. } | Error::Checkpoint(_) => EXIT_INCOMPATIBLE,
        _ => EXIT_FAILURE,
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match execute(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn execute(cmd: Command) -> Result<()> {
    match cmd {
        Command::Synth(a) => cmd_synth(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Predict(a) => cmd_predict(&a),
        Command::Stratify(a) => cmd_stratify(&a),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub id: String,
    pub change_ratio: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthIndex {
    pub seed: u64,
    pub spec: SynthSpec,
    pub samples: Vec<IndexEntry>,
}

fn read_spec(path: &Path) -> Result<SynthSpec> {
    let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    let spec: SynthSpec = toml::from_str(&text).map_err(|e| Error::Config(format!("synth spec: {e}")))?;
    spec.validate()?;
    Ok(spec)
}

pub fn cmd_synth(a: &SynthArgs) -> Result<()> {
    let spec = match &a.spec {
        Some(p) => read_spec(p)?,
        None => SynthSpec::default(),
    };
    let split: Split = a.split.parse()?;
    let dir = a.out.join(split.as_str());
    let samples = synth_generate(&spec, a.count, a.seed)?;
    for kind in KINDS {
        fs::create_dir_all(dir.join(kind))?;
    }
    for s in &samples {
        write_sample(&dir, s)?;
    }
    let index = SynthIndex {
        seed: a.seed,
        spec,
        samples: samples.iter().map(|s| IndexEntry { id: s.id.clone(), change_ratio: s.change_ratio() }).collect(),
    };
    let json = serde_json::to_string_pretty(&index).map_err(|e| Error::Config(e.to_string()))?;
    fs::write(dir.join(INDEX_FILE), json + "\n")?;
    println!("wrote {} samples to {}", samples.len(), dir.display());
    Ok(())
}

fn dataset_root(args_root: Option<&PathBuf>, cfg: &RunConfig) -> Result<PathBuf> {
    args_root
        .or(cfg.data.root.as_ref())
        .cloned()
        .ok_or_else(|| Error::Config("no dataset: pass --data or set data.root".into()))
}

pub fn cmd_train(a: &TrainArgs) -> Result<()> {
    let mut cfg = match &a.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::from_env_defaults()?,
    };
    if let Some(n) = a.iters {
        cfg.train.max_iter = n;
    }
    let root = dataset_root(a.data.as_ref(), &cfg)?;
    cfg.data.root = Some(root.clone());
    let train = load_dataset(&root, Split::Train)?;
    if train.is_empty() {
        return Err(Error::Config(format!("no samples under {}/train", root.display())));
    }
    let val = match load_dataset(&root, Split::Val) {
        Ok(v) if !v.is_empty() => Some(v),
        _ => None,
    };
    let train_samples = train.load_all()?;
    let val_samples = match &val {
        Some(v) => v.load_all()?,
        None => train_samples.clone(),
    };
    fs::create_dir_all(&a.out)?;
    fs::write(a.out.join(CONFIG_FILE), cfg.to_toml())?;

    let mut trainer = match &a.resume {
        Some(p) => Trainer::resume(&Checkpoint::load(p)?, &cfg.model, cfg.train.clone(), cfg.data.augment())?,
        None => Trainer::new(ChangeVit::new(cfg.model.clone(), cfg.seed)?, cfg.train.clone(), cfg.data.augment())?,
    };
    trainer = trainer.with_checkpoint_dir(&a.out);
    let max_iter = cfg.train.max_iter;
    let result = trainer.run(&train_samples, Some(&val_samples), max_iter, |it, r| {
        println!("iter {it}: val f1 {:.4} iou {:.4} oa {:.4}", r.f1, r.iou, r.oa);
        ControlFlow::Continue(())
    });
    let log = log_path(&a.out);
    // keep whatever was logged before a failure
    let append = a.resume.is_some() && log.exists();
    write_log(&log, &trainer, append)?;
    result?;
    let train_eval = evaluate(trainer.model(), &train_samples, cfg.train.batch_size)?;
    println!(
        "finished at iteration {}: train f1 {:.4} iou {:.4}; checkpoint {}",
        trainer.iter(),
        train_eval.report.f1,
        train_eval.report.iou,
        a.out.join(LAST_CHECKPOINT).display()
    );
    Ok(())
}

fn write_log(path: &Path, trainer: &Trainer, append: bool) -> Result<()> {
    let csv = trainer.log().to_csv();
    if append {
        let body: String = csv.lines().skip(1).map(|l| format!("{l}\n")).collect();
        fs::OpenOptions::new().append(true).open(path)?.write_all(body.as_bytes())?;
    } else {
        fs::write(path, csv)?;
    }
    Ok(())
}

/// Model restored from a checkpoint and its run config.
pub fn load_model(args: &CheckpointArgs) -> Result<(ChangeVit<f32>, RunConfig)> {
    let config_path = match &args.config {
        Some(p) => p.clone(),
        None => args.checkpoint.parent().unwrap_or(Path::new(".")).join(CONFIG_FILE),
    };
    let cfg = RunConfig::load(&config_path)?;
    let ckpt = Checkpoint::load(&args.checkpoint)?;
    let (model, _) = ckpt.restore(&cfg.model)?;
    Ok((model, cfg))
}

fn report_line(r: &MetricReport) -> String {
    let d = r.degenerate;
    let flags: Vec<&str> = [("precision", d.precision), ("recall", d.recall), ("f1", d.f1), ("iou", d.iou)]
        .iter()
        .filter(|(_, f)| *f)
        .map(|(n, _)| *n)
        .collect();
    format!(
        "{},{},{},{},{},{}",
        r.precision,
        r.recall,
        r.f1,
        r.iou,
        r.oa,
        flags.join(";")
    )
}

pub const METRICS_HEADER: &str = "precision,recall,f1,iou,oa,degenerate";

pub fn cmd_eval(a: &EvalArgs) -> Result<()> {
    let (model, cfg) = load_model(&a.ckpt)?;
    let manifest = load_dataset(&a.data, a.split.parse()?)?;
    if manifest.is_empty() {
        return Err(Error::Config(format!("split {} under {} is empty", a.split, a.data.display())));
    }
    let ev = evaluate(&model, &manifest, cfg.train.batch_size)?;
    let out = a.out.clone().unwrap_or_else(|| a.ckpt.checkpoint.parent().unwrap_or(Path::new(".")).to_path_buf());
    fs::create_dir_all(&out)?;
    fs::write(out.join("metrics.csv"), format!("{METRICS_HEADER}\n{}\n", report_line(&ev.report)))?;
    let mut per = format!("id,tp,fp,fn,tn,{METRICS_HEADER}\n");
    for (id, c) in &ev.per_sample {
        let r = metrics(c)?;
        per.push_str(&format!("{id},{},{},{},{},{}\n", c.tp, c.fp, c.fn_, c.tn, report_line(&r)));
    }
    fs::write(out.join("per_sample.csv"), per)?;
    let r = ev.report;
    println!("f1 {:.4} iou {:.4} oa {:.4} precision {:.4} recall {:.4}", r.f1, r.iou, r.oa, r.precision, r.recall);
    if r.degenerate.any() {
        println!("warning: degenerate metrics {:?}", r.degenerate);
    }
    Ok(())
}

fn write_prediction(dir: &Path, name: &str, h: usize, w: usize, prob: &[f32], mask: &Mask) -> Result<()> {
    write_gray(&dir.join(format!("{name}_prob.png")), h, w, prob.iter().map(|&p| to_u8(p)).collect())?;
    write_mask(&dir.join(format!("{name}.png")), mask)
}

pub fn cmd_predict(a: &PredictArgs) -> Result<()> {
    let (model, cfg) = load_model(&a.ckpt)?;
    let tau = cfg.model.threshold;
    fs::create_dir_all(&a.out)?;
    match (&a.a, &a.b, &a.data) {
        (Some(pa), Some(pb), _) => {
            let (ia, ib) = (read_rgb(pa)?, read_rgb(pb)?);
            let (h, w) = (ia.height(), ia.width());
            let pair = SamplePair::new("pair", ia, ib, Mask::zeros(h, w))?;
            let p = predict_batch(&model, std::slice::from_ref(&pair), tau)?.remove(0);
            write_prediction(&a.out, "change", h, w, &p.prob, &p.mask)?;
            println!("predicted change ratio {:.6}", p.mask.ratio());
        }
        (_, _, Some(root)) => {
            let manifest = load_dataset(root, a.split.parse()?)?;
            let preds = predict_all(&model, &manifest, cfg.train.batch_size)?;
            for p in &preds {
                write_prediction(&a.out, &p.id, p.mask.height(), p.mask.width(), &p.prob, &p.mask)?;
            }
            println!("wrote {} predictions to {}", preds.len(), a.out.display());
        }
        _ => return Err(Error::Config("predict needs --a and --b, or --data".into())),
    }
    Ok(())
}

/// Binary maps `<id>.png` in `dir`, skipping `*_prob.png`.
fn read_mask_dir(dir: &Path) -> Result<BTreeMap<String, Mask>> {
    if !dir.is_dir() {
        return Err(Error::Config(format!("{} is not a directory", dir.display())));
    }
    let mut out = BTreeMap::new();
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
        if path.extension().and_then(|e| e.to_str()) != Some("png") || stem.ends_with("_prob") {
            continue;
        }
        out.insert(stem, read_mask(&path)?);
    }
    Ok(out)
}

fn pick<'a>(labels: &BTreeMap<String, Mask>, preds: &'a BTreeMap<String, Mask>, dir: &Path) -> Result<Vec<&'a Mask>> {
    labels
        .keys()
        .map(|id| preds.get(id).ok_or_else(|| Error::Manifest { id: id.clone(), msg: format!("no prediction in {}", dir.display()) }))
        .collect()
}

fn pair_up<'a>(labels: &'a BTreeMap<String, Mask>, preds: &[&'a Mask]) -> Vec<StratSample<'a>> {
    labels.iter().zip(preds).map(|((id, truth), pred)| StratSample { id, pred, truth }).collect()
}

pub fn cmd_stratify(a: &StratifyArgs) -> Result<()> {
    let labels = read_mask_dir(&a.label_dir)?;
    let preds_a = read_mask_dir(&a.pred_dir)?;
    let preds_b = a.pred_dir_b.as_deref().map(read_mask_dir).transpose()?;
    let ma = pick(&labels, &preds_a, &a.pred_dir)?;
    let mb = match (&preds_b, &a.pred_dir_b) {
        (Some(p), Some(d)) => Some(pick(&labels, p, d)?),
        _ => None,
    };
    let sa = pair_up(&labels, &ma);
    let sb = mb.as_deref().map(|m| pair_up(&labels, m));
    let report = size_stratified_eval(&sa, sb.as_deref(), a.buckets).map_err(|e| match e {
        Error::Contract(m) => Error::Config(m),
        other => other,
    })?;
    match &a.out {
        Some(p) => report.write_csv(fs::File::create(p)?)?,
        None => report.write_csv(std::io::stdout().lock())?,
    }
    Ok(())
}
