//! `train` and `transfer`: fit the classifier on a dataset, from scratch or
//! from a pretrained checkpoint with a fresh head.

use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use serde_json::json;

use fallwatch_core::csi::AmplitudeWindow;
use fallwatch_core::har::checkpoint::ModelCheckpoint;
use fallwatch_core::har::export::write_metrics_csv;
use fallwatch_core::har::model::{transfer, ModelConfig, TwoStreamModel};
use fallwatch_core::har::split::{split, SplitSpec};
use fallwatch_core::har::train::{train, OptimizerKind, TrainConfig, TrainOutcome};
use fallwatch_core::ingest::dataset::{load_csv_dataset, load_manifest, DatasetManifest};
use fallwatch_core::ingest::normalize;

use crate::error::CliError;
use crate::output::out_dir;
use crate::{Ctx, Format};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OptimizerArg {
    Adam,
    Sgd,
}

/// Flags shared by every fitting run.
#[derive(Args, Debug, Clone)]
pub struct FitArgs {
    /// Dataset directory (holding manifest.json) or a manifest file path.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 50)]
    pub epochs: usize,
    #[arg(long, default_value_t = 16)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, value_enum, default_value_t = OptimizerArg::Adam)]
    pub optimizer: OptimizerArg,
    /// Fraction of each class used for training (stratified, floored).
    #[arg(long, default_value_t = 0.8)]
    pub train_fraction: f64,
    /// Stop early once test accuracy reaches this value.
    #[arg(long)]
    pub target_acc: Option<f64>,
}

/// Architecture overrides for from-scratch runs.
#[derive(Args, Debug, Clone)]
pub struct ArchArgs {
    #[arg(long, default_value_t = 64)]
    pub embed_dim: usize,
    #[arg(long, default_value_t = 4)]
    pub heads: usize,
    #[arg(long, default_value_t = 2)]
    pub blocks: usize,
    /// Comma-separated convolution kernel sizes, e.g. "3,5,7".
    #[arg(long, default_value = "3,5,7", value_delimiter = ',')]
    pub kernels: Vec<usize>,
    #[arg(long, default_value_t = 0.1)]
    pub dropout: f64,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub fit: FitArgs,
    #[command(flatten)]
    pub arch: ArchArgs,
}

#[derive(Args, Debug)]
pub struct TransferArgs {
    /// Pretrained checkpoint supplying the body parameters.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Keep body parameters frozen; fine-tune only the new head.
    #[arg(long)]
    pub freeze_body: bool,
    #[command(flatten)]
    pub fit: FitArgs,
}

/// A dataset loaded, split, and normalized from the training side only.
pub struct PreparedData {
    pub manifest: DatasetManifest,
    pub train: Vec<AmplitudeWindow>,
    pub test: Vec<AmplitudeWindow>,
}

/// Resolve `--data` to the manifest file.
pub fn manifest_path(data: &Path) -> PathBuf {
    if data.is_dir() {
        data.join("manifest.json")
    } else {
        data.to_path_buf()
    }
}

/// Load, split, and normalize a dataset the way every fitting and
/// evaluation run does: stratified split by `seed`, normalizer fitted on
/// the training split only, then applied to both sides.
pub fn prepare(data: &Path, train_fraction: f64, seed: u64) -> Result<PreparedData, CliError> {
    let manifest = load_manifest(&manifest_path(data))?;
    let windows = load_csv_dataset(&manifest)?;
    let spec = SplitSpec {
        train_fraction,
        rng_seed: seed,
        stratified: true,
    };
    let (mut train_set, mut test_set) = split(&windows, &spec)?;
    let stats = normalize::fit(&train_set)?;
    for w in train_set.iter_mut().chain(test_set.iter_mut()) {
        normalize::apply(&stats, w);
    }
    Ok(PreparedData {
        manifest,
        train: train_set,
        test: test_set,
    })
}

fn train_config(fit: &FitArgs, seed: u64) -> TrainConfig {
    TrainConfig {
        epochs: fit.epochs,
        batch_size: fit.batch_size,
        lr: fit.lr,
        optimizer: match fit.optimizer {
            OptimizerArg::Adam => OptimizerKind::Adam,
            OptimizerArg::Sgd => OptimizerKind::Sgd,
        },
        rng_seed: seed,
        target_test_acc: fit.target_acc,
    }
}

/// Fit, write artifacts (metrics.csv, best.ckpt, final.ckpt), and print the
/// run summary.
fn fit_and_report(
    ctx: &Ctx,
    dir: &Path,
    model: TwoStreamModel,
    data: &PreparedData,
    cfg: &TrainConfig,
) -> Result<(), CliError> {
    let quiet = ctx.quiet;
    let outcome: TrainOutcome = train(model, &data.train, &data.test, cfg, |rec, _| {
        if !quiet {
            eprintln!(
                "epoch {:>3}: train_acc {:.3}  test_acc {:.3}  loss {:.4}",
                rec.epoch, rec.train_acc, rec.test_acc, rec.avg_loss
            );
        }
    })?;

    write_metrics_csv(&dir.join("metrics.csv"), &outcome.history)?;
    ModelCheckpoint::from_model(&outcome.best_model, outcome.best_epoch, &outcome.history)
        .save(&dir.join("best.ckpt"))?;
    let last_epoch = outcome.history.last().map(|r| r.epoch).unwrap_or(0);
    ModelCheckpoint::from_model(&outcome.model, last_epoch, &outcome.history)
        .save(&dir.join("final.ckpt"))?;

    let best = &outcome.history[outcome
        .history
        .iter()
        .position(|r| r.epoch == outcome.best_epoch)
        .expect("best epoch is in history")];
    let summary = match ctx.format {
        Format::Json => serde_json::to_string_pretty(&json!({
            "out": dir,
            "epochs_run": last_epoch,
            "best_epoch": outcome.best_epoch,
            "best_test_acc": best.test_acc,
            "target_reached_at": outcome.target_reached_at,
            "history": outcome.history,
        }))
        .expect("summary serializes"),
        Format::Csv => fallwatch_core::har::export::metrics_csv(&outcome.history),
        Format::Text => format!(
            "trained {last_epoch} epochs; best test accuracy {:.3} at epoch {} (artifacts in {})",
            best.test_acc,
            outcome.best_epoch,
            dir.display()
        ),
    };
    print!("{summary}");
    if !summary.ends_with('\n') {
        println!();
    }
    Ok(())
}

pub fn run_train(ctx: &Ctx, args: TrainArgs) -> Result<(), CliError> {
    let seed = ctx.seed_or_default();
    let data = prepare(&args.fit.data, args.fit.train_fraction, seed)?;
    let first = data.train.first().ok_or_else(|| {
        CliError::Input("training split is empty; dataset too small for the split".into())
    })?;

    let mut cfg = ModelConfig::new(first.t, first.f, data.manifest.n_classes());
    cfg.embed_dim = args.arch.embed_dim;
    cfg.heads = args.arch.heads;
    cfg.n_blocks = args.arch.blocks;
    cfg.conv_kernels = args.arch.kernels.clone();
    cfg.dropout = args.arch.dropout;
    cfg.rng_seed = seed;
    let model = TwoStreamModel::new(cfg)?;

    let dir = out_dir(ctx, "train-out")?;
    ctx.note(format!(
        "training on {} windows ({} test) from {}",
        data.train.len(),
        data.test.len(),
        data.manifest.root.display()
    ));
    fit_and_report(ctx, &dir, model, &data, &train_config(&args.fit, seed))
}

pub fn run_transfer(ctx: &Ctx, args: TransferArgs) -> Result<(), CliError> {
    let seed = ctx.seed_or_default();
    let data = prepare(&args.fit.data, args.fit.train_fraction, seed)?;
    let source = ModelCheckpoint::load(&args.checkpoint)?.into_model()?;
    let model = transfer(&source, data.manifest.n_classes(), seed, args.freeze_body)?;

    let dir = out_dir(ctx, "transfer-out")?;
    // The freshly transferred state, before any fine-tuning, so the body
    // can be compared bit-for-bit against the pretrained checkpoint.
    ModelCheckpoint::from_model(&model, 0, &[]).save(&dir.join("init.ckpt"))?;
    ctx.note(format!(
        "transferred body from {}; fine-tuning on {} windows",
        args.checkpoint.display(),
        data.train.len()
    ));
    fit_and_report(ctx, &dir, model, &data, &train_config(&args.fit, seed))
}
