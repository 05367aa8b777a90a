//! `eval`: score a checkpoint against a dataset and write the confusion
//! matrix.

use std::path::PathBuf;

use clap::{Args, ValueEnum};
use serde_json::json;

use fallwatch_core::har::checkpoint::ModelCheckpoint;
use fallwatch_core::har::eval::evaluate;
use fallwatch_core::har::export::{confusion_csv, write_confusion_csv};

use crate::commands::training::prepare;
use crate::error::CliError;
use crate::output::emit;
use crate::{Ctx, Format};

/// Which side of the train/test split to score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EvalOn {
    Test,
    Train,
    All,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Checkpoint to score.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Dataset directory (holding manifest.json) or a manifest file path.
    #[arg(long)]
    pub data: PathBuf,
    /// Which windows to score. The split and normalizer are rebuilt from the
    /// dataset with the run seed, so `--seed` must match the training run.
    #[arg(long, value_enum, default_value_t = EvalOn::Test)]
    pub on: EvalOn,
    #[arg(long, default_value_t = 0.8)]
    pub train_fraction: f64,
    /// Also write the confusion matrix to this CSV file.
    #[arg(long)]
    pub confusion: Option<PathBuf>,
}

pub fn run(ctx: &Ctx, args: EvalArgs) -> Result<(), CliError> {
    let seed = ctx.seed_or_default();
    let data = prepare(&args.data, args.train_fraction, seed)?;
    let model = ModelCheckpoint::load(&args.checkpoint)?.into_model()?;

    let windows: Vec<_> = match args.on {
        EvalOn::Test => data.test,
        EvalOn::Train => data.train,
        EvalOn::All => data.train.into_iter().chain(data.test).collect(),
    };
    let eval = evaluate(&model, &windows)?;
    let class_names = data.manifest.class_names.clone();

    if let Some(path) = &args.confusion {
        write_confusion_csv(path, &eval, &class_names)?;
        ctx.note(format!("wrote confusion matrix to {}", path.display()));
    }

    let text = match ctx.format {
        Format::Json => serde_json::to_string_pretty(&json!({
            "checkpoint": args.checkpoint,
            "scored": format!("{:?}", args.on).to_lowercase(),
            "n_samples": eval.n_samples,
            "accuracy": eval.accuracy,
            "per_class_recall": eval.per_class_recall,
            "per_class_precision": eval.per_class_precision,
            "class_names": class_names,
            "counts": eval.counts,
        }))
        .expect("summary serializes"),
        Format::Csv => confusion_csv(&eval, &class_names)?,
        Format::Text => {
            let mut s = format!(
                "accuracy {:.4} over {} windows\n\n{}",
                eval.accuracy,
                eval.n_samples,
                confusion_csv(&eval, &class_names)?
            );
            s.pop();
            s
        }
    };
    emit(ctx, &text)
}
