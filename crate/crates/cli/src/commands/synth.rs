//! `synth`: generate a labeled synthetic dataset on disk.

use std::path::PathBuf;

use clap::{Args, ValueEnum};
use serde_json::json;

use fallwatch_core::ingest::synth::{write_synth_dataset, SynthSpec};

use crate::error::CliError;
use crate::output::out_dir;
use crate::{Ctx, Format};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mix {
    /// Three deployment classes: fall / normal activity / empty room.
    Deployment,
    /// Seven activities for pretraining the classifier body.
    Pretrain,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// JSON spec file: {"classes": {name: count, ...}, "seed", "sample_rate", "duration_s"}.
    #[arg(long, conflicts_with = "mix")]
    pub spec: Option<PathBuf>,
    /// Built-in class mix to generate instead of a spec file.
    #[arg(long, value_enum)]
    pub mix: Option<Mix>,
    /// Samples per second for generated windows (built-in mixes only).
    #[arg(long)]
    pub sample_rate: Option<f64>,
    /// Seconds of motion per window (built-in mixes only).
    #[arg(long)]
    pub duration_s: Option<f64>,
}

pub fn run(ctx: &Ctx, args: SynthArgs) -> Result<(), CliError> {
    let mut spec = match (&args.spec, args.mix) {
        (Some(path), _) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Input(format!("cannot read {}: {e}", path.display())))?;
            SynthSpec::from_json(&text)?
        }
        (None, Some(Mix::Deployment)) => SynthSpec::deployment_mix(0),
        (None, Some(Mix::Pretrain)) => SynthSpec::pretrain_mix(0),
        (None, None) => {
            return Err(CliError::Usage(
                "synth needs either --spec <file> or --mix <deployment|pretrain>".into(),
            ));
        }
    };
    // The --seed flag wins over the spec file's seed.
    if let Some(seed) = ctx.seed {
        spec.seed = seed;
    }
    if let Some(r) = args.sample_rate {
        spec.sample_rate = r;
    }
    if let Some(d) = args.duration_s {
        spec.duration_s = d;
    }

    let dir = out_dir(ctx, "synth-dataset")?;
    let manifest = write_synth_dataset(&spec, &dir)?;
    ctx.note(format!(
        "generated {} windows across {} classes into {}",
        manifest.files.len(),
        manifest.n_classes(),
        dir.display()
    ));

    let summary = match ctx.format {
        Format::Json => serde_json::to_string_pretty(&json!({
            "root": dir,
            "manifest": dir.join("manifest.json"),
            "seed": spec.seed,
            "classes": spec.classes.iter().map(|(n, c)| json!({"name": n, "count": c})).collect::<Vec<_>>(),
            "windows": manifest.files.len(),
            "sample_rate": spec.sample_rate,
            "duration_s": spec.duration_s,
        }))
        .expect("summary serializes"),
        Format::Csv => {
            let mut s = String::from("class,count\n");
            for (name, count) in &spec.classes {
                s.push_str(&format!("{name},{count}\n"));
            }
            s
        }
        Format::Text => {
            let mut s = format!("dataset at {} (seed {})\n", dir.display(), spec.seed);
            for (name, count) in &spec.classes {
                s.push_str(&format!("  {name}: {count}\n"));
            }
            s
        }
    };
    // The dataset tree is the data product; the summary goes to stdout
    // regardless of --out (which names the dataset directory here).
    print!("{summary}");
    if !summary.ends_with('\n') {
        println!();
    }
    Ok(())
}
