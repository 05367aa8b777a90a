//! `inspect-trace`: parse a binary CSI trace and report what it holds.

use std::collections::BTreeMap;
use std::path::PathBuf;

use clap::Args;
use serde_json::json;

use fallwatch_core::ingest::trace::parse_trace;

use crate::error::CliError;
use crate::output::emit;
use crate::{Ctx, Format};

#[derive(Args, Debug)]
pub struct InspectArgs {
    /// Binary trace file to inspect.
    pub trace: PathBuf,
}

pub fn run(ctx: &Ctx, args: InspectArgs) -> Result<(), CliError> {
    let bytes = std::fs::read(&args.trace)
        .map_err(|e| CliError::Input(format!("cannot read {}: {e}", args.trace.display())))?;
    let parsed = parse_trace(&bytes).map_err(|e| CliError::Input(e.to_string()))?;
    let stats = parsed.stats;

    // Antenna geometry histogram, e.g. {"3x1": 120}.
    let mut configs: BTreeMap<String, usize> = BTreeMap::new();
    for f in &parsed.frames {
        *configs.entry(format!("{}x{}", f.n_rx, f.n_tx)).or_default() += 1;
    }
    let (first_ts, last_ts) = match (parsed.frames.first(), parsed.frames.last()) {
        (Some(a), Some(b)) => (Some(a.timestamp), Some(b.timestamp)),
        _ => (None, None),
    };

    let doc = match ctx.format {
        Format::Json => serde_json::to_string_pretty(&json!({
            "frames": stats.frames,
            "skipped_records": stats.skipped_records,
            "truncated_tail_bytes": stats.truncated_tail_bytes,
            "bad_permutations": stats.bad_permutations,
            "antenna_configs": configs,
            "first_timestamp_s": first_ts,
            "last_timestamp_s": last_ts,
        }))
        .expect("stats serialize"),
        Format::Csv => {
            let mut s = String::from(
                "frames,skipped_records,truncated_tail_bytes,bad_permutations\n",
            );
            s.push_str(&format!(
                "{},{},{},{}",
                stats.frames, stats.skipped_records, stats.truncated_tail_bytes,
                stats.bad_permutations
            ));
            s
        }
        Format::Text => {
            let mut s = format!(
                "frames:              {}\nskipped records:     {}\ntruncated tail:      {} bytes\nbad antenna perms:   {}\n",
                stats.frames, stats.skipped_records, stats.truncated_tail_bytes,
                stats.bad_permutations
            );
            for (cfg, n) in &configs {
                s.push_str(&format!("geometry {cfg}:        {n} frames\n"));
            }
            if let (Some(a), Some(b)) = (first_ts, last_ts) {
                s.push_str(&format!("time span:           {:.3} s .. {:.3} s\n", a, b));
            }
            s
        }
    };
    emit(ctx, &doc)
}
