//! `grad-check`: run the finite-difference gradient verification suite and
//! fail loudly when any analytic gradient disagrees.

use clap::Args;

use fallwatch_core::verify::{format_report, gradient_suite};

use crate::error::CliError;
use crate::output::emit;
use crate::{Ctx, Format};

#[derive(Args, Debug)]
pub struct GradCheckArgs {}

pub fn run(ctx: &Ctx, _args: GradCheckArgs) -> Result<(), CliError> {
    let report = gradient_suite(ctx.seed_or_default());

    let text = match ctx.format {
        Format::Json => serde_json::to_string_pretty(&report).expect("report serializes"),
        Format::Csv => {
            let mut s = String::from("check,max_rel_err,tolerance,coords_checked,passed\n");
            for c in &report.checks {
                s.push_str(&format!(
                    "{},{:e},{:e},{},{}\n",
                    c.name, c.max_rel_err, c.tolerance, c.coords_checked, c.passed
                ));
            }
            s
        }
        Format::Text => format_report(&report),
    };
    emit(ctx, &text)?;

    if report.all_passed {
        Ok(())
    } else {
        let failed: Vec<&str> = report
            .checks
            .iter()
            .filter(|c| !c.passed)
            .map(|c| c.name.as_str())
            .collect();
        Err(CliError::Numerical(format!(
            "gradient checks failed: {}",
            failed.join(", ")
        )))
    }
}
