//! Data-output plumbing: everything a subcommand *produces* goes to
//! standard output or the --out path; diagnostics never mix in.

use std::io::Write;
use std::path::Path;

use crate::error::CliError;
use crate::Ctx;

/// Emit one finished document (JSON, CSV, or text) to --out or stdout.
pub fn emit(ctx: &Ctx, text: &str) -> Result<(), CliError> {
    match &ctx.out {
        Some(path) => {
            write_file(path, text)?;
            ctx.note(format!("wrote {}", path.display()));
            Ok(())
        }
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(text.as_bytes())
                .and_then(|_| {
                    if text.ends_with('\n') {
                        Ok(())
                    } else {
                        stdout.write_all(b"\n")
                    }
                })
                .map_err(CliError::from)
        }
    }
}

/// Write a file, creating parent directories.
pub fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)
                .map_err(|e| CliError::Input(format!("cannot create {}: {e}", parent.display())))?;
        }
    }
    std::fs::write(path, text)
        .map_err(|e| CliError::Input(format!("cannot write {}: {e}", path.display())))
}

/// The --out value interpreted as a directory (created if missing).
pub fn out_dir(ctx: &Ctx, default: &str) -> Result<std::path::PathBuf, CliError> {
    let dir = ctx
        .out
        .clone()
        .unwrap_or_else(|| std::path::PathBuf::from(default));
    std::fs::create_dir_all(&dir)
        .map_err(|e| CliError::Input(format!("cannot create {}: {e}", dir.display())))?;
    Ok(dir)
}
