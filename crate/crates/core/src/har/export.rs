//! Plain-text artifacts for training runs: metrics and confusion CSVs.

use super::eval::Evaluation;
use super::train::EpochRecord;
use super::HarError;
use std::fs;
use std::path::Path;

/// One row per epoch, header `epoch,train_acc,test_acc,avg_loss`. Floats use
/// the shortest representation that round-trips.
pub fn metrics_csv(history: &[EpochRecord]) -> String {
    let mut out = String::from("epoch,train_acc,test_acc,avg_loss\n");
    for r in history {
        out.push_str(&format!(
            "{},{},{},{}\n",
            r.epoch, r.train_acc, r.test_acc, r.avg_loss
        ));
    }
    out
}

/// Row-normalized confusion matrix with class names on both axes. The
/// top-left cell is empty; a row whose class never appears in the truth has
/// all its value cells empty rather than fabricated zeros.
pub fn confusion_csv(eval: &Evaluation, class_names: &[String]) -> Result<String, HarError> {
    if class_names.len() != eval.n_classes {
        return Err(HarError::InvalidData(format!(
            "{} class names for {} classes",
            class_names.len(),
            eval.n_classes
        )));
    }
    if let Some(bad) = class_names.iter().find(|n| n.contains(',') || n.contains('\n')) {
        return Err(HarError::InvalidData(format!(
            "class name {bad:?} cannot appear in a CSV cell"
        )));
    }
    let mut out = String::new();
    out.push(',');
    out.push_str(&class_names.join(","));
    out.push('\n');
    for (c, name) in class_names.iter().enumerate() {
        out.push_str(name);
        for p in 0..eval.n_classes {
            out.push(',');
            if eval.row_defined[c] {
                out.push_str(&format!("{}", eval.confusion[c][p]));
            }
        }
        out.push('\n');
    }
    Ok(out)
}

pub fn write_metrics_csv(path: &Path, history: &[EpochRecord]) -> Result<(), HarError> {
    fs::write(path, metrics_csv(history)).map_err(|source| HarError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_confusion_csv(
    path: &Path,
    eval: &Evaluation,
    class_names: &[String],
) -> Result<(), HarError> {
    fs::write(path, confusion_csv(eval, class_names)?).map_err(|source| HarError::Io {
        path: path.to_path_buf(),
        source,
    })
}
