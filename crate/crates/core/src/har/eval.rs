//! Classifier evaluation: accuracy, confusion counts, and the row-normalized
//! confusion matrix.

use super::model::{Mode, TwoStreamModel};
use super::train::batch_tensor;
use super::HarError;
use crate::csi::AmplitudeWindow;
use crate::nn::Graph;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Evaluation {
    pub n_classes: usize,
    pub n_samples: usize,
    pub accuracy: f64,
    /// Raw counts indexed `[true_class][predicted_class]`.
    pub counts: Vec<Vec<usize>>,
    /// Counts with each row divided by its true-class total. Rows whose class
    /// never occurs in the truth are left at zero and flagged undefined.
    pub confusion: Vec<Vec<f64>>,
    pub row_defined: Vec<bool>,
    /// Diagonal of `confusion`; `None` where the row is undefined.
    pub per_class_recall: Vec<Option<f64>>,
    /// Correct predictions over all predictions of the class; `None` when the
    /// class is never predicted.
    pub per_class_precision: Vec<Option<f64>>,
}

/// Build the evaluation from parallel truth/prediction vectors.
pub fn from_predictions(
    labels: &[usize],
    preds: &[usize],
    n_classes: usize,
) -> Result<Evaluation, HarError> {
    if labels.len() != preds.len() {
        return Err(HarError::InvalidData(format!(
            "{} labels vs {} predictions",
            labels.len(),
            preds.len()
        )));
    }
    if labels.is_empty() {
        return Err(HarError::InvalidData("nothing to evaluate".into()));
    }
    if let Some(&bad) = labels.iter().chain(preds.iter()).find(|&&c| c >= n_classes) {
        return Err(HarError::InvalidData(format!(
            "class {bad} out of range for {n_classes} classes"
        )));
    }

    let mut counts = vec![vec![0usize; n_classes]; n_classes];
    let mut correct = 0usize;
    for (&t, &p) in labels.iter().zip(preds) {
        counts[t][p] += 1;
        if t == p {
            correct += 1;
        }
    }

    let mut confusion = vec![vec![0.0; n_classes]; n_classes];
    let mut row_defined = vec![false; n_classes];
    let mut per_class_recall = vec![None; n_classes];
    for c in 0..n_classes {
        let row_total: usize = counts[c].iter().sum();
        if row_total > 0 {
            row_defined[c] = true;
            for p in 0..n_classes {
                confusion[c][p] = counts[c][p] as f64 / row_total as f64;
            }
            per_class_recall[c] = Some(confusion[c][c]);
        }
    }
    let per_class_precision = (0..n_classes)
        .map(|p| {
            let col_total: usize = (0..n_classes).map(|t| counts[t][p]).sum();
            (col_total > 0).then(|| counts[p][p] as f64 / col_total as f64)
        })
        .collect();

    Ok(Evaluation {
        n_classes,
        n_samples: labels.len(),
        accuracy: correct as f64 / labels.len() as f64,
        counts,
        confusion,
        row_defined,
        per_class_recall,
        per_class_precision,
    })
}

/// Run the model over `windows` in eval mode and evaluate the predictions.
pub fn evaluate(
    model: &TwoStreamModel,
    windows: &[AmplitudeWindow],
) -> Result<Evaluation, HarError> {
    if windows.is_empty() {
        return Err(HarError::InvalidData("nothing to evaluate".into()));
    }
    let mut labels = Vec::with_capacity(windows.len());
    let mut preds = Vec::with_capacity(windows.len());
    let all: Vec<usize> = (0..windows.len()).collect();
    for chunk in all.chunks(32) {
        let (x, chunk_labels) = batch_tensor(windows, chunk)?;
        let mut g = Graph::new();
        let pass = model.forward(&mut g, &x, Mode::Eval, None)?;
        let logits = g.value(pass.logits);
        let n = logits.shape()[1];
        for (row, &label) in chunk_labels.iter().enumerate() {
            let slice = &logits.data()[row * n..(row + 1) * n];
            let pred = slice
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .map(|(i, _)| i)
                .unwrap();
            labels.push(label);
            preds.push(pred);
        }
    }
    from_predictions(&labels, &preds, model.cfg.n_classes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::DetRng;

    #[test]
    fn hand_worked_three_class_matrix() {
        // truth:      0 0 0 1 1 2
        // predicted:  0 1 0 1 1 0
        let eval = from_predictions(&[0, 0, 0, 1, 1, 2], &[0, 1, 0, 1, 1, 0], 3).unwrap();
        assert_eq!(eval.counts, vec![vec![2, 1, 0], vec![0, 2, 0], vec![1, 0, 0]]);
        assert!((eval.accuracy - 4.0 / 6.0).abs() < 1e-12);
        assert!((eval.confusion[0][0] - 2.0 / 3.0).abs() < 1e-12);
        assert!((eval.confusion[2][0] - 1.0).abs() < 1e-12);
        assert_eq!(eval.per_class_recall[1], Some(1.0));
        assert_eq!(eval.per_class_precision[2], None, "class 2 never predicted");
    }

    #[test]
    fn counts_reconcile_with_sample_totals() {
        let mut rng = DetRng::new(11).fork("eval-oracle");
        for _ in 0..50 {
            let n = 4 + rng.index(4);
            let len = 20 + rng.index(100);
            let labels: Vec<usize> = (0..len).map(|_| rng.index(n)).collect();
            let preds: Vec<usize> = (0..len).map(|_| rng.index(n)).collect();
            let eval = from_predictions(&labels, &preds, n).unwrap();

            let total: usize = eval.counts.iter().flatten().sum();
            assert_eq!(total, len, "every sample lands in exactly one cell");
            for c in 0..n {
                let truth_count = labels.iter().filter(|&&l| l == c).count();
                let row_sum: usize = eval.counts[c].iter().sum();
                assert_eq!(row_sum, truth_count);
            }
            let diag: usize = (0..n).map(|c| eval.counts[c][c]).sum();
            assert!((eval.accuracy - diag as f64 / len as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn defined_rows_sum_to_one() {
        let mut rng = DetRng::new(12).fork("eval-rows");
        for _ in 0..50 {
            let n = 3 + rng.index(5);
            let len = 10 + rng.index(60);
            let labels: Vec<usize> = (0..len).map(|_| rng.index(n)).collect();
            let preds: Vec<usize> = (0..len).map(|_| rng.index(n)).collect();
            let eval = from_predictions(&labels, &preds, n).unwrap();
            for c in 0..n {
                let sum: f64 = eval.confusion[c].iter().sum();
                if eval.row_defined[c] {
                    assert!((sum - 1.0).abs() <= 1e-9, "row {c} sums to {sum}");
                } else {
                    assert_eq!(sum, 0.0);
                }
            }
        }
    }

    #[test]
    fn absent_class_row_is_undefined() {
        let eval = from_predictions(&[0, 0, 1], &[0, 1, 1], 3).unwrap();
        assert!(!eval.row_defined[2]);
        assert_eq!(eval.per_class_recall[2], None);
        assert_eq!(eval.confusion[2], vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn out_of_range_class_is_rejected() {
        assert!(from_predictions(&[0, 3], &[0, 0], 3).is_err());
        assert!(from_predictions(&[0, 1], &[0, 5], 3).is_err());
        assert!(from_predictions(&[0], &[0, 1], 2).is_err());
    }

    #[test]
    fn model_predictions_shift_invariant() {
        // Argmax decisions (and so the whole evaluation) are unchanged when a
        // constant is added to every logit of a row.
        use crate::har::model::{tiny_cfg, TwoStreamModel};
        use crate::nn::tensor::Tensor;

        let model = TwoStreamModel::new(tiny_cfg()).unwrap();
        let mut rng = DetRng::new(5).fork("shift");
        let x = Tensor::from_vec(
            &[1, 6, 4],
            (0..24).map(|_| rng.uniform_in(0.0, 2.0)).collect(),
        );
        let probs = model.predict_proba(&x).unwrap();
        let mut g = Graph::new();
        let pass = model.forward(&mut g, &x, Mode::Eval, None).unwrap();
        let logits = g.value(pass.logits).data().to_vec();
        let argmax = |v: &[f64]| {
            v.iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0
        };
        let shifted: Vec<f64> = logits.iter().map(|v| v + 123.456).collect();
        assert_eq!(argmax(&probs), argmax(&logits));
        assert_eq!(argmax(&logits), argmax(&shifted));
    }
}
