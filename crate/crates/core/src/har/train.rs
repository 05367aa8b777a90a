//! Mini-batch training loop with per-epoch metrics and early stopping.

use super::model::{Mode, TwoStreamModel};
use super::HarError;
use crate::csi::AmplitudeWindow;
use crate::nn::optim::{Adam, Sgd};
use crate::nn::tensor::Tensor;
use crate::nn::Graph;
use crate::rng::DetRng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub optimizer: OptimizerKind,
    /// Seeds batch shuffling and dropout; forked per epoch.
    pub rng_seed: u64,
    /// Stop as soon as an epoch's test accuracy reaches this value.
    pub target_test_acc: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 16,
            lr: 1e-3,
            optimizer: OptimizerKind::Adam,
            rng_seed: 0,
            target_test_acc: None,
        }
    }
}

/// Metrics for one epoch. Epoch 0 is the untrained model; for later epochs
/// `train_acc` and `avg_loss` are measured on the fly over the training
/// batches (with dropout active), and `test_acc` by a clean eval pass.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_acc: f64,
    pub test_acc: f64,
    pub avg_loss: f64,
}

pub struct TrainOutcome {
    /// Model state after the last epoch run.
    pub model: TwoStreamModel,
    /// Model state at the epoch with the highest test accuracy (earliest on
    /// ties).
    pub best_model: TwoStreamModel,
    pub best_epoch: usize,
    pub history: Vec<EpochRecord>,
    /// First epoch whose test accuracy reached `target_test_acc`, if any.
    pub target_reached_at: Option<usize>,
}

enum Optimizer {
    Sgd(Sgd),
    Adam(Adam),
}

impl Optimizer {
    fn step(&mut self, params: &mut crate::nn::ParamSet) {
        match self {
            Optimizer::Sgd(o) => o.step(params),
            Optimizer::Adam(o) => o.step(params),
        }
    }
}

/// Stack labeled windows into a `[batch, t, f]` tensor plus a label vector.
pub fn batch_tensor(
    windows: &[AmplitudeWindow],
    indices: &[usize],
) -> Result<(Tensor, Vec<usize>), HarError> {
    if indices.is_empty() {
        return Err(HarError::InvalidData("empty batch".into()));
    }
    let (t, f) = (windows[indices[0]].t, windows[indices[0]].f);
    let mut data = Vec::with_capacity(indices.len() * t * f);
    let mut labels = Vec::with_capacity(indices.len());
    for &i in indices {
        let w = &windows[i];
        if w.t != t || w.f != f {
            return Err(HarError::InvalidData(format!(
                "window {} is {}x{}, expected {}x{}",
                w.source_id, w.t, w.f, t, f
            )));
        }
        data.extend_from_slice(&w.data);
        labels.push(w.label.ok_or_else(|| {
            HarError::InvalidData(format!("window {} has no label", w.source_id))
        })?);
    }
    let x = Tensor::from_vec(&[indices.len(), t, f], data);
    Ok((x, labels))
}

/// Accuracy of the model over `windows`, eval mode, batched.
pub fn accuracy(model: &TwoStreamModel, windows: &[AmplitudeWindow]) -> Result<f64, HarError> {
    if windows.is_empty() {
        return Err(HarError::InvalidData("empty evaluation set".into()));
    }
    let mut correct = 0usize;
    let all: Vec<usize> = (0..windows.len()).collect();
    for chunk in all.chunks(32) {
        let (x, labels) = batch_tensor(windows, chunk)?;
        let mut g = Graph::new();
        let pass = model.forward(&mut g, &x, Mode::Eval, None)?;
        let logits = g.value(pass.logits);
        for (row, &label) in labels.iter().enumerate() {
            if argmax_row(logits, row) == label {
                correct += 1;
            }
        }
    }
    Ok(correct as f64 / windows.len() as f64)
}

fn argmax_row(logits: &Tensor, row: usize) -> usize {
    let n = logits.shape()[1];
    let data = logits.data();
    let mut best = 0;
    let mut best_v = f64::NEG_INFINITY;
    for c in 0..n {
        let v = data[row * n + c];
        if v > best_v {
            best = c;
            best_v = v;
        }
    }
    best
}

/// Mean cross-entropy of the model over `windows`, eval mode.
pub fn mean_loss(model: &TwoStreamModel, windows: &[AmplitudeWindow]) -> Result<f64, HarError> {
    let mut total = 0.0;
    let all: Vec<usize> = (0..windows.len()).collect();
    for chunk in all.chunks(32) {
        let (x, labels) = batch_tensor(windows, chunk)?;
        let mut g = Graph::new();
        let pass = model.forward(&mut g, &x, Mode::Eval, None)?;
        let loss = g.cross_entropy(pass.logits, &labels)?;
        total += g.value(loss).data()[0] * labels.len() as f64;
    }
    Ok(total / windows.len() as f64)
}

/// Trains `model` in place semantics-wise (the outcome owns the final model).
/// `on_epoch` sees every appended record together with the current model, so
/// callers can checkpoint or log as training goes.
pub fn train(
    mut model: TwoStreamModel,
    train_set: &[AmplitudeWindow],
    test_set: &[AmplitudeWindow],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord, &TwoStreamModel),
) -> Result<TrainOutcome, HarError> {
    if cfg.batch_size == 0 {
        return Err(HarError::InvalidConfig("batch_size must be positive".into()));
    }
    if train_set.is_empty() || test_set.is_empty() {
        return Err(HarError::InvalidData(
            "training needs non-empty train and test sets".into(),
        ));
    }

    let mut optimizer = match cfg.optimizer {
        OptimizerKind::Sgd => Optimizer::Sgd(Sgd::new(cfg.lr)),
        OptimizerKind::Adam => Optimizer::Adam(Adam::new(cfg.lr)),
    };
    let root_rng = DetRng::new(cfg.rng_seed);

    let init = EpochRecord {
        epoch: 0,
        train_acc: accuracy(&model, train_set)?,
        test_acc: accuracy(&model, test_set)?,
        avg_loss: mean_loss(&model, train_set)?,
    };
    on_epoch(&init, &model);
    let mut history = vec![init.clone()];
    let mut best_model = model.clone();
    let mut best_epoch = 0usize;
    let mut best_acc = init.test_acc;
    let mut target_reached_at =
        cfg.target_test_acc.filter(|&t| init.test_acc >= t).map(|_| 0);

    if target_reached_at.is_none() {
        for epoch in 1..=cfg.epochs {
            let mut shuffle_rng = root_rng.fork(&format!("epoch/{epoch}/shuffle"));
            let mut dropout_rng = root_rng.fork(&format!("epoch/{epoch}/dropout"));
            let mut order: Vec<usize> = (0..train_set.len()).collect();
            shuffle_rng.shuffle(&mut order);

            let mut loss_sum = 0.0;
            let mut correct = 0usize;
            for (batch_idx, chunk) in order.chunks(cfg.batch_size).enumerate() {
                let (x, labels) = batch_tensor(train_set, chunk)?;
                let mut g = Graph::new();
                let pass = model.forward(&mut g, &x, Mode::Train, Some(&mut dropout_rng))?;
                let loss = g.cross_entropy(pass.logits, &labels)?;
                let loss_v = g.value(loss).data()[0];
                if !loss_v.is_finite() {
                    return Err(HarError::Numerical(format!(
                        "non-finite loss {loss_v} at epoch {epoch} batch {batch_idx}"
                    )));
                }
                loss_sum += loss_v * labels.len() as f64;
                let logits = g.value(pass.logits);
                for (row, &label) in labels.iter().enumerate() {
                    if argmax_row(logits, row) == label {
                        correct += 1;
                    }
                }

                let grads = g.backward(loss).map_err(|e| HarError::Numerical(e.to_string()))?;
                model.params.zero_grads();
                model.accumulate_grads(&grads, &pass);
                optimizer.step(&mut model.params);
            }

            let record = EpochRecord {
                epoch,
                train_acc: correct as f64 / train_set.len() as f64,
                test_acc: accuracy(&model, test_set)?,
                avg_loss: loss_sum / train_set.len() as f64,
            };
            on_epoch(&record, &model);
            if record.test_acc > best_acc {
                best_acc = record.test_acc;
                best_epoch = epoch;
                best_model = model.clone();
            }
            let reached = cfg.target_test_acc.is_some_and(|t| record.test_acc >= t);
            history.push(record);
            if reached {
                target_reached_at = Some(epoch);
                break;
            }
        }
    }

    Ok(TrainOutcome {
        model,
        best_model,
        best_epoch,
        history,
        target_reached_at,
    })
}
