//! Stratified train/test splitting of labeled windows.

use super::HarError;
use crate::csi::AmplitudeWindow;
use crate::rng::DetRng;

#[derive(Clone, Debug)]
pub struct SplitSpec {
    /// Fraction of each class assigned to the training split (floored).
    pub train_fraction: f64,
    pub rng_seed: u64,
    pub stratified: bool,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train_fraction: 0.8,
            rng_seed: 0,
            stratified: true,
        }
    }
}

/// Index-level split: (train indices, test indices) into the input slice.
pub fn split_indices(
    windows: &[AmplitudeWindow],
    spec: &SplitSpec,
) -> Result<(Vec<usize>, Vec<usize>), HarError> {
    if !(spec.train_fraction > 0.0 && spec.train_fraction < 1.0) {
        return Err(HarError::InvalidConfig(format!(
            "train_fraction {} must be in (0, 1)",
            spec.train_fraction
        )));
    }
    if windows.is_empty() {
        return Err(HarError::InvalidData("cannot split an empty dataset".into()));
    }
    let n_classes = windows
        .iter()
        .map(|w| w.label.map(|l| l + 1).unwrap_or(0))
        .max()
        .unwrap_or(0);
    if windows.iter().any(|w| w.label.is_none()) {
        return Err(HarError::InvalidData("splitting needs labeled windows".into()));
    }

    let mut rng = DetRng::new(spec.rng_seed).fork("split");
    let mut train = Vec::new();
    let mut test = Vec::new();

    if spec.stratified {
        for class in 0..n_classes {
            let mut members: Vec<usize> = windows
                .iter()
                .enumerate()
                .filter(|(_, w)| w.label == Some(class))
                .map(|(i, _)| i)
                .collect();
            if members.is_empty() {
                return Err(HarError::InvalidData(format!(
                    "class {class} has no samples"
                )));
            }
            rng.shuffle(&mut members);
            let n_train = (spec.train_fraction * members.len() as f64).floor() as usize;
            train.extend_from_slice(&members[..n_train]);
            test.extend_from_slice(&members[n_train..]);
        }
    } else {
        let mut all: Vec<usize> = (0..windows.len()).collect();
        rng.shuffle(&mut all);
        let n_train = (spec.train_fraction * all.len() as f64).floor() as usize;
        train.extend_from_slice(&all[..n_train]);
        test.extend_from_slice(&all[n_train..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

/// Materialized split: cloned (train, test) window vectors.
pub fn split(
    windows: &[AmplitudeWindow],
    spec: &SplitSpec,
) -> Result<(Vec<AmplitudeWindow>, Vec<AmplitudeWindow>), HarError> {
    let (tr, te) = split_indices(windows, spec)?;
    Ok((
        tr.iter().map(|&i| windows[i].clone()).collect(),
        te.iter().map(|&i| windows[i].clone()).collect(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labeled(counts: &[usize]) -> Vec<AmplitudeWindow> {
        let mut out = Vec::new();
        for (class, &n) in counts.iter().enumerate() {
            for i in 0..n {
                let mut w = AmplitudeWindow::new(1, 1, 1.0, format!("c{class}i{i}"));
                w.label = Some(class);
                out.push(w);
            }
        }
        out
    }

    #[test]
    fn deployment_mix_splits_107_28() {
        let ws = labeled(&[40, 47, 48]);
        let (tr, te) = split_indices(&ws, &SplitSpec::default()).unwrap();
        assert_eq!(tr.len(), 32 + 37 + 38);
        assert_eq!(te.len(), 28);
        assert_eq!(tr.len() + te.len(), 135);
    }

    #[test]
    fn pretrain_mix_splits_445_112() {
        // three classes of 79 keep floor(63.2) = 63, four classes of 80 keep
        // exactly 64, so 557 windows split 445 train / 112 test
        let ws = labeled(&[79, 79, 80, 80, 80, 79, 80]);
        let (tr, te) = split_indices(&ws, &SplitSpec::default()).unwrap();
        assert_eq!(tr.len(), 3 * 63 + 4 * 64);
        assert_eq!(tr.len(), 445);
        assert_eq!(te.len(), 112);
    }

    #[test]
    fn per_class_counts_follow_floor() {
        let ws = labeled(&[10, 7]);
        let (tr, _) = split(&ws, &SplitSpec::default()).unwrap();
        let count = |c| tr.iter().filter(|w| w.label == Some(c)).count();
        assert_eq!(count(0), 8);
        assert_eq!(count(1), 5); // floor(0.8 * 7)
    }

    #[test]
    fn same_seed_same_assignment() {
        let ws = labeled(&[20, 20]);
        let spec = SplitSpec {
            rng_seed: 9,
            ..SplitSpec::default()
        };
        let a = split_indices(&ws, &spec).unwrap();
        let b = split_indices(&ws, &spec).unwrap();
        assert_eq!(a, b);
        let other = split_indices(
            &ws,
            &SplitSpec {
                rng_seed: 10,
                ..SplitSpec::default()
            },
        )
        .unwrap();
        assert_ne!(a, other, "different seeds should shuffle differently");
    }

    #[test]
    fn train_and_test_partition_the_dataset() {
        let ws = labeled(&[13, 9, 21]);
        let (tr, te) = split_indices(&ws, &SplitSpec::default()).unwrap();
        let mut all: Vec<usize> = tr.iter().chain(te.iter()).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..43).collect::<Vec<_>>());
    }

    #[test]
    fn empty_class_is_an_error() {
        let mut ws = labeled(&[3]);
        ws[1].label = Some(2); // class 1 now empty
        assert!(split_indices(&ws, &SplitSpec::default()).is_err());
    }
}
