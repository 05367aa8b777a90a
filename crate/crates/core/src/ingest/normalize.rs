//! Per-feature z-score normalization. Statistics are fit on the training
//! split only and applied everywhere else.

use super::IngestError;
use crate::csi::AmplitudeWindow;
use serde::{Deserialize, Serialize};

/// Smallest allowed standard deviation; constant features normalize to zero.
pub const STD_FLOOR: f64 = 1e-8;

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct NormStats {
    pub mean: Vec<f64>,
    /// Floored at [`STD_FLOOR`].
    pub std: Vec<f64>,
}

impl NormStats {
    pub fn n_features(&self) -> usize {
        self.mean.len()
    }
}

/// Two-pass mean/std over every row of the given windows.
pub fn fit(windows: &[AmplitudeWindow]) -> Result<NormStats, IngestError> {
    let f = match windows.first() {
        Some(w) => w.f,
        None => return Err(IngestError::InvalidData("cannot fit on zero windows".into())),
    };
    if windows.iter().any(|w| w.f != f) {
        return Err(IngestError::InvalidData(
            "windows disagree on feature count".into(),
        ));
    }
    let rows: usize = windows.iter().map(|w| w.t).sum();
    if rows < 2 {
        return Err(IngestError::InvalidData(format!(
            "need at least 2 rows to fit a normalizer, got {rows}"
        )));
    }

    let mut mean = vec![0.0; f];
    for w in windows {
        for ti in 0..w.t {
            for (m, &v) in mean.iter_mut().zip(w.row(ti)) {
                *m += v;
            }
        }
    }
    for m in mean.iter_mut() {
        *m /= rows as f64;
    }

    let mut var = vec![0.0; f];
    for w in windows {
        for ti in 0..w.t {
            for ((s, &v), &m) in var.iter_mut().zip(w.row(ti)).zip(&mean) {
                let d = v - m;
                *s += d * d;
            }
        }
    }
    let std = var
        .iter()
        .map(|s| (s / rows as f64).sqrt().max(STD_FLOOR))
        .collect();
    Ok(NormStats { mean, std })
}

/// `(x - mean) / std` per feature column, in place.
pub fn apply(stats: &NormStats, window: &mut AmplitudeWindow) {
    assert_eq!(window.f, stats.n_features(), "feature count mismatch");
    for ti in 0..window.t {
        for ((v, &m), &s) in window
            .row_mut(ti)
            .iter_mut()
            .zip(&stats.mean)
            .zip(&stats.std)
        {
            *v = (*v - m) / s;
        }
    }
}

pub fn applied(stats: &NormStats, window: &AmplitudeWindow) -> AmplitudeWindow {
    let mut w = window.clone();
    apply(stats, &mut w);
    w
}

/// Inverse transform `x * std + mean`, in place.
pub fn invert(stats: &NormStats, window: &mut AmplitudeWindow) {
    assert_eq!(window.f, stats.n_features(), "feature count mismatch");
    for ti in 0..window.t {
        for ((v, &m), &s) in window
            .row_mut(ti)
            .iter_mut()
            .zip(&stats.mean)
            .zip(&stats.std)
        {
            *v = *v * s + m;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::DetRng;

    fn random_windows(rng: &mut DetRng, n: usize, t: usize, f: usize) -> Vec<AmplitudeWindow> {
        (0..n)
            .map(|i| {
                let mut w = AmplitudeWindow::new(t, f, 100.0, format!("w{i}"));
                for v in w.data.iter_mut() {
                    *v = 5.0 + 2.0 * rng.normal();
                }
                w
            })
            .collect()
    }

    #[test]
    fn constant_column_floors_std_and_normalizes_to_zero() {
        let mut w = AmplitudeWindow::new(4, 2, 100.0, "c");
        for ti in 0..4 {
            w.row_mut(ti)[0] = 3.0; // constant
            w.row_mut(ti)[1] = ti as f64;
        }
        let stats = fit(std::slice::from_ref(&w)).unwrap();
        assert_eq!(stats.std[0], STD_FLOOR);
        let n = applied(&stats, &w);
        for ti in 0..4 {
            assert_eq!(n.row(ti)[0], 0.0);
        }
    }

    #[test]
    fn recovers_standardized_moments_against_two_pass_oracle() {
        let mut rng = DetRng::new(5);
        let windows = random_windows(&mut rng, 6, 50, 4);
        let stats = fit(&windows).unwrap();
        let normalized: Vec<AmplitudeWindow> =
            windows.iter().map(|w| applied(&stats, w)).collect();
        // oracle: explicit two-pass mean/var of the normalized data
        let rows: usize = normalized.iter().map(|w| w.t).sum();
        for fi in 0..4 {
            let mut mean = 0.0;
            for w in &normalized {
                for ti in 0..w.t {
                    mean += w.row(ti)[fi];
                }
            }
            mean /= rows as f64;
            let mut var = 0.0;
            for w in &normalized {
                for ti in 0..w.t {
                    let d = w.row(ti)[fi] - mean;
                    var += d * d;
                }
            }
            var /= rows as f64;
            assert!(mean.abs() < 1e-9, "feature {fi} mean {mean}");
            assert!((var.sqrt() - 1.0).abs() < 1e-9, "feature {fi} std {}", var.sqrt());
        }
    }

    #[test]
    fn single_window_normalized_with_own_stats_has_zero_column_means() {
        let mut rng = DetRng::new(6);
        let w = random_windows(&mut rng, 1, 30, 3).remove(0);
        let stats = fit(std::slice::from_ref(&w)).unwrap();
        let n = applied(&stats, &w);
        for fi in 0..3 {
            let mean: f64 = (0..n.t).map(|ti| n.row(ti)[fi]).sum::<f64>() / n.t as f64;
            assert!(mean.abs() < 1e-9);
        }
    }

    #[test]
    fn apply_then_invert_is_identity_within_tolerance() {
        let mut rng = DetRng::new(7);
        let windows = random_windows(&mut rng, 3, 40, 5);
        let stats = fit(&windows).unwrap();
        for w in &windows {
            let mut x = w.clone();
            apply(&stats, &mut x);
            invert(&stats, &mut x);
            for (a, b) in x.data.iter().zip(&w.data) {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn fitting_needs_two_rows() {
        let w = AmplitudeWindow::new(1, 2, 100.0, "tiny");
        assert!(fit(std::slice::from_ref(&w)).is_err());
        assert!(fit(&[]).is_err());
    }
}
