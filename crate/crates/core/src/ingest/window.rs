//! Segmentation of long amplitude recordings into fixed-length windows with
//! optional temporal mean-pooling.

use super::IngestError;
use crate::csi::AmplitudeWindow;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Normalization {
    None,
    ZscorePerFeature,
}

#[derive(Clone, Debug)]
pub struct WindowingConfig {
    /// Window length T in input samples, before pooling.
    pub window_len: usize,
    pub stride: usize,
    /// Temporal mean-pool factor; output length is `window_len / downsample`.
    pub downsample: usize,
    pub normalization: Normalization,
}

impl WindowingConfig {
    pub fn validate(&self) -> Result<(), IngestError> {
        if self.window_len == 0 || self.stride == 0 || self.downsample == 0 {
            return Err(IngestError::InvalidConfig(
                "window_len, stride and downsample must all be >= 1".into(),
            ));
        }
        if self.window_len % self.downsample != 0 {
            return Err(IngestError::InvalidConfig(format!(
                "window_len {} is not divisible by downsample {}",
                self.window_len, self.downsample
            )));
        }
        Ok(())
    }

    /// Output time length after pooling.
    pub fn pooled_len(&self) -> usize {
        self.window_len / self.downsample
    }
}

/// Number of windows for an input of `len` samples: floor((len-T)/stride)+1,
/// or 0 when the input is shorter than one window.
pub fn window_count(len: usize, cfg: &WindowingConfig) -> usize {
    if len < cfg.window_len {
        0
    } else {
        (len - cfg.window_len) / cfg.stride + 1
    }
}

/// Cut one recording into windows at offsets 0, stride, 2*stride, ... and
/// mean-pool each along time. An input shorter than one window yields an
/// empty sequence. Labels and source ids carry through; window k gets
/// source id `"<source>#<k>"` when more than one window is produced.
pub fn segment(input: &AmplitudeWindow, cfg: &WindowingConfig) -> Result<Vec<AmplitudeWindow>, IngestError> {
    cfg.validate()?;
    let n = window_count(input.t, cfg);
    let mut out = Vec::with_capacity(n);
    let t_out = cfg.pooled_len();
    for k in 0..n {
        let start = k * cfg.stride;
        let mut w = AmplitudeWindow::new(
            t_out,
            input.f,
            input.sample_rate / cfg.downsample as f64,
            if n == 1 {
                input.source_id.clone()
            } else {
                format!("{}#{k}", input.source_id)
            },
        );
        w.label = input.label;
        for to in 0..t_out {
            let row = w.row_mut(to);
            for ti in 0..cfg.downsample {
                let src = input.row(start + to * cfg.downsample + ti);
                for (o, &v) in row.iter_mut().zip(src) {
                    *o += v;
                }
            }
            for o in row.iter_mut() {
                *o /= cfg.downsample as f64;
            }
        }
        out.push(w);
    }
    Ok(out)
}

/// Segment every recording in a dataset, preserving order.
pub fn segment_all(
    inputs: &[AmplitudeWindow],
    cfg: &WindowingConfig,
) -> Result<Vec<AmplitudeWindow>, IngestError> {
    let mut out = Vec::new();
    for w in inputs {
        out.extend(segment(w, cfg)?);
    }
    Ok(out)
}
