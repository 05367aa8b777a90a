//! Channel-state-information data model: complex channel snapshots, the
//! linear received-signal model `Y = H X + N`, and amplitude feature
//! extraction.
//!
//! Feature vectors use antenna-pair-major, subcarrier-minor flattening:
//! `index = ((rx * n_tx) + tx) * n_sub + sub`. For the reference 3x1x30
//! geometry this is the familiar 90-column layout.

use crate::rng::DetRng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CsiError {
    #[error("invalid frame: {0}")]
    InvalidFrame(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
}

/// One complex channel gain.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ComplexSample {
    pub re: f64,
    pub im: f64,
}

impl ComplexSample {
    pub fn new(re: f64, im: f64) -> Self {
        Self { re, im }
    }

    pub fn amplitude(self) -> f64 {
        (self.re * self.re + self.im * self.im).sqrt()
    }

    pub fn is_finite(self) -> bool {
        self.re.is_finite() && self.im.is_finite()
    }
}

/// Noise floor sentinel meaning "not reported by the radio".
pub const NOISE_FLOOR_UNKNOWN: i8 = -127;

/// One channel measurement: a complex gain per (rx, tx, subcarrier) plus the
/// radio metadata that came with it.
#[derive(Clone, Debug, PartialEq)]
pub struct CsiFrame {
    /// Seconds; monotone within a trace.
    pub timestamp: f64,
    pub n_rx: usize,
    pub n_tx: usize,
    pub n_sub: usize,
    /// Row-major `[n_rx][n_tx][n_sub]`.
    pub csi: Vec<ComplexSample>,
    /// Per-antenna RSSI in dB; unused antennas carry 0.
    pub rssi: [u8; 3],
    /// Automatic gain control, dB.
    pub agc: u8,
    /// dBm; [`NOISE_FLOOR_UNKNOWN`] when the radio did not report one.
    pub noise_floor: i8,
}

impl CsiFrame {
    /// Frame with every gain zero; useful as a canvas for builders and tests.
    pub fn zeroed(n_rx: usize, n_tx: usize, n_sub: usize) -> Self {
        Self {
            timestamp: 0.0,
            n_rx,
            n_tx,
            n_sub,
            csi: vec![ComplexSample::default(); n_rx * n_tx * n_sub],
            rssi: [0; 3],
            agc: 0,
            noise_floor: NOISE_FLOOR_UNKNOWN,
        }
    }

    /// Antenna-pair-major, subcarrier-minor flattened index.
    pub fn flat_index(&self, rx: usize, tx: usize, sub: usize) -> usize {
        ((rx * self.n_tx) + tx) * self.n_sub + sub
    }

    pub fn get(&self, rx: usize, tx: usize, sub: usize) -> ComplexSample {
        self.csi[self.flat_index(rx, tx, sub)]
    }

    pub fn set(&mut self, rx: usize, tx: usize, sub: usize, v: ComplexSample) {
        let i = self.flat_index(rx, tx, sub);
        self.csi[i] = v;
    }

    /// Feature count of the flattened amplitude vector.
    pub fn n_features(&self) -> usize {
        self.n_rx * self.n_tx * self.n_sub
    }

    pub fn validate(&self) -> Result<(), CsiError> {
        if !(1..=3).contains(&self.n_rx) || !(1..=3).contains(&self.n_tx) {
            return Err(CsiError::InvalidFrame(format!(
                "antenna counts out of range: n_rx={}, n_tx={}",
                self.n_rx, self.n_tx
            )));
        }
        if self.n_sub == 0 {
            return Err(CsiError::InvalidFrame("n_sub must be >= 1".into()));
        }
        if self.csi.len() != self.n_rx * self.n_tx * self.n_sub {
            return Err(CsiError::InvalidFrame(format!(
                "csi length {} does not match {}x{}x{}",
                self.csi.len(),
                self.n_rx,
                self.n_tx,
                self.n_sub
            )));
        }
        if !self.timestamp.is_finite() {
            return Err(CsiError::InvalidFrame("non-finite timestamp".into()));
        }
        if let Some(i) = self.csi.iter().position(|s| !s.is_finite()) {
            return Err(CsiError::InvalidFrame(format!(
                "non-finite sample at flat index {i}"
            )));
        }
        Ok(())
    }
}

/// Configuration for synthetic channel realizations.
#[derive(Clone, Debug)]
pub struct SynthChannelConfig {
    pub n_rx: usize,
    pub n_tx: usize,
    pub n_sub: usize,
    /// Samples per transmit frame.
    pub frame_len: usize,
    /// Standard deviation of the additive Gaussian noise (per real/imag part).
    pub noise_std: f64,
    pub rng_seed: u64,
}

impl SynthChannelConfig {
    pub fn validate(&self) -> Result<(), CsiError> {
        if self.frame_len == 0 {
            return Err(CsiError::InvalidFrame("frame_len must be >= 1".into()));
        }
        if !(self.noise_std >= 0.0) {
            return Err(CsiError::InvalidFrame("noise_std must be >= 0".into()));
        }
        Ok(())
    }
}

/// A time-by-feature amplitude matrix, the classifier's input unit.
#[derive(Clone, Debug, PartialEq)]
pub struct AmplitudeWindow {
    /// Row-major `[t][f]`.
    pub data: Vec<f64>,
    pub t: usize,
    pub f: usize,
    pub sample_rate: f64,
    pub label: Option<usize>,
    pub source_id: String,
}

impl AmplitudeWindow {
    pub fn new(t: usize, f: usize, sample_rate: f64, source_id: impl Into<String>) -> Self {
        Self {
            data: vec![0.0; t * f],
            t,
            f,
            sample_rate,
            label: None,
            source_id: source_id.into(),
        }
    }

    pub fn row(&self, ti: usize) -> &[f64] {
        &self.data[ti * self.f..(ti + 1) * self.f]
    }

    pub fn row_mut(&mut self, ti: usize) -> &mut [f64] {
        &mut self.data[ti * self.f..(ti + 1) * self.f]
    }

    pub fn validate(&self) -> Result<(), CsiError> {
        if self.t == 0 {
            return Err(CsiError::InvalidFrame("window must have T >= 1".into()));
        }
        if self.data.len() != self.t * self.f {
            return Err(CsiError::InvalidFrame(format!(
                "data length {} does not match {}x{}",
                self.data.len(),
                self.t,
                self.f
            )));
        }
        if let Some(i) = self.data.iter().position(|v| !v.is_finite()) {
            return Err(CsiError::InvalidFrame(format!(
                "non-finite amplitude at index {i}"
            )));
        }
        Ok(())
    }
}

/// Flattened amplitude vector of a frame, antenna-pair-major.
pub fn amplitude(frame: &CsiFrame) -> Vec<f64> {
    frame.csi.iter().map(|s| s.amplitude()).collect()
}

/// Element-wise `20 * log10(max(a, floor))`.
pub fn to_db(a: &[f64], floor: f64) -> Vec<f64> {
    assert!(floor > 0.0, "dB floor must be positive");
    a.iter().map(|&v| 20.0 * v.max(floor).log10()).collect()
}

/// Received-signal model for one subcarrier: `Y = H_s X + N` with complex
/// `H_s` taken from `frame` at subcarrier `sub`, real transmit matrix
/// `x: [n_tx][frame_len]`, and i.i.d. Gaussian noise of `cfg.noise_std` on
/// real and imaginary parts. Returns `y: [n_rx][frame_len]` complex samples.
/// Deterministic for a fixed `cfg.rng_seed`.
pub fn apply_channel(
    frame: &CsiFrame,
    cfg: &SynthChannelConfig,
    sub: usize,
    x: &[f64],
) -> Result<Vec<ComplexSample>, CsiError> {
    cfg.validate()?;
    if frame.n_rx != cfg.n_rx || frame.n_tx != cfg.n_tx || frame.n_sub != cfg.n_sub {
        return Err(CsiError::DimensionMismatch(format!(
            "frame geometry {}x{}x{} does not match config {}x{}x{}",
            frame.n_rx, frame.n_tx, frame.n_sub, cfg.n_rx, cfg.n_tx, cfg.n_sub
        )));
    }
    if sub >= frame.n_sub {
        return Err(CsiError::DimensionMismatch(format!(
            "subcarrier {} out of range 0..{}",
            sub, frame.n_sub
        )));
    }
    if x.len() != cfg.n_tx * cfg.frame_len {
        return Err(CsiError::DimensionMismatch(format!(
            "transmit matrix has {} values, expected {}x{}",
            x.len(),
            cfg.n_tx,
            cfg.frame_len
        )));
    }

    let mut rng = DetRng::new(cfg.rng_seed);
    let mut y = vec![ComplexSample::default(); cfg.n_rx * cfg.frame_len];
    for rx in 0..cfg.n_rx {
        for ti in 0..cfg.frame_len {
            let mut re = 0.0;
            let mut im = 0.0;
            for tx in 0..cfg.n_tx {
                let h = frame.get(rx, tx, sub);
                let xv = x[tx * cfg.frame_len + ti];
                re += h.re * xv;
                im += h.im * xv;
            }
            if cfg.noise_std > 0.0 {
                re += rng.normal_scaled(0.0, cfg.noise_std);
                im += rng.normal_scaled(0.0, cfg.noise_std);
            }
            y[rx * cfg.frame_len + ti] = ComplexSample::new(re, im);
        }
    }
    Ok(y)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn identity_frame(n: usize, n_sub: usize) -> CsiFrame {
        let mut f = CsiFrame::zeroed(n, n, n_sub);
        for i in 0..n {
            for s in 0..n_sub {
                f.set(i, i, s, ComplexSample::new(1.0, 0.0));
            }
        }
        f
    }

    #[test]
    fn amplitude_of_pythagorean_sample_is_five() {
        let mut f = CsiFrame::zeroed(1, 1, 1);
        f.set(0, 0, 0, ComplexSample::new(3.0, 4.0));
        assert_eq!(amplitude(&f), vec![5.0]);
    }

    #[test]
    fn amplitude_of_zero_frame_is_zero() {
        let f = CsiFrame::zeroed(3, 1, 30);
        assert!(amplitude(&f).iter().all(|&v| v == 0.0));
        assert_eq!(amplitude(&f).len(), 90);
    }

    #[test]
    fn amplitude_matches_elementwise_oracle() {
        let mut rng = DetRng::new(42);
        let mut f = CsiFrame::zeroed(3, 2, 5);
        for s in f.csi.iter_mut() {
            *s = ComplexSample::new(rng.normal(), rng.normal());
        }
        let got = amplitude(&f);
        // brute-force oracle: walk the nested dims in flattening order
        let mut want = Vec::new();
        for rx in 0..3 {
            for tx in 0..2 {
                for sub in 0..5 {
                    let s = f.get(rx, tx, sub);
                    want.push((s.re * s.re + s.im * s.im).sqrt());
                }
            }
        }
        assert_eq!(got, want);
    }

    #[test]
    fn to_db_of_unit_is_zero() {
        assert_eq!(to_db(&[1.0], 1e-12), vec![0.0]);
    }

    #[test]
    fn to_db_of_decade_is_twenty() {
        let v = to_db(&[10.0], 1e-12);
        assert!((v[0] - 20.0).abs() < 1e-12);
    }

    #[test]
    fn to_db_clamps_zero_to_floor() {
        let v = to_db(&[0.0], 1e-12);
        assert!((v[0] + 240.0).abs() < 1e-9);
    }

    #[test]
    fn identity_channel_passes_input_through() {
        let f = identity_frame(2, 1);
        let cfg = SynthChannelConfig {
            n_rx: 2,
            n_tx: 2,
            n_sub: 1,
            frame_len: 4,
            noise_std: 0.0,
            rng_seed: 0,
        };
        let x: Vec<f64> = (0..8).map(|i| i as f64).collect();
        let y = apply_channel(&f, &cfg, 0, &x).unwrap();
        for rx in 0..2 {
            for ti in 0..4 {
                let got = y[rx * 4 + ti];
                assert_eq!(got.re, x[rx * 4 + ti]);
                assert_eq!(got.im, 0.0);
            }
        }
    }

    #[test]
    fn zero_input_yields_zero_output_without_noise() {
        let f = identity_frame(3, 2);
        let cfg = SynthChannelConfig {
            n_rx: 3,
            n_tx: 3,
            n_sub: 2,
            frame_len: 5,
            noise_std: 0.0,
            rng_seed: 1,
        };
        let y = apply_channel(&f, &cfg, 1, &vec![0.0; 15]).unwrap();
        assert!(y.iter().all(|s| s.re == 0.0 && s.im == 0.0));
    }

    #[test]
    fn two_by_two_channel_matches_matmul_plus_noise_oracle() {
        let mut f = CsiFrame::zeroed(2, 2, 1);
        f.set(0, 0, 0, ComplexSample::new(1.0, 0.5));
        f.set(0, 1, 0, ComplexSample::new(-0.5, 2.0));
        f.set(1, 0, 0, ComplexSample::new(0.25, -1.0));
        f.set(1, 1, 0, ComplexSample::new(3.0, 0.0));
        let cfg = SynthChannelConfig {
            n_rx: 2,
            n_tx: 2,
            n_sub: 1,
            frame_len: 3,
            noise_std: 0.1,
            rng_seed: 99,
        };
        let x = vec![1.0, 2.0, 3.0, -1.0, 0.0, 4.0];
        let y = apply_channel(&f, &cfg, 0, &x).unwrap();

        // independent oracle: explicit loops plus the same noise stream
        let mut rng = DetRng::new(99);
        for rx in 0..2 {
            for ti in 0..3 {
                let mut re = 0.0;
                let mut im = 0.0;
                for tx in 0..2 {
                    let h = f.get(rx, tx, 0);
                    re += h.re * x[tx * 3 + ti];
                    im += h.im * x[tx * 3 + ti];
                }
                re += rng.normal_scaled(0.0, 0.1);
                im += rng.normal_scaled(0.0, 0.1);
                let got = y[rx * 3 + ti];
                assert!((got.re - re).abs() < 1e-12 && (got.im - im).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn apply_channel_rejects_mismatched_transmit_shape() {
        let f = identity_frame(2, 1);
        let cfg = SynthChannelConfig {
            n_rx: 2,
            n_tx: 2,
            n_sub: 1,
            frame_len: 4,
            noise_std: 0.0,
            rng_seed: 0,
        };
        assert!(matches!(
            apply_channel(&f, &cfg, 0, &[0.0; 7]),
            Err(CsiError::DimensionMismatch(_))
        ));
    }

    #[test]
    fn validate_catches_shape_lies() {
        let mut f = CsiFrame::zeroed(2, 1, 3);
        f.csi.pop();
        assert!(f.validate().is_err());

        let f = CsiFrame::zeroed(4, 1, 3);
        assert!(f.validate().is_err(), "n_rx=4 exceeds hardware range");

        let mut f = CsiFrame::zeroed(2, 1, 3);
        f.set(1, 0, 2, ComplexSample::new(f64::NAN, 0.0));
        assert!(f.validate().is_err());
    }
}
