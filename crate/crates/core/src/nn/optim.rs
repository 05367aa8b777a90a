//! Gradient-descent optimizers over a [`ParamSet`].
//!
//! Both optimizers visit parameters in insertion order and skip frozen ones,
//! so a step is deterministic for a given set of gradients.

use super::ParamSet;

/// Plain stochastic gradient descent.
pub struct Sgd {
    pub lr: f64,
}

impl Sgd {
    pub fn new(lr: f64) -> Self {
        Self { lr }
    }

    pub fn step(&mut self, params: &mut ParamSet) {
        for p in params.iter_mut() {
            if !p.trainable {
                continue;
            }
            for (w, &g) in p.tensor.data_mut().iter_mut().zip(p.grad.data()) {
                *w -= self.lr * g;
            }
        }
    }
}

/// Adam with bias-corrected first and second moments.
///
/// Moment buffers are keyed by parameter name, so the same optimizer instance
/// keeps working if the set is rebuilt with identical names (checkpoint
/// restore does exactly that).
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    moments: Vec<(String, Vec<f64>, Vec<f64>)>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            moments: Vec::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    fn moment_index(&mut self, name: &str, len: usize) -> usize {
        if let Some(i) = self.moments.iter().position(|(n, _, _)| n == name) {
            return i;
        }
        self.moments
            .push((name.to_string(), vec![0.0; len], vec![0.0; len]));
        self.moments.len() - 1
    }

    pub fn step(&mut self, params: &mut ParamSet) {
        self.step += 1;
        let t = self.step as f64;
        let bc1 = 1.0 - self.beta1.powf(t);
        let bc2 = 1.0 - self.beta2.powf(t);
        for p in params.iter_mut() {
            if !p.trainable {
                continue;
            }
            let idx = {
                let len = p.tensor.numel();
                let name = p.name.clone();
                self.moment_index(&name, len)
            };
            let (_, m, v) = &mut self.moments[idx];
            assert_eq!(m.len(), p.tensor.numel(), "parameter {} changed size", p.name);
            for (i, (w, &g)) in p
                .tensor
                .data_mut()
                .iter_mut()
                .zip(p.grad.data())
                .enumerate()
            {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                *w -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }
}
