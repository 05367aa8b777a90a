//! Streaming decision policy that turns per-window class probabilities into
//! discrete alarm events.

use serde::{Deserialize, Serialize};

/// A fall is declared only after `consecutive_k` windows in a row score the
/// fall class at or above `threshold`, and at most once per episode. The
/// episode re-arms once a window drops below the threshold.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecisionPolicy {
    pub fall_class: usize,
    pub threshold: f64,
    pub consecutive_k: usize,
}

impl Default for DecisionPolicy {
    fn default() -> Self {
        Self {
            fall_class: 0,
            threshold: 0.8,
            consecutive_k: 3,
        }
    }
}

/// Mutable per-stream state: how many qualifying windows in a row, and
/// whether the current episode has already fired.
#[derive(Clone, Debug, Default)]
pub struct PolicyState {
    pub run_length: usize,
    pub fired: bool,
}

/// One per-window decision. `fall_event` is true on exactly the window that
/// crosses the k-run threshold for the first time in an episode.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyDecision {
    pub window_index: usize,
    pub class: usize,
    pub confidence: f64,
    pub fall_event: bool,
}

impl DecisionPolicy {
    /// Advances the state by one window of class probabilities. Returns true
    /// when this window triggers a fall event.
    pub fn step(&self, state: &mut PolicyState, probs: &[f64]) -> bool {
        let p_fall = probs.get(self.fall_class).copied().unwrap_or(0.0);
        if p_fall >= self.threshold {
            state.run_length += 1;
        } else {
            state.run_length = 0;
            state.fired = false;
        }
        if state.run_length >= self.consecutive_k && !state.fired {
            state.fired = true;
            return true;
        }
        false
    }

    /// Variant for streams that carry only the predicted label and its
    /// confidence (the wire format): a window qualifies when it is the fall
    /// class at or above the threshold. Matches [`DecisionPolicy::step`]
    /// whenever the fall class is the argmax.
    pub fn step_label(&self, state: &mut PolicyState, is_fall: bool, confidence: f64) -> bool {
        if is_fall && confidence >= self.threshold {
            state.run_length += 1;
        } else {
            state.run_length = 0;
            state.fired = false;
        }
        if state.run_length >= self.consecutive_k && !state.fired {
            state.fired = true;
            return true;
        }
        false
    }

    /// Runs the policy over a stream of per-window probability vectors.
    /// Each decision carries the argmax class and its confidence; fall events
    /// are flagged on the triggering window.
    pub fn run(&self, prob_stream: &[Vec<f64>]) -> Vec<PolicyDecision> {
        let mut state = PolicyState::default();
        prob_stream
            .iter()
            .enumerate()
            .map(|(i, probs)| {
                let (class, confidence) = argmax(probs);
                let fall_event = self.step(&mut state, probs);
                PolicyDecision {
                    window_index: i,
                    class,
                    confidence,
                    fall_event,
                }
            })
            .collect()
    }
}

fn argmax(probs: &[f64]) -> (usize, f64) {
    let mut best = 0;
    let mut best_p = f64::NEG_INFINITY;
    for (i, &p) in probs.iter().enumerate() {
        if p > best_p {
            best = i;
            best_p = p;
        }
    }
    (best, best_p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::DetRng;

    fn fall_probs(ps: &[f64]) -> Vec<Vec<f64>> {
        ps.iter().map(|&p| vec![p, 1.0 - p]).collect()
    }

    #[test]
    fn three_in_a_row_fires_on_third() {
        let policy = DecisionPolicy::default();
        let decisions = policy.run(&fall_probs(&[0.95, 0.96, 0.97]));
        let events: Vec<usize> = decisions
            .iter()
            .filter(|d| d.fall_event)
            .map(|d| d.window_index)
            .collect();
        assert_eq!(events, vec![2]);
    }

    #[test]
    fn dip_resets_the_run() {
        let policy = DecisionPolicy::default();
        let decisions = policy.run(&fall_probs(&[0.95, 0.4, 0.95, 0.95, 0.95]));
        let events: Vec<usize> = decisions
            .iter()
            .filter(|d| d.fall_event)
            .map(|d| d.window_index)
            .collect();
        assert_eq!(events, vec![4]);
    }

    #[test]
    fn one_event_per_episode_until_rearm() {
        let policy = DecisionPolicy::default();
        // Six straight hits: one event, then the run keeps extending silently.
        let decisions = policy.run(&fall_probs(&[0.9; 6]));
        assert_eq!(decisions.iter().filter(|d| d.fall_event).count(), 1);

        // A sub-threshold window re-arms, so a fresh run fires again.
        let seq = [0.9, 0.9, 0.9, 0.9, 0.1, 0.9, 0.9, 0.9];
        let decisions = policy.run(&fall_probs(&seq));
        let events: Vec<usize> = decisions
            .iter()
            .filter(|d| d.fall_event)
            .map(|d| d.window_index)
            .collect();
        assert_eq!(events, vec![2, 7]);
    }

    #[test]
    fn threshold_is_inclusive() {
        let policy = DecisionPolicy::default();
        let decisions = policy.run(&fall_probs(&[0.8, 0.8, 0.8]));
        assert!(decisions[2].fall_event);
    }

    #[test]
    fn decisions_carry_argmax_class() {
        let policy = DecisionPolicy {
            fall_class: 2,
            ..DecisionPolicy::default()
        };
        let decisions = policy.run(&[vec![0.1, 0.7, 0.2], vec![0.05, 0.05, 0.9]]);
        assert_eq!(decisions[0].class, 1);
        assert!((decisions[0].confidence - 0.7).abs() < 1e-12);
        assert_eq!(decisions[1].class, 2);
        assert!(!decisions[0].fall_event);
    }

    /// Oracle: scan the probability sequence directly. An event happens at i
    /// when windows i-k+1..=i are all >= threshold and either i-k is below
    /// threshold territory (run start) or no event occurred since the last
    /// sub-threshold window.
    fn oracle_events(ps: &[f64], threshold: f64, k: usize) -> Vec<usize> {
        let mut events = Vec::new();
        let mut run = 0usize;
        let mut fired = false;
        for (i, &p) in ps.iter().enumerate() {
            if p >= threshold {
                run += 1;
            } else {
                run = 0;
                fired = false;
            }
            if run >= k && !fired {
                fired = true;
                events.push(i);
            }
        }
        events
    }

    #[test]
    fn label_step_matches_vector_step_when_fall_is_argmax() {
        let policy = DecisionPolicy::default();
        let mut rng = DetRng::new(78).fork("policy-label");
        for _ in 0..100 {
            // two-class streams where class 0 (fall) is argmax iff p >= 0.5,
            // and the threshold 0.8 only triggers on argmax-fall windows
            let ps: Vec<f64> = (0..40).map(|_| rng.uniform()).collect();
            let mut sv = PolicyState::default();
            let mut sl = PolicyState::default();
            for &p in &ps {
                let by_vec = policy.step(&mut sv, &[p, 1.0 - p]);
                let by_label = policy.step_label(&mut sl, p >= 0.5, p.max(1.0 - p));
                assert_eq!(by_vec, by_label, "p = {p}");
            }
        }
    }

    #[test]
    fn random_streams_match_scan_oracle() {
        let policy = DecisionPolicy::default();
        let mut rng = DetRng::new(77).fork("policy-oracle");
        for _ in 0..200 {
            let ps: Vec<f64> = (0..50).map(|_| rng.uniform()).collect();
            let got: Vec<usize> = policy
                .run(&fall_probs(&ps))
                .into_iter()
                .filter(|d| d.fall_event)
                .map(|d| d.window_index)
                .collect();
            assert_eq!(got, oracle_events(&ps, 0.8, 3));
        }
    }
}
