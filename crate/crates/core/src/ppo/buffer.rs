//! On-policy rollout storage and generalized advantage estimation.

use crate::env::OBS_DIM;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub obs: [f64; OBS_DIM],
    pub action: usize,
    pub log_prob: f64,
    pub value: f64,
    pub reward: f64,
    /// The episode ended after this step; the next value is not
    /// bootstrapped across the boundary.
    pub done: bool,
}

/// One environment's contiguous trajectory segment.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RolloutBuffer {
    capacity: usize,
    pub steps: Vec<Transition>,
}

impl RolloutBuffer {
    pub fn with_capacity(capacity: usize) -> Self {
        RolloutBuffer {
            capacity,
            steps: Vec::with_capacity(capacity),
        }
    }

    pub fn push(&mut self, t: Transition) {
        debug_assert!(self.steps.len() < self.capacity, "rollout buffer overflow");
        self.steps.push(t);
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.steps.len() == self.capacity
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }
}

/// Backward GAE recursion:
/// `δ_t = r_t + γ v_{t+1} (1 - done_t) - v_t`,
/// `A_t = δ_t + γλ (1 - done_t) A_{t+1}`, returns `A_t + v_t`.
/// `bootstrap_value` is the value of the state after the last step.
pub fn compute_gae(
    buffer: &RolloutBuffer,
    bootstrap_value: f64,
    gamma: f64,
    lambda: f64,
) -> (Vec<f64>, Vec<f64>) {
    let n = buffer.len();
    let mut adv = vec![0.0; n];
    let mut next_value = bootstrap_value;
    let mut next_adv = 0.0;
    for t in (0..n).rev() {
        let s = &buffer.steps[t];
        let live = if s.done { 0.0 } else { 1.0 };
        let delta = s.reward + gamma * next_value * live - s.value;
        next_adv = delta + gamma * lambda * live * next_adv;
        adv[t] = next_adv;
        next_value = s.value;
    }
    let returns = adv
        .iter()
        .zip(&buffer.steps)
        .map(|(a, s)| a + s.value)
        .collect();
    (adv, returns)
}

/// Shift and scale to zero mean and unit (population) standard deviation.
/// A constant input is only centered.
pub fn normalize_advantages(adv: &mut [f64]) {
    if adv.is_empty() {
        return;
    }
    let n = adv.len() as f64;
    let mean = adv.iter().sum::<f64>() / n;
    let var = adv.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    for a in adv.iter_mut() {
        *a -= mean;
        if std > 0.0 {
            *a /= std;
        }
    }
}
