//! Categorical distribution over discrete actions, parameterized by logits.

use crate::rng::RngHandle;

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    logits.iter().map(|l| l - lse).collect()
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    log_softmax(logits).into_iter().map(f64::exp).collect()
}

pub fn entropy(logits: &[f64]) -> f64 {
    log_softmax(logits)
        .iter()
        .map(|lp| {
            let p = lp.exp();
            if p > 0.0 {
                -p * lp
            } else {
                0.0
            }
        })
        .sum()
}

/// Draw an action; returns it with its log-probability.
pub fn sample_action(logits: &[f64], rng: &mut RngHandle) -> (usize, f64) {
    let logp = log_softmax(logits);
    let u = rng.uniform();
    let mut acc = 0.0;
    let mut action = logp.len() - 1;
    for (i, lp) in logp.iter().enumerate() {
        acc += lp.exp();
        if u < acc {
            action = i;
            break;
        }
    }
    (action, logp[action])
}

/// Most probable action (lowest index on ties) and its log-probability.
pub fn greedy_action(logits: &[f64]) -> (usize, f64) {
    let logp = log_softmax(logits);
    let mut best = 0;
    for (i, lp) in logp.iter().enumerate() {
        if *lp > logp[best] {
            best = i;
        }
    }
    (best, logp[best])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::make_rng;

    #[test]
    fn near_deterministic_logits() {
        let mut logits = vec![0.0; 8];
        logits[0] = 1e6;
        let mut rng = make_rng(0, 0);
        for _ in 0..10_000 {
            assert_eq!(sample_action(&logits, &mut rng).0, 0);
        }
    }

    #[test]
    fn uniform_logits_give_uniform_frequencies() {
        let logits = vec![0.3; 8];
        let mut rng = make_rng(1, 0);
        let mut counts = [0usize; 8];
        let n = 100_000;
        for _ in 0..n {
            counts[sample_action(&logits, &mut rng).0] += 1;
        }
        for c in counts {
            let f = c as f64 / n as f64;
            assert!((f - 0.125).abs() < 0.01, "{f}");
        }
    }

    #[test]
    fn log_prob_is_consistent() {
        let logits = [0.5, -1.0, 2.0, 0.0, 0.1, -0.3, 1.2, 0.7];
        let probs = softmax(&logits);
        let mut rng = make_rng(2, 0);
        for _ in 0..1000 {
            let (a, lp) = sample_action(&logits, &mut rng);
            assert!((lp.exp() - probs[a]).abs() < 1e-12);
        }
        assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn entropy_bounds() {
        assert!((entropy(&[0.0; 8]) - 8f64.ln()).abs() < 1e-12);
        let mut sharp = vec![0.0; 8];
        sharp[3] = 1e6;
        assert!(entropy(&sharp).abs() < 1e-12);
    }

    #[test]
    fn greedy_picks_max() {
        assert_eq!(greedy_action(&[0.1, 0.9, 0.9, -1.0]).0, 1);
    }
}
