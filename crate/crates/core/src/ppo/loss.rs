//! Clipped-surrogate PPO loss and its gradient.
//!
//! Per sample the minimized loss is
//! `-min(ρA, clip(ρ, 1-ε, 1+ε)A) + c_v (v - R)² - c_e H(π)`,
//! averaged over the minibatch.

use serde::{Deserialize, Serialize};

use crate::env::OBS_DIM;
use crate::par::Exec;

use super::dist::log_softmax;
use super::mlp::Mlp;

/// Samples per gradient work unit. Fixed so the reduction order, and hence
/// the result, does not depend on the thread count.
pub const GRAD_CHUNK: usize = 16;

/// One training sample with its frozen rollout-time quantities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub obs: [f64; OBS_DIM],
    pub action: usize,
    pub old_log_prob: f64,
    pub advantage: f64,
    pub ret: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossCoefs {
    pub clip_eps: f64,
    pub value_coef: f64,
    pub entropy_coef: f64,
}

impl LossCoefs {
    pub fn new(clip_eps: f64, value_coef: f64, entropy_coef: f64) -> Self {
        LossCoefs {
            clip_eps,
            value_coef,
            entropy_coef,
        }
    }
}

/// Mean loss components over a batch.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub total: f64,
    pub clip_fraction: f64,
    pub approx_kl: f64,
}

/// `min(ρA, clip(ρ)A)` and its derivative with respect to `ρ`.
pub fn clipped_surrogate(ratio: f64, adv: f64, eps: f64) -> (f64, f64) {
    let unclipped = ratio * adv;
    let clipped = ratio.clamp(1.0 - eps, 1.0 + eps) * adv;
    if unclipped <= clipped {
        (unclipped, adv)
    } else {
        // the clip branch is active and flat in ρ
        (clipped, 0.0)
    }
}

/// Loss terms of one sample plus `∂loss/∂logits` and `∂loss/∂value`,
/// where `loss = policy + c_v·value_sq - c_e·entropy`.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleGrad {
    pub policy: f64,
    pub value_sq: f64,
    pub entropy: f64,
    pub ratio: f64,
    pub log_ratio: f64,
    pub d_logits: Vec<f64>,
    pub d_value: f64,
}

pub fn sample_loss_grad(logits: &[f64], value: f64, s: &Sample, coefs: &LossCoefs) -> SampleGrad {
    let logp = log_softmax(logits);
    let probs: Vec<f64> = logp.iter().map(|l| l.exp()).collect();
    let log_ratio = logp[s.action] - s.old_log_prob;
    let ratio = log_ratio.exp();
    let (surr, d_surr_d_ratio) = clipped_surrogate(ratio, s.advantage, coefs.clip_eps);
    let entropy: f64 = -probs.iter().zip(&logp).map(|(p, l)| p * l).sum::<f64>();

    // d logπ(a)/dz_k = [k == a] - π_k ; dH/dz_k = -π_k (log π_k + H)
    let c_e = coefs.entropy_coef;
    let d_logits = probs
        .iter()
        .zip(&logp)
        .enumerate()
        .map(|(k, (&p, &lp))| {
            let onehot = if k == s.action { 1.0 } else { 0.0 };
            let d_policy = -d_surr_d_ratio * ratio * (onehot - p);
            let d_entropy = -p * (lp + entropy);
            d_policy - c_e * d_entropy
        })
        .collect();
    let err = value - s.ret;
    SampleGrad {
        policy: -surr,
        value_sq: err * err,
        entropy,
        ratio,
        log_ratio,
        d_logits,
        d_value: 2.0 * coefs.value_coef * err,
    }
}

/// Mean loss over `batch` and its gradient with respect to `net.params`.
pub fn batch_loss_grad(
    net: &Mlp,
    batch: &[Sample],
    coefs: &LossCoefs,
    exec: Exec,
) -> (LossStats, Vec<f64>) {
    let n = batch.len().max(1) as f64;
    let eps = coefs.clip_eps;
    let partials = exec.map_chunks(batch, GRAD_CHUNK, |chunk| {
        let mut grad = vec![0.0; net.n_params()];
        let mut sums = [0.0f64; 5];
        for s in chunk {
            let (logits, value, cache) = net.forward_cached(&s.obs);
            let g = sample_loss_grad(&logits, value, s, coefs);
            let d_logits: Vec<f64> = g.d_logits.iter().map(|d| d / n).collect();
            net.backward(&cache, &d_logits, g.d_value / n, &mut grad);
            sums[0] += g.policy;
            sums[1] += g.value_sq;
            sums[2] += g.entropy;
            sums[3] += if (g.ratio - 1.0).abs() > eps { 1.0 } else { 0.0 };
            // low-variance KL estimator (r - 1) - log r
            sums[4] += (g.ratio - 1.0) - g.log_ratio;
        }
        (grad, sums)
    });

    let mut grad = vec![0.0; net.n_params()];
    let mut sums = [0.0f64; 5];
    for (g, s) in partials {
        for (acc, v) in grad.iter_mut().zip(&g) {
            *acc += v;
        }
        for (acc, v) in sums.iter_mut().zip(&s) {
            *acc += v;
        }
    }
    let stats = LossStats {
        policy_loss: sums[0] / n,
        value_loss: sums[1] / n,
        entropy: sums[2] / n,
        total: (sums[0] + coefs.value_coef * sums[1] - coefs.entropy_coef * sums[2]) / n,
        clip_fraction: sums[3] / n,
        approx_kl: sums[4] / n,
    };
    (stats, grad)
}

/// Loss value only, for finite-difference checks.
pub fn batch_loss(net: &Mlp, batch: &[Sample], coefs: &LossCoefs) -> f64 {
    batch_loss_grad(net, batch, coefs, Exec::Sequential).0.total
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ppo::dist::log_softmax;
    use crate::rng::make_rng;

    #[test]
    fn surrogate_branches() {
        assert_eq!(clipped_surrogate(1.0, 2.0, 0.2), (2.0, 2.0));
        let (v, d) = clipped_surrogate(1.5, 1.0, 0.2);
        assert!((v - 1.2).abs() < 1e-15);
        assert_eq!(d, 0.0);
        // negative advantage: the pessimistic branch keeps gradient above 1+ε
        let (v, d) = clipped_surrogate(1.5, -1.0, 0.2);
        assert_eq!((v, d), (-1.5, -1.0));
        let (_, d) = clipped_surrogate(0.5, -1.0, 0.2);
        assert_eq!(d, 0.0);
    }

    #[test]
    fn clipped_positive_advantage_has_no_policy_gradient() {
        let logits = [0.3, -0.2, 0.1, 0.0, 0.5, -0.4, 0.2, 0.0];
        let logp = log_softmax(&logits);
        let s = Sample {
            obs: [0.0; 4],
            action: 2,
            // ratio = e^0.5 ≈ 1.65 > 1.2
            old_log_prob: logp[2] - 0.5,
            advantage: 1.0,
            ret: 0.0,
        };
        let coefs = LossCoefs::new(0.2, 0.0, 0.0);
        let g = sample_loss_grad(&logits, 0.0, &s, &coefs);
        assert!(g.d_logits.iter().all(|&d| d == 0.0));
    }

    #[test]
    fn zero_advantage_zero_policy_loss() {
        let mut rng = make_rng(0, 0);
        let net = Mlp::init(&[8], &mut rng);
        let batch: Vec<Sample> = (0..10)
            .map(|i| Sample {
                obs: [0.1 * i as f64, 0.5, 0.3, 0.9],
                action: i % 8,
                old_log_prob: -2.0,
                advantage: 0.0,
                ret: 0.5,
            })
            .collect();
        let coefs = LossCoefs::new(0.2, 0.0, 0.0);
        let (stats, grad) = batch_loss_grad(&net, &batch, &coefs, Exec::Sequential);
        assert_eq!(stats.policy_loss, 0.0);
        assert!(grad.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn ratio_one_makes_clip_irrelevant() {
        let logits = [0.3, -0.2, 0.1, 0.0, 0.5, -0.4, 0.2, 0.0];
        let logp = log_softmax(&logits);
        for adv in [-1.3, 0.4, 2.0] {
            let s = Sample {
                obs: [0.0; 4],
                action: 4,
                old_log_prob: logp[4],
                advantage: adv,
                ret: 0.0,
            };
            let clipped = sample_loss_grad(&logits, 0.0, &s, &LossCoefs::new(0.2, 0.0, 0.0));
            let unclipped = sample_loss_grad(&logits, 0.0, &s, &LossCoefs::new(1e9, 0.0, 0.0));
            assert_eq!(clipped.policy, unclipped.policy);
            assert_eq!(clipped.d_logits, unclipped.d_logits);
            assert!((clipped.policy + adv).abs() < 1e-12);
        }
    }

    #[test]
    fn sequential_and_parallel_gradients_identical() {
        let mut rng = make_rng(5, 0);
        let net = Mlp::init(&[16, 16], &mut rng);
        let batch: Vec<Sample> = (0..70)
            .map(|i| Sample {
                obs: [rng.uniform(), rng.uniform(), rng.uniform(), rng.uniform()],
                action: i % 8,
                old_log_prob: -2.1,
                advantage: rng.normal(),
                ret: rng.normal(),
            })
            .collect();
        let coefs = LossCoefs::new(0.2, 0.5, 0.01);
        let a = batch_loss_grad(&net, &batch, &coefs, Exec::Sequential);
        let b = batch_loss_grad(&net, &batch, &coefs, Exec::Parallel);
        assert_eq!(a, b);
    }
}
