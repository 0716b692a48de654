//! Rollout collection, the PPO update loop and the frozen-policy evaluator.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{ConfigError, PpoConfig, RunConfig};
use crate::env::{Env, EnvError, Observation};
use crate::par::Exec;
use crate::rng::{make_rng, stream, stream_id, RngHandle};
use crate::types::TargetEnd;

use super::adam::{clip_grad_norm, Adam};
use super::buffer::{compute_gae, normalize_advantages, RolloutBuffer, Transition};
use super::checkpoint::{CurvePoint, PolicyCheckpoint};
use super::dist::sample_action;
use super::loss::{batch_loss_grad, LossCoefs, LossStats, Sample};
use super::mlp::Mlp;
use super::policy::Policy;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error("training needs exactly one virtual agent, config has {0}")]
    AgentCount(usize),
    #[error("non-finite loss at update {update} (minibatch {minibatch}): {stats:?}")]
    NonFinite {
        update: u64,
        minibatch: usize,
        stats: LossStats,
    },
}

/// Summary of one collect-and-update iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UpdateReport {
    pub update: u64,
    pub steps_done: u64,
    pub mean_reward: f64,
    pub stats: LossStats,
}

struct Worker {
    env: Env,
    obs: Observation,
    rng: RngHandle,
    episode_step: usize,
}

impl Worker {
    fn new(config: &RunConfig, index: u64) -> Result<Self, EnvError> {
        let seed = config.seed;
        let mut env = Env::new(
            config,
            make_rng(seed, stream_id(stream::ENV, index)),
            make_rng(seed, stream_id(stream::CLUSTER, index)),
        );
        let obs = env.reset()?[0];
        Ok(Worker {
            env,
            obs,
            rng: make_rng(seed, stream_id(stream::POLICY, index)),
            episode_step: 0,
        })
    }

    /// Run `n` steps; returns the segment and the bootstrap value of the
    /// state after it.
    fn collect(
        &mut self,
        net: &Mlp,
        n: usize,
        config: &RunConfig,
    ) -> Result<(RolloutBuffer, f64), EnvError> {
        let mut buf = RolloutBuffer::with_capacity(n);
        for _ in 0..n {
            let obs = self.obs.to_array();
            let (logits, value) = net.forward(&obs);
            let (action, log_prob) = sample_action(&logits, &mut self.rng);
            let out = self.env.step(&[action])?;
            let reward = out.reward.training_reward(&config.reward);
            self.episode_step += 1;
            let done = self.episode_step >= config.ppo.episode_len;
            buf.push(Transition {
                obs,
                action,
                log_prob,
                value,
                reward,
                done,
            });
            if done {
                self.obs = self.env.reset()?[0];
                self.episode_step = 0;
            } else {
                self.obs = out.observations[0];
            }
        }
        let (_, bootstrap) = net.forward(&self.obs.to_array());
        Ok((buf, bootstrap))
    }
}

/// Stateful learner. [`Trainer::run`] drives it to completion; the
/// individual phases are public for benchmarking.
pub struct Trainer {
    pub config: RunConfig,
    pub net: Mlp,
    pub exec: Exec,
    adam: Adam,
    workers: Vec<Worker>,
    shuffle_rng: RngHandle,
    steps_done: u64,
    updates: u64,
    curve: Vec<CurvePoint>,
}

impl Trainer {
    pub fn new(config: &RunConfig, exec: Exec) -> Result<Self, TrainError> {
        config.validate()?;
        if config.sim.n_virtual != 1 {
            return Err(TrainError::AgentCount(config.sim.n_virtual));
        }
        let mut init_rng = make_rng(config.seed, stream_id(stream::INIT, 0));
        let net = Mlp::init(&config.ppo.hidden, &mut init_rng);
        let workers = (0..config.ppo.n_envs as u64)
            .map(|i| Worker::new(config, i))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Trainer {
            adam: Adam::new(net.n_params(), config.ppo.lr),
            net,
            exec,
            workers,
            shuffle_rng: make_rng(config.seed, stream_id(stream::SHUFFLE, 0)),
            steps_done: 0,
            updates: 0,
            curve: Vec::new(),
            config: config.clone(),
        })
    }

    pub fn steps_done(&self) -> u64 {
        self.steps_done
    }

    fn per_env_steps(&self) -> usize {
        let ppo = &self.config.ppo;
        let remaining = ppo.total_steps.saturating_sub(self.steps_done);
        let batch = remaining.min(ppo.rollout_len as u64) as usize;
        batch.div_ceil(ppo.n_envs)
    }

    /// Collect one rollout across all workers and turn it into training
    /// samples with normalized advantages.
    pub fn collect_rollout(&mut self) -> Result<(Vec<Sample>, f64), TrainError> {
        let n = self.per_env_steps();
        let net = &self.net;
        let config = &self.config;
        let segments = self
            .exec
            .map_mut(&mut self.workers, |w| w.collect(net, n, config));
        let mut samples = Vec::with_capacity(n * segments.len());
        let mut advantages = Vec::with_capacity(n * segments.len());
        let mut reward_sum = 0.0;
        for seg in segments {
            let (buf, bootstrap) = seg?;
            let (adv, ret) = compute_gae(&buf, bootstrap, config.ppo.gamma, config.ppo.lambda_gae);
            for ((t, a), r) in buf.steps.iter().zip(adv).zip(ret) {
                reward_sum += t.reward;
                advantages.push(a);
                samples.push(Sample {
                    obs: t.obs,
                    action: t.action,
                    old_log_prob: t.log_prob,
                    advantage: 0.0,
                    ret: r,
                });
            }
        }
        normalize_advantages(&mut advantages);
        for (s, a) in samples.iter_mut().zip(advantages) {
            s.advantage = a;
        }
        self.steps_done += samples.len() as u64;
        let mean_reward = reward_sum / samples.len().max(1) as f64;
        Ok((samples, mean_reward))
    }

    /// Several epochs of clipped-surrogate descent over shuffled minibatches.
    pub fn update(&mut self, samples: &[Sample]) -> Result<LossStats, TrainError> {
        let stats = ppo_update(
            &mut self.net,
            &mut self.adam,
            samples,
            &self.config.ppo,
            &mut self.shuffle_rng,
            self.exec,
            self.updates,
        )?;
        self.updates += 1;
        Ok(stats)
    }

    fn record_curve(&mut self) -> Result<(), TrainError> {
        let policy = Policy::new(self.net.clone(), self.config.reward.target_end);
        let r_bar = evaluate_policy(&policy, &self.config, self.config.ppo.eval_len, self.config.seed)?;
        self.curve.push(CurvePoint {
            step: self.steps_done,
            r_bar,
        });
        Ok(())
    }

    /// Train until `total_steps` environment steps are consumed, evaluating
    /// the policy at the start and after every tenth of the budget.
    pub fn run(
        mut self,
        mut on_update: impl FnMut(&UpdateReport),
    ) -> Result<PolicyCheckpoint, TrainError> {
        let total = self.config.ppo.total_steps;
        if total > 0 {
            self.record_curve()?;
        }
        let mut next_mark = 1u64;
        while self.steps_done < total {
            let (samples, mean_reward) = self.collect_rollout()?;
            let stats = self.update(&samples)?;
            on_update(&UpdateReport {
                update: self.updates,
                steps_done: self.steps_done,
                mean_reward,
                stats,
            });
            let mut crossed = false;
            while next_mark <= 10 && self.steps_done * 10 >= next_mark * total {
                next_mark += 1;
                crossed = true;
            }
            if crossed {
                self.record_curve()?;
            }
        }
        Ok(PolicyCheckpoint {
            config: self.config,
            net: self.net,
            curve: self.curve,
        })
    }
}

/// One PPO update over a fixed batch of samples.
pub fn ppo_update(
    net: &mut Mlp,
    adam: &mut Adam,
    samples: &[Sample],
    ppo: &PpoConfig,
    rng: &mut RngHandle,
    exec: Exec,
    update_index: u64,
) -> Result<LossStats, TrainError> {
    let coefs = LossCoefs::new(ppo.clip_eps, ppo.value_coef, ppo.entropy_coef);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut acc = LossStats::default();
    let mut batches = 0usize;
    let mut batch = Vec::with_capacity(ppo.minibatch);
    for _ in 0..ppo.epochs {
        rng.shuffle(&mut order);
        for idx in order.chunks(ppo.minibatch.max(1)) {
            batch.clear();
            batch.extend(idx.iter().map(|&i| samples[i]));
            let (stats, mut grad) = batch_loss_grad(net, &batch, &coefs, exec);
            if !stats.total.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(TrainError::NonFinite {
                    update: update_index,
                    minibatch: batches,
                    stats,
                });
            }
            clip_grad_norm(&mut grad, ppo.max_grad_norm);
            adam.step(&mut net.params, &grad);
            acc.policy_loss += stats.policy_loss;
            acc.value_loss += stats.value_loss;
            acc.entropy += stats.entropy;
            acc.total += stats.total;
            acc.clip_fraction += stats.clip_fraction;
            acc.approx_kl += stats.approx_kl;
            batches += 1;
        }
    }
    let n = batches.max(1) as f64;
    Ok(LossStats {
        policy_loss: acc.policy_loss / n,
        value_loss: acc.value_loss / n,
        entropy: acc.entropy / n,
        total: acc.total / n,
        clip_fraction: acc.clip_fraction / n,
        approx_kl: acc.approx_kl / n,
    })
}

/// Train with the default execution strategy.
pub fn train(config: &RunConfig) -> Result<PolicyCheckpoint, TrainError> {
    Trainer::new(config, Exec::default())?.run(|_| {})
}

/// Mean `r_base` of the school centroid over `steps` consecutive steps of
/// an already reset environment.
pub fn evaluate_in(
    env: &mut Env,
    policy: &Policy,
    target: TargetEnd,
    steps: u64,
    greedy: bool,
    rng: &mut RngHandle,
) -> Result<f64, EnvError> {
    let mut obs = env.observe()?;
    let mut sum = 0.0;
    for _ in 0..steps {
        let actions: Vec<usize> = obs.iter().map(|o| policy.act(o, target, greedy, rng)).collect();
        let out = env.step(&actions)?;
        sum += out.reward.r_base;
        obs = out.observations;
    }
    Ok(sum / steps.max(1) as f64)
}

/// R̄ of `policy` under `config` (school parameters and target end) on the
/// evaluation streams of `seed`: one continuous run without resets.
pub fn evaluate_policy(
    policy: &Policy,
    config: &RunConfig,
    t_prime: u64,
    seed: u64,
) -> Result<f64, EnvError> {
    let mut env = Env::new(
        config,
        make_rng(seed, stream_id(stream::EVAL_ENV, 0)),
        make_rng(seed, stream_id(stream::EVAL_CLUSTER, 0)),
    );
    env.reset()?;
    let mut rng = make_rng(seed, stream_id(stream::EVAL_POLICY, 0));
    evaluate_in(
        &mut env,
        policy,
        config.reward.target_end,
        t_prime,
        config.ppo.greedy_eval,
        &mut rng,
    )
}

pub fn evaluate(
    checkpoint: &PolicyCheckpoint,
    config: &RunConfig,
    t_prime: u64,
    seed: u64,
) -> Result<f64, EnvError> {
    evaluate_policy(&checkpoint.policy(), config, t_prime, seed)
}
