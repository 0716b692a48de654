//! Run configuration: loading, defaults and validation.
//!
//! The on-disk format is TOML. Keys may be written dotted at top level
//! (`sim.tau_v = 0.5`) or grouped in tables (`[sim]`); both parse to the
//! same structure. Every absent key takes its default and unknown keys are
//! rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::types::TargetEnd;

/// Environment variable that may name the config file when no `--config`
/// flag is given.
pub const CONFIG_ENV_VAR: &str = "SHOALGUIDE_CONFIG";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config file {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed config: {0}")]
    Parse(String),
    #[error("invalid config field `{field}`: {message}")]
    Invalid { field: &'static str, message: String },
}

fn invalid(field: &'static str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        field,
        message: message.into(),
    }
}

/// How the simulated school is represented.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchoolModel {
    /// One lagged centroid standing in for the whole school.
    #[default]
    Centroid,
    /// `n_real` individually lagged fish with a cohesion pull.
    Swarm,
}

/// Constants of the behavioral model. Times in seconds, lengths in
/// normalized arena units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimParams {
    pub tau_v: f64,
    pub tau_r: f64,
    pub dt_sim: f64,
    pub dt_action: f64,
    pub phase_max: f64,
    pub delta_x_max: f64,
    pub delta_y_max: f64,
    pub theta: f64,
    pub p_ignore: f64,
    pub n_real: usize,
    pub n_virtual: usize,
    pub action_step_len: f64,
    /// Weight of the pull toward the swarm centroid added to a fish's
    /// spontaneous displacement. Only used by [`SchoolModel::Swarm`].
    pub cohesion: f64,
    pub school_model: SchoolModel,
}

impl Default for SimParams {
    fn default() -> Self {
        SimParams {
            tau_v: 0.5,
            tau_r: 0.5,
            dt_sim: 0.1,
            dt_action: 1.0,
            phase_max: 2.0,
            delta_x_max: 0.2,
            delta_y_max: 0.2,
            theta: 0.3,
            p_ignore: 0.6,
            n_real: 3,
            n_virtual: 1,
            action_step_len: 0.15,
            cohesion: 0.5,
            school_model: SchoolModel::Centroid,
        }
    }
}

impl SimParams {
    /// Number of integration substeps per action period.
    pub fn substeps(&self) -> usize {
        integer_ratio(self.dt_action, self.dt_sim).unwrap_or(1)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        positive("sim.tau_v", self.tau_v)?;
        positive("sim.tau_r", self.tau_r)?;
        positive("sim.dt_sim", self.dt_sim)?;
        positive("sim.dt_action", self.dt_action)?;
        if integer_ratio(self.dt_action, self.dt_sim).is_none() {
            return Err(invalid(
                "sim.dt_action",
                format!(
                    "dt_action not integer multiple of dt_sim ({} / {})",
                    self.dt_action, self.dt_sim
                ),
            ));
        }
        positive("sim.phase_max", self.phase_max)?;
        non_negative("sim.delta_x_max", self.delta_x_max)?;
        non_negative("sim.delta_y_max", self.delta_y_max)?;
        positive("sim.theta", self.theta)?;
        unit_interval("sim.p_ignore", "p_ignore", self.p_ignore)?;
        if self.n_real == 0 {
            return Err(invalid("sim.n_real", "n_real must be at least 1"));
        }
        if self.n_virtual == 0 {
            return Err(invalid("sim.n_virtual", "n_virtual must be at least 1"));
        }
        positive("sim.action_step_len", self.action_step_len)?;
        unit_interval("sim.cohesion", "cohesion", self.cohesion)?;
        Ok(())
    }
}

/// Which reward drives training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardMode {
    /// School-centroid position only.
    Baseline,
    /// Beta-weighted blend of cohesion and agent progress.
    #[default]
    Composite,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardConfig {
    pub beta: f64,
    pub target_end: TargetEnd,
    pub mode: RewardMode,
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig {
            beta: 0.3,
            target_end: TargetEnd::Right,
            mode: RewardMode::Composite,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        unit_interval("reward.beta", "beta", self.beta)
    }
}

/// Learner hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PpoConfig {
    /// Environment action steps consumed by training.
    pub total_steps: u64,
    /// Transitions per update, summed over all parallel environments.
    pub rollout_len: usize,
    pub n_envs: usize,
    /// Action steps per training episode.
    pub episode_len: usize,
    pub gamma: f64,
    pub lambda_gae: f64,
    pub clip_eps: f64,
    pub lr: f64,
    pub epochs: usize,
    pub minibatch: usize,
    pub entropy_coef: f64,
    pub value_coef: f64,
    /// Global gradient-norm clip; 0 disables.
    pub max_grad_norm: f64,
    /// Validation length for the time-averaged baseline reward.
    pub eval_len: u64,
    /// Hidden layer widths of the shared trunk.
    pub hidden: Vec<usize>,
    /// Take the arg-max action instead of sampling when evaluating or
    /// deploying.
    pub greedy_eval: bool,
}

impl Default for PpoConfig {
    fn default() -> Self {
        PpoConfig {
            total_steps: 200_000,
            rollout_len: 2048,
            n_envs: 8,
            episode_len: 128,
            gamma: 0.99,
            lambda_gae: 0.95,
            clip_eps: 0.2,
            lr: 3e-4,
            epochs: 4,
            minibatch: 64,
            entropy_coef: 0.01,
            value_coef: 0.5,
            max_grad_norm: 0.5,
            eval_len: 5000,
            hidden: vec![64, 64],
            greedy_eval: false,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(invalid("ppo.gamma", "gamma must lie in (0,1]"));
        }
        unit_interval("ppo.lambda_gae", "lambda_gae", self.lambda_gae)?;
        positive("ppo.clip_eps", self.clip_eps)?;
        positive("ppo.lr", self.lr)?;
        non_negative("ppo.entropy_coef", self.entropy_coef)?;
        non_negative("ppo.value_coef", self.value_coef)?;
        non_negative("ppo.max_grad_norm", self.max_grad_norm)?;
        if self.eval_len == 0 {
            return Err(invalid("ppo.eval_len", "eval_len must be positive"));
        }
        if self.n_envs == 0 {
            return Err(invalid("ppo.n_envs", "n_envs must be positive"));
        }
        if self.rollout_len < self.n_envs {
            return Err(invalid("ppo.rollout_len", "rollout_len must be at least n_envs"));
        }
        if self.episode_len == 0 {
            return Err(invalid("ppo.episode_len", "episode_len must be positive"));
        }
        if self.epochs == 0 || self.minibatch == 0 {
            return Err(invalid("ppo.minibatch", "epochs and minibatch must be positive"));
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(invalid("ppo.hidden", "hidden widths must be non-empty and positive"));
        }
        Ok(())
    }
}

/// How virtual agents are deployed during a session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AgentConfig {
    /// One policy unit drawn as `images` fish images around its position.
    FixedFormation { images: usize, half_width: f64 },
    /// `count` independently controlled agents in cluster-assignment mode.
    Independent { count: usize },
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig::FixedFormation {
            images: 4,
            half_width: 0.05,
        }
    }
}

impl AgentConfig {
    /// Number of policy-controlled units.
    pub fn policy_units(&self) -> usize {
        match self {
            AgentConfig::FixedFormation { .. } => 1,
            AgentConfig::Independent { count } => *count,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProtocolConfig {
    pub total_steps: usize,
    pub switch_every: usize,
    /// Control-step duration in seconds. Live sources are paced to it and
    /// simulated sources integrate this much model time per step.
    pub step_duration: f64,
    pub start_direction: TargetEnd,
    pub agents: AgentConfig,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        ProtocolConfig {
            total_steps: 900,
            switch_every: 90,
            step_duration: 1.2,
            start_direction: TargetEnd::Right,
            agents: AgentConfig::default(),
        }
    }
}

impl ProtocolConfig {
    pub fn validate(&self, sim: &SimParams) -> Result<(), ConfigError> {
        if self.total_steps == 0 {
            return Err(invalid("protocol.total_steps", "total_steps must be at least 1"));
        }
        if self.switch_every == 0 || self.total_steps % self.switch_every != 0 {
            return Err(invalid(
                "protocol.switch_every",
                "switch_every must divide total_steps",
            ));
        }
        positive("protocol.step_duration", self.step_duration)?;
        if integer_ratio(self.step_duration, sim.dt_sim).is_none() {
            return Err(invalid(
                "protocol.step_duration",
                "step_duration not integer multiple of dt_sim",
            ));
        }
        match self.agents {
            AgentConfig::FixedFormation { images, half_width } => {
                if images == 0 {
                    return Err(invalid("protocol.agents", "formation needs at least one image"));
                }
                non_negative("protocol.agents", half_width)?;
            }
            AgentConfig::Independent { count } => {
                if count == 0 {
                    return Err(invalid("protocol.agents", "independent agent count must be positive"));
                }
                if count > sim.n_real {
                    return Err(invalid(
                        "protocol.agents",
                        "independent agent count must not exceed n_real",
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Reference point each agent observes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObservationMode {
    /// Global centroid of all fish.
    #[default]
    Global,
    /// Centroid of the k-means cluster assigned to the agent.
    ClusterAssignment,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub observation_mode: ObservationMode,
    /// Seed each step's k-means from the previous step's centroids.
    pub cluster_warm_start: bool,
    pub sim: SimParams,
    pub reward: RewardConfig,
    pub ppo: PpoConfig,
    pub protocol: ProtocolConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            observation_mode: ObservationMode::Global,
            cluster_warm_start: true,
            sim: SimParams::default(),
            reward: RewardConfig::default(),
            ppo: PpoConfig::default(),
            protocol: ProtocolConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.sim.validate()?;
        self.reward.validate()?;
        self.ppo.validate()?;
        self.protocol.validate(&self.sim)?;
        if self.observation_mode == ObservationMode::ClusterAssignment
            && self.sim.n_real < self.sim.n_virtual
        {
            return Err(invalid(
                "observation_mode",
                "cluster_assignment requires n_real >= n_virtual",
            ));
        }
        Ok(())
    }

    /// Parse and validate TOML text.
    pub fn from_toml_str(text: &str) -> Result<RunConfig, ConfigError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Short hex digest of the canonical serialization.
    pub fn digest(&self) -> String {
        hex_prefix(&Sha256::digest(self.to_toml_string().as_bytes()), 16)
    }
}

/// Read, parse and validate a config file.
pub fn load_config(path: &Path) -> Result<RunConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    RunConfig::from_toml_str(&text)
}

pub fn save_config(cfg: &RunConfig, path: &Path) -> std::io::Result<()> {
    std::fs::write(path, cfg.to_toml_string())
}

/// An explicit path wins; otherwise [`CONFIG_ENV_VAR`] if set.
pub fn resolve_config_path(explicit: Option<&Path>) -> Option<PathBuf> {
    explicit
        .map(Path::to_path_buf)
        .or_else(|| std::env::var_os(CONFIG_ENV_VAR).map(PathBuf::from))
}

pub(crate) fn hex_prefix(bytes: &[u8], chars: usize) -> String {
    let mut s: String = bytes.iter().map(|b| format!("{b:02x}")).collect();
    s.truncate(chars);
    s
}

/// `Some(n)` when `num` is a positive integer multiple `n` of `den`.
pub(crate) fn integer_ratio(num: f64, den: f64) -> Option<usize> {
    if !(num > 0.0 && den > 0.0) {
        return None;
    }
    let n = (num / den).round();
    if n < 1.0 {
        return None;
    }
    let tol = 1e-9 * num.abs().max(1.0);
    ((n * den - num).abs() <= tol).then_some(n as usize)
}

fn positive(field: &'static str, v: f64) -> Result<(), ConfigError> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(invalid(field, format!("must be positive and finite, got {v}")))
    }
}

fn non_negative(field: &'static str, v: f64) -> Result<(), ConfigError> {
    if v.is_finite() && v >= 0.0 {
        Ok(())
    } else {
        Err(invalid(field, format!("must be non-negative and finite, got {v}")))
    }
}

fn unit_interval(field: &'static str, name: &str, v: f64) -> Result<(), ConfigError> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(invalid(field, format!("{name} must lie in [0,1], got {v}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn minimal_file_fills_defaults() {
        let cfg = RunConfig::from_toml_str("seed = 7\n").unwrap();
        assert_eq!(cfg.seed, 7);
        let expected = RunConfig {
            seed: 7,
            ..RunConfig::default()
        };
        assert_eq!(cfg, expected);
        assert_eq!(cfg.sim.dt_sim, 0.1);
        assert_eq!(cfg.sim.dt_action, 1.0);
    }

    #[test]
    fn beta_out_of_range_is_rejected() {
        let err = RunConfig::from_toml_str("reward.beta = 1.5\n").unwrap_err();
        assert!(err.to_string().contains("beta must lie in [0,1]"), "{err}");
    }

    #[test]
    fn non_integer_action_period_is_rejected() {
        let err =
            RunConfig::from_toml_str("sim.dt_action = 1.0\nsim.dt_sim = 0.3\n").unwrap_err();
        assert!(
            err.to_string().contains("dt_action not integer multiple of dt_sim"),
            "{err}"
        );
    }

    #[test]
    fn integer_ratio_matches_exact_rationals() {
        // 1.0 / 0.3 = 10/3, not integral; 1.2 / 0.1 = 12 exactly.
        assert_eq!(integer_ratio(1.0, 0.3), None);
        assert_eq!(integer_ratio(1.2, 0.1), Some(12));
        assert_eq!(integer_ratio(1.0, 0.1), Some(10));
        assert_eq!(integer_ratio(0.05, 0.1), None);
    }

    #[test]
    fn unknown_keys_are_hard_errors() {
        let err = RunConfig::from_toml_str("sim.tau_vv = 0.5\n").unwrap_err();
        assert!(matches!(err, ConfigError::Parse(_)), "{err}");
        let err = RunConfig::from_toml_str("sede = 1\n").unwrap_err();
        assert!(matches!(err, ConfigError::Parse(_)));
    }

    #[test]
    fn tables_and_dotted_keys_agree() {
        let a = RunConfig::from_toml_str("sim.theta = 0.25\nreward.mode = \"baseline\"\n").unwrap();
        let b = RunConfig::from_toml_str("[sim]\ntheta = 0.25\n[reward]\nmode = \"baseline\"\n")
            .unwrap();
        assert_eq!(a, b);
        assert_eq!(a.reward.mode, RewardMode::Baseline);
    }

    #[test]
    fn agent_config_parses() {
        let cfg = RunConfig::from_toml_str(
            "sim.n_real = 8\nprotocol.agents = { kind = \"independent\", count = 3 }\n",
        )
        .unwrap();
        assert_eq!(cfg.protocol.agents, AgentConfig::Independent { count: 3 });
        let err = RunConfig::from_toml_str(
            "sim.n_real = 2\nprotocol.agents = { kind = \"independent\", count = 3 }\n",
        )
        .unwrap_err();
        assert!(matches!(err, ConfigError::Invalid { field: "protocol.agents", .. }));
    }

    #[test]
    fn cluster_mode_needs_enough_fish() {
        let err = RunConfig::from_toml_str(
            "observation_mode = \"cluster_assignment\"\nsim.n_real = 2\nsim.n_virtual = 3\n",
        )
        .unwrap_err();
        assert!(matches!(err, ConfigError::Invalid { field: "observation_mode", .. }));
    }

    #[test]
    fn switch_must_divide_total() {
        let err = RunConfig::from_toml_str("protocol.switch_every = 7\n").unwrap_err();
        assert!(matches!(err, ConfigError::Invalid { field: "protocol.switch_every", .. }));
    }

    #[test]
    fn missing_file_names_path() {
        let err = load_config(Path::new("/nonexistent/cfg.toml")).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/cfg.toml"));
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        let cfg = RunConfig {
            seed: 99,
            ..RunConfig::default()
        };
        save_config(&cfg, &path).unwrap();
        assert_eq!(load_config(&path).unwrap(), cfg);
    }

    fn arb_config() -> impl Strategy<Value = RunConfig> {
        (
            any::<u64>(),
            0.0f64..=1.0,
            0.0f64..=1.0,
            0.01f64..5.0,
            1usize..20,
            prop::bool::ANY,
            0.0f64..=1.0,
        )
            .prop_map(|(seed, beta, p, tau, mult, left, lam)| {
                let mut cfg = RunConfig {
                    seed,
                    ..RunConfig::default()
                };
                cfg.reward.beta = beta;
                cfg.reward.target_end = if left { TargetEnd::Left } else { TargetEnd::Right };
                cfg.sim.p_ignore = p;
                cfg.sim.tau_r = tau;
                cfg.sim.dt_action = cfg.sim.dt_sim * mult as f64;
                cfg.ppo.lambda_gae = lam;
                cfg
            })
            .prop_filter("valid", |c| c.validate().is_ok())
    }

    proptest! {
        #[test]
        fn load_of_save_is_identity(cfg in arb_config()) {
            let text = cfg.to_toml_string();
            let back = RunConfig::from_toml_str(&text).unwrap();
            prop_assert_eq!(back, cfg);
        }
    }
}
