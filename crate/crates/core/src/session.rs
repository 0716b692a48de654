//! Guidance sessions: fixed step cadence, alternating target blocks and
//! the line-delimited session log.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{integer_ratio, AgentConfig, ConfigError, ObservationMode, RunConfig, SimParams};
use crate::dynamics::{action_to_target, DynamicsError, LagState, SchoolCentroidState, SwarmState};
use crate::env::{advance_agents, advance_world, EnvError, Observer, School};
use crate::ppo::{Policy, PolicyCheckpoint};
use crate::rewards::{self, RewardBreakdown, RewardError};
use crate::rng::{make_rng, stream, stream_id, RngHandle};
use crate::types::{TargetEnd, Vec2};

pub const LOG_FORMAT: &str = "shoalguide-session";
pub const LOG_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum SessionError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Reward(#[from] RewardError),
    #[error("checkpoint {id} has layer dims {dims:?}; sessions need 4 inputs and 8 actions")]
    CheckpointShape { id: String, dims: Vec<usize> },
    #[error("fish source returned {got} positions, expected {expected}")]
    FishCount { expected: usize, got: usize },
    #[error("fish position ({x}, {y}) is not finite")]
    NonFinite { x: f64, y: f64 },
    #[error("fish source: {0}")]
    Source(String),
    #[error("session already completed all {0} steps")]
    Finished(usize),
}

#[derive(Debug, Error)]
pub enum LogError {
    #[error("cannot access session log {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("session log is empty (no header line)")]
    MissingHeader,
    #[error("malformed session log header: {0}")]
    Header(String),
    #[error("unsupported session log {format} version {version} (expected {LOG_FORMAT} {LOG_VERSION})")]
    Version { format: String, version: u32 },
    #[error("record {index} has step {step}; records must be consecutive from 0")]
    Sequence { index: usize, step: usize },
}

/// Where fish positions came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceKind {
    Sim,
    Live,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionHeader {
    pub format: String,
    pub version: u32,
    pub source: SourceKind,
    /// RFC 3339 wall-clock start; absent for simulated sessions so their
    /// logs are reproducible byte for byte.
    pub start_timestamp: Option<String>,
    pub checkpoint_left: String,
    pub checkpoint_right: String,
    pub config: RunConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    /// Seconds since session start: model time for simulated sources,
    /// wall time for live ones.
    pub time: f64,
    pub target_end: TargetEnd,
    /// Id of the checkpoint that chose this step's actions.
    pub checkpoint: String,
    pub fish: Vec<Vec2>,
    /// Policy-unit positions when the fish snapshot was taken.
    pub agents: Vec<Vec2>,
    /// Where fish images are drawn.
    pub images: Vec<Vec2>,
    pub actions: Vec<usize>,
    pub reward: RewardBreakdown,
}

impl StepRecord {
    pub fn centroid(&self) -> Vec2 {
        Vec2::mean(&self.fish).unwrap_or(Vec2::new(f64::NAN, f64::NAN))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionLog {
    pub header: SessionHeader,
    pub records: Vec<StepRecord>,
}

/// Active target for protocol step `step`: blocks of `switch_every` steps
/// alternating from `start`.
pub fn target_at(step: usize, switch_every: usize, start: TargetEnd) -> TargetEnd {
    if (step / switch_every.max(1)) % 2 == 0 {
        start
    } else {
        start.opposite()
    }
}

/// Image offsets of a fixed formation: `images` points evenly spaced on a
/// circle of radius `half_width`, starting on +x. Four images form a
/// diamond.
pub fn formation_offsets(images: usize, half_width: f64) -> Vec<Vec2> {
    if images == 1 {
        return vec![Vec2::new(0.0, 0.0)];
    }
    (0..images)
        .map(|k| {
            let a = std::f64::consts::TAU * k as f64 / images as f64;
            let (s, c) = a.sin_cos();
            // snap so that axis-aligned offsets are exact
            let snap = |v: f64| if v.abs() < 1e-12 { 0.0 } else { v };
            Vec2::new(snap(half_width * c), snap(half_width * s))
        })
        .collect()
}

/// Per-direction policies, each tagged with its checkpoint id.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionPolicies {
    pub left: Policy,
    pub right: Policy,
    pub left_id: String,
    pub right_id: String,
}

impl SessionPolicies {
    pub fn from_checkpoints(
        left: &PolicyCheckpoint,
        right: &PolicyCheckpoint,
    ) -> Result<Self, SessionError> {
        for ck in [left, right] {
            let dims = ck.net.layer_dims();
            if dims.first() != Some(&crate::env::OBS_DIM)
                || dims.last() != Some(&crate::dynamics::N_ACTIONS)
            {
                return Err(SessionError::CheckpointShape { id: ck.id(), dims });
            }
        }
        Ok(SessionPolicies {
            left: left.policy(),
            right: right.policy(),
            left_id: left.id(),
            right_id: right.id(),
        })
    }

    pub fn for_target(&self, target: TargetEnd) -> (&Policy, &str) {
        match target {
            TargetEnd::Left => (&self.left, &self.left_id),
            TargetEnd::Right => (&self.right, &self.right_id),
        }
    }
}

/// Anything that supplies fish positions once per control step.
pub trait FishSource {
    fn kind(&self) -> SourceKind;

    /// Fish positions at the start of the current step.
    fn snapshot(&mut self) -> Result<Vec<Vec2>, SessionError>;

    /// Let one control period of `substeps` substeps elapse. Agents move
    /// toward their targets; simulated fish react to them.
    fn advance(
        &mut self,
        agents: &mut [LagState],
        params: &SimParams,
        substeps: usize,
    ) -> Result<(), SessionError>;
}

/// The stochastic swarm model, one point per fish.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedSchool {
    school: School,
    rng: RngHandle,
}

impl SimulatedSchool {
    /// `n_real` fish placed uniformly at random from the session stream of
    /// `seed`.
    pub fn new(sim: &SimParams, seed: u64) -> Self {
        let mut rng = make_rng(seed, stream_id(stream::SESSION_ENV, 0));
        let fish = (0..sim.n_real)
            .map(|_| SchoolCentroidState::at(Vec2::new(rng.uniform(), rng.uniform())))
            .collect();
        SimulatedSchool {
            school: School::Swarm(SwarmState { fish }),
            rng,
        }
    }

    pub fn pinned(fish: Vec<Vec2>, seed: u64) -> Self {
        SimulatedSchool {
            school: School::Static(fish),
            rng: make_rng(seed, stream_id(stream::SESSION_ENV, 0)),
        }
    }
}

impl FishSource for SimulatedSchool {
    fn kind(&self) -> SourceKind {
        SourceKind::Sim
    }

    fn snapshot(&mut self) -> Result<Vec<Vec2>, SessionError> {
        Ok(self.school.positions())
    }

    fn advance(
        &mut self,
        agents: &mut [LagState],
        params: &SimParams,
        substeps: usize,
    ) -> Result<(), SessionError> {
        advance_world(&mut self.school, agents, params, substeps, &mut self.rng)?;
        Ok(())
    }
}

/// Plays back recorded fish positions, one frame per step.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplaySource {
    frames: Vec<Vec<Vec2>>,
    next: usize,
    kind: SourceKind,
}

impl ReplaySource {
    pub fn new(frames: Vec<Vec<Vec2>>, kind: SourceKind) -> Self {
        ReplaySource {
            frames,
            next: 0,
            kind,
        }
    }

    pub fn from_log(log: &SessionLog, kind: SourceKind) -> Self {
        Self::new(log.records.iter().map(|r| r.fish.clone()).collect(), kind)
    }
}

impl FishSource for ReplaySource {
    fn kind(&self) -> SourceKind {
        self.kind
    }

    fn snapshot(&mut self) -> Result<Vec<Vec2>, SessionError> {
        let frame = self
            .frames
            .get(self.next)
            .cloned()
            .ok_or_else(|| SessionError::Source(format!("replay exhausted after {} frames", self.next)))?;
        self.next += 1;
        Ok(frame)
    }

    fn advance(
        &mut self,
        agents: &mut [LagState],
        params: &SimParams,
        substeps: usize,
    ) -> Result<(), SessionError> {
        advance_agents(agents, params, substeps);
        Ok(())
    }
}

/// Step-by-step protocol driver. The caller supplies each step's fish
/// snapshot and lets the control period elapse between steps.
#[derive(Debug, Clone)]
pub struct SessionRunner {
    config: RunConfig,
    params: SimParams,
    substeps: usize,
    policies: SessionPolicies,
    observer: Observer,
    offsets: Option<Vec<Vec2>>,
    agents: Vec<LagState>,
    rng: RngHandle,
    greedy: bool,
    records: Vec<StepRecord>,
}

impl SessionRunner {
    pub fn new(config: &RunConfig, policies: SessionPolicies) -> Result<Self, SessionError> {
        config.validate()?;
        let protocol = &config.protocol;
        let substeps = integer_ratio(protocol.step_duration, config.sim.dt_sim).ok_or(
            ConfigError::Invalid {
                field: "protocol.step_duration",
                message: "step_duration not integer multiple of dt_sim".into(),
            },
        )?;
        let mut params = config.sim.clone();
        params.dt_action = protocol.step_duration;
        let (mode, offsets) = match protocol.agents {
            AgentConfig::FixedFormation { images, half_width } => {
                (ObservationMode::Global, Some(formation_offsets(images, half_width)))
            }
            AgentConfig::Independent { .. } => (ObservationMode::ClusterAssignment, None),
        };
        let units = protocol.agents.policy_units();
        let seed = config.seed;
        Ok(SessionRunner {
            observer: Observer::new(
                mode,
                config.cluster_warm_start,
                make_rng(seed, stream_id(stream::SESSION_CLUSTER, 0)),
            ),
            params,
            substeps,
            policies,
            offsets,
            agents: vec![LagState::at(Vec2::new(0.5, 0.5)); units],
            rng: make_rng(seed, stream_id(stream::SESSION_POLICY, 0)),
            greedy: config.ppo.greedy_eval,
            records: Vec::with_capacity(protocol.total_steps),
            config: config.clone(),
        })
    }

    pub fn params(&self) -> &SimParams {
        &self.params
    }

    /// Substeps of `dt_sim` per control step.
    pub fn substeps(&self) -> usize {
        self.substeps
    }

    pub fn step_index(&self) -> usize {
        self.records.len()
    }

    pub fn is_done(&self) -> bool {
        self.records.len() >= self.config.protocol.total_steps
    }

    pub fn records(&self) -> &[StepRecord] {
        &self.records
    }

    pub fn agents_mut(&mut self) -> &mut [LagState] {
        &mut self.agents
    }

    pub fn agent_positions(&self) -> Vec<Vec2> {
        self.agents.iter().map(|a| a.pos).collect()
    }

    pub fn current_target(&self) -> TargetEnd {
        let p = &self.config.protocol;
        target_at(self.records.len(), p.switch_every, p.start_direction)
    }

    /// Decide this step's actions from `fish` and set the agents' lag
    /// targets. The agents do not move until the period elapses.
    pub fn begin_step(&mut self, fish: &[Vec2], time: f64) -> Result<&StepRecord, SessionError> {
        if self.is_done() {
            return Err(SessionError::Finished(self.config.protocol.total_steps));
        }
        let expected = self.config.sim.n_real;
        if fish.len() != expected {
            return Err(SessionError::FishCount {
                expected,
                got: fish.len(),
            });
        }
        if let Some(f) = fish.iter().find(|f| !f.is_finite()) {
            return Err(SessionError::NonFinite { x: f.x, y: f.y });
        }
        let target = self.current_target();
        let agents = self.agent_positions();
        let obs = self.observer.observe(fish, &agents)?;
        let (policy, id) = self.policies.for_target(target);
        let actions: Vec<usize> = obs
            .iter()
            .map(|o| policy.act(o, target, self.greedy, &mut self.rng))
            .collect();
        let checkpoint = id.to_string();
        for (agent, &a) in self.agents.iter_mut().zip(&actions) {
            agent.target = action_to_target(agent.pos, a, self.params.action_step_len)?;
        }
        let images = match &self.offsets {
            Some(offsets) => agents
                .iter()
                .flat_map(|p| offsets.iter().map(move |o| (*p + *o).clamp_unit()))
                .collect(),
            None => agents.clone(),
        };
        let reward = rewards::breakdown(fish, &agents, self.config.reward.beta, target)?;
        self.records.push(StepRecord {
            step: self.records.len(),
            time,
            target_end: target,
            checkpoint,
            fish: fish.to_vec(),
            agents,
            images,
            actions,
            reward,
        });
        Ok(self.records.last().unwrap())
    }

    /// Move agents over one control period with no simulated fish.
    pub fn advance_agents(&mut self) {
        advance_agents(&mut self.agents, &self.params, self.substeps);
    }

    pub fn finish(self, source: SourceKind, start_timestamp: Option<String>) -> SessionLog {
        SessionLog {
            header: SessionHeader {
                format: LOG_FORMAT.to_string(),
                version: LOG_VERSION,
                source,
                start_timestamp,
                checkpoint_left: self.policies.left_id.clone(),
                checkpoint_right: self.policies.right_id.clone(),
                config: self.config,
            },
            records: self.records,
        }
    }
}

/// Run a full protocol against `source` as fast as it yields data.
pub fn run_session(
    config: &RunConfig,
    policies: SessionPolicies,
    source: &mut dyn FishSource,
) -> Result<SessionLog, SessionError> {
    let mut runner = SessionRunner::new(config, policies)?;
    let duration = config.protocol.step_duration;
    while !runner.is_done() {
        let fish = source.snapshot()?;
        let time = runner.step_index() as f64 * duration;
        runner.begin_step(&fish, time)?;
        let params = runner.params.clone();
        let substeps = runner.substeps;
        source.advance(runner.agents_mut(), &params, substeps)?;
    }
    Ok(runner.finish(source.kind(), None))
}

/// What went wrong at the tail of a partially written log.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LogWarning {
    /// Fewer records than `protocol.total_steps`; `last_good_step` is the
    /// final complete record, if any.
    Truncated {
        records: usize,
        expected: usize,
        last_good_step: Option<usize>,
    },
}

impl std::fmt::Display for LogWarning {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            LogWarning::Truncated {
                records,
                expected,
                last_good_step,
            } => match last_good_step {
                Some(s) => write!(f, "log truncated: {records} of {expected} records, last good step {s}"),
                None => write!(f, "log truncated: no complete records of {expected}"),
            },
        }
    }
}

pub fn write_log_to(log: &SessionLog, w: &mut impl Write) -> std::io::Result<()> {
    serde_json::to_writer(&mut *w, &log.header)?;
    w.write_all(b"\n")?;
    for r in &log.records {
        serde_json::to_writer(&mut *w, r)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn write_log(log: &SessionLog, path: &Path) -> Result<(), LogError> {
    let io = |source| LogError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    write_log_to(log, &mut w).map_err(io)?;
    w.flush().map_err(io)
}

/// Parse a log. A header-only file is a valid empty session. A log cut
/// short (including a torn final line) yields the complete records and a
/// warning.
pub fn read_log_from(r: impl BufRead) -> Result<(SessionLog, Option<LogWarning>), LogError> {
    let mut lines = r.lines();
    let first = match lines.next() {
        Some(l) => l.map_err(|e| LogError::Header(e.to_string()))?,
        None => return Err(LogError::MissingHeader),
    };
    let probe: serde_json::Value =
        serde_json::from_str(&first).map_err(|e| LogError::Header(e.to_string()))?;
    let format = probe.get("format").and_then(|v| v.as_str()).unwrap_or("");
    let version = probe.get("version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
    if format != LOG_FORMAT || version != LOG_VERSION {
        return Err(LogError::Version {
            format: format.to_string(),
            version,
        });
    }
    let header: SessionHeader =
        serde_json::from_value(probe).map_err(|e| LogError::Header(e.to_string()))?;
    let mut records: Vec<StepRecord> = Vec::new();
    let mut torn = false;
    for line in lines {
        let Ok(line) = line else {
            torn = true;
            break;
        };
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<StepRecord>(&line) {
            Ok(rec) => {
                if rec.step != records.len() {
                    return Err(LogError::Sequence {
                        index: records.len(),
                        step: rec.step,
                    });
                }
                records.push(rec);
            }
            Err(_) => {
                torn = true;
                break;
            }
        }
    }
    let expected = header.config.protocol.total_steps;
    let warning = if (torn || records.len() < expected) && !(records.is_empty() && !torn) {
        Some(LogWarning::Truncated {
            records: records.len(),
            expected,
            last_good_step: records.last().map(|r| r.step),
        })
    } else {
        None
    };
    Ok((SessionLog { header, records }, warning))
}

pub fn read_log(path: &Path) -> Result<(SessionLog, Option<LogWarning>), LogError> {
    let f = File::open(path).map_err(|source| LogError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    read_log_from(BufReader::new(f))
}
