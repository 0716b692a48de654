//! Episodic guidance environment: multi-rate stepping and observation
//! assembly.
//!
//! One action period advances agents and school together over
//! `dt_action / dt_sim` substeps. Rewards are evaluated once, on the
//! post-step state.

use thiserror::Error;

use crate::config::{ObservationMode, RunConfig, SchoolModel, SimParams};
use crate::dynamics::{
    action_to_target, lag_step, step_school, step_swarm, DynamicsError, LagState,
    SchoolCentroidState, SwarmState,
};
use crate::kmeans::{assign_agents_to_clusters, kmeans_from, kmeans_partition, ClusterAssignment, KMeansError};
use crate::rewards::{self, RewardBreakdown, RewardError};
use crate::rng::{make_rng, stream, stream_id, RngHandle};
use crate::types::{TargetEnd, Vec2};

pub const OBS_DIM: usize = 4;

#[derive(Debug, Error, PartialEq)]
pub enum EnvError {
    #[error("expected {expected} actions, got {got}")]
    ActionCount { expected: usize, got: usize },
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Reward(#[from] RewardError),
    #[error(transparent)]
    Cluster(#[from] KMeansError),
}

/// What one agent sees: its guidance reference point and its own position.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub reference_point: Vec2,
    pub own_position: Vec2,
}

impl Observation {
    pub fn to_array(&self) -> [f64; OBS_DIM] {
        [
            self.reference_point.x,
            self.reference_point.y,
            self.own_position.x,
            self.own_position.y,
        ]
    }

    /// The same situation reflected about `x = 0.5`.
    pub fn mirrored(&self) -> Observation {
        Observation {
            reference_point: self.reference_point.mirror_x(),
            own_position: self.own_position.mirror_x(),
        }
    }
}

/// The simulated fish.
#[derive(Debug, Clone, PartialEq)]
pub enum School {
    Centroid(SchoolCentroidState),
    Swarm(SwarmState),
    /// Fish that never move; used to pin the school in tests and replays.
    Static(Vec<Vec2>),
}

impl School {
    pub fn positions(&self) -> Vec<Vec2> {
        match self {
            School::Centroid(s) => vec![s.pos()],
            School::Swarm(s) => s.positions(),
            School::Static(p) => p.clone(),
        }
    }

    pub fn centroid(&self) -> Vec2 {
        match self {
            School::Centroid(s) => s.pos(),
            School::Swarm(s) => s.centroid(),
            School::Static(p) => Vec2::mean(p).unwrap_or(Vec2::new(0.5, 0.5)),
        }
    }

    fn step(
        &mut self,
        agents: &[Vec2],
        params: &SimParams,
        rng: &mut RngHandle,
    ) -> Result<(), DynamicsError> {
        match self {
            School::Centroid(s) => *s = step_school(*s, agents, params, params.dt_sim, rng)?,
            School::Swarm(s) => *s = step_swarm(s, agents, params, params.dt_sim, rng)?,
            School::Static(_) => {}
        }
        Ok(())
    }
}

/// Advance agents and school together for `substeps` substeps of
/// `params.dt_sim`. The school reacts to agent positions at the start of
/// each substep.
pub fn advance_world(
    school: &mut School,
    agents: &mut [LagState],
    params: &SimParams,
    substeps: usize,
    rng: &mut RngHandle,
) -> Result<(), DynamicsError> {
    let mut positions: Vec<Vec2> = agents.iter().map(|a| a.pos).collect();
    for _ in 0..substeps {
        school.step(&positions, params, rng)?;
        for (a, p) in agents.iter_mut().zip(positions.iter_mut()) {
            *a = lag_step(*a, params.tau_v, params.dt_sim);
            *p = a.pos;
        }
    }
    Ok(())
}

/// Agents only, for live sources where the fish move on their own.
pub fn advance_agents(agents: &mut [LagState], params: &SimParams, substeps: usize) {
    for _ in 0..substeps {
        for a in agents.iter_mut() {
            *a = lag_step(*a, params.tau_v, params.dt_sim);
        }
    }
}

/// Builds per-agent observations, keeping k-means warm-start state between
/// calls.
#[derive(Debug, Clone, PartialEq)]
pub struct Observer {
    mode: ObservationMode,
    warm_start: bool,
    rng: RngHandle,
    prev_centroids: Option<Vec<Vec2>>,
    last: Option<ClusterAssignment>,
}

impl Observer {
    pub fn new(mode: ObservationMode, warm_start: bool, rng: RngHandle) -> Self {
        Observer {
            mode,
            warm_start,
            rng,
            prev_centroids: None,
            last: None,
        }
    }

    pub fn reset(&mut self) {
        self.prev_centroids = None;
        self.last = None;
    }

    /// Assignment used for the latest observation in cluster mode.
    pub fn last_assignment(&self) -> Option<&ClusterAssignment> {
        self.last.as_ref()
    }

    pub fn observe(&mut self, fish: &[Vec2], agents: &[Vec2]) -> Result<Vec<Observation>, EnvError> {
        let centroid = Vec2::mean(fish).ok_or(RewardError::NoFish)?;
        match self.mode {
            ObservationMode::Global => Ok(agents
                .iter()
                .map(|&own| Observation {
                    reference_point: centroid,
                    own_position: own,
                })
                .collect()),
            ObservationMode::ClusterAssignment => {
                let k = agents.len();
                let result = match (&self.prev_centroids, self.warm_start) {
                    (Some(prev), true) if prev.len() == k => kmeans_from(fish, prev)?,
                    _ => kmeans_partition(fish, k, &mut self.rng)?,
                };
                let mapping = assign_agents_to_clusters(agents, &result.centroids)?;
                let obs = agents
                    .iter()
                    .zip(&mapping)
                    .map(|(&own, &c)| Observation {
                        reference_point: result.centroids[c],
                        own_position: own,
                    })
                    .collect();
                self.prev_centroids = Some(result.centroids.clone());
                self.last = Some(ClusterAssignment {
                    centroids: result.centroids,
                    agent_to_cluster: mapping,
                });
                Ok(obs)
            }
        }
    }
}

/// Diagnostics from one action step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepInfo {
    pub substeps: usize,
    pub step_index: u64,
    pub fish: Vec<Vec2>,
    pub school_centroid: Vec2,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub observations: Vec<Observation>,
    pub reward: RewardBreakdown,
    pub info: StepInfo,
}

/// Full environment state. Single owner, stepped sequentially.
#[derive(Debug, Clone, PartialEq)]
pub struct Env {
    pub params: SimParams,
    pub beta: f64,
    pub target_end: TargetEnd,
    pub school: School,
    pub agents: Vec<LagState>,
    pub step_index: u64,
    rng: RngHandle,
    observer: Observer,
}

impl Env {
    /// Environment drawing from explicit streams. Call [`Env::reset`]
    /// before stepping.
    pub fn new(config: &RunConfig, rng: RngHandle, cluster_rng: RngHandle) -> Self {
        Env {
            params: config.sim.clone(),
            beta: config.reward.beta,
            target_end: config.reward.target_end,
            school: School::Static(vec![Vec2::new(0.5, 0.5)]),
            agents: vec![LagState::at(Vec2::new(0.5, 0.5)); config.sim.n_virtual],
            step_index: 0,
            rng,
            observer: Observer::new(config.observation_mode, config.cluster_warm_start, cluster_rng),
        }
    }

    /// Place school and agents uniformly at random.
    pub fn reset(&mut self) -> Result<Vec<Observation>, EnvError> {
        let rng = &mut self.rng;
        let mut draw = || Vec2::new(rng.uniform(), rng.uniform());
        self.school = match self.params.school_model {
            SchoolModel::Centroid => School::Centroid(SchoolCentroidState::at(draw())),
            SchoolModel::Swarm => School::Swarm(SwarmState {
                fish: (0..self.params.n_real)
                    .map(|_| SchoolCentroidState::at(draw()))
                    .collect(),
            }),
        };
        self.agents = (0..self.params.n_virtual).map(|_| LagState::at(draw())).collect();
        self.step_index = 0;
        self.observer.reset();
        self.observe()
    }

    /// Replace the school with fish that never move.
    pub fn pin_school(&mut self, fish: Vec<Vec2>) -> Result<Vec<Observation>, EnvError> {
        self.school = School::Static(fish);
        self.observe()
    }

    pub fn agent_positions(&self) -> Vec<Vec2> {
        self.agents.iter().map(|a| a.pos).collect()
    }

    pub fn observe(&mut self) -> Result<Vec<Observation>, EnvError> {
        let fish = self.school.positions();
        let agents = self.agent_positions();
        self.observer.observe(&fish, &agents)
    }

    pub fn rewards(&self) -> Result<RewardBreakdown, EnvError> {
        Ok(rewards::breakdown(
            &self.school.positions(),
            &self.agent_positions(),
            self.beta,
            self.target_end,
        )?)
    }

    pub fn step(&mut self, actions: &[usize]) -> Result<StepOutcome, EnvError> {
        if actions.len() != self.agents.len() {
            return Err(EnvError::ActionCount {
                expected: self.agents.len(),
                got: actions.len(),
            });
        }
        for (agent, &a) in self.agents.iter_mut().zip(actions) {
            agent.target = action_to_target(agent.pos, a, self.params.action_step_len)?;
        }
        let substeps = self.params.substeps();
        advance_world(&mut self.school, &mut self.agents, &self.params, substeps, &mut self.rng)?;
        self.step_index += 1;
        let reward = self.rewards()?;
        let observations = self.observe()?;
        let fish = self.school.positions();
        Ok(StepOutcome {
            observations,
            reward,
            info: StepInfo {
                substeps,
                step_index: self.step_index,
                school_centroid: self.school.centroid(),
                fish,
            },
        })
    }
}

/// Environment seeded from `(seed, 0)` streams, already reset.
pub fn reset(config: &RunConfig, seed: u64) -> Result<(Env, Vec<Observation>), EnvError> {
    let mut env = Env::new(
        config,
        make_rng(seed, stream_id(stream::ENV, 0)),
        make_rng(seed, stream_id(stream::CLUSTER, 0)),
    );
    let obs = env.reset()?;
    Ok((env, obs))
}
