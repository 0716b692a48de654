//! Motion models for agents and the simulated school.
//!
//! Everything moves by a first-order lag toward a target, integrated with
//! the exact exponential update so substeps compose. The school picks a new
//! target at the start of each randomly timed phase: either the nearest
//! agent (when close and not ignoring it) or a random displacement.

use std::f64::consts::FRAC_PI_4;

use thiserror::Error;

use crate::config::SimParams;
use crate::rng::RngHandle;
use crate::types::Vec2;

pub const N_ACTIONS: usize = 8;

#[derive(Debug, Error, PartialEq)]
pub enum DynamicsError {
    #[error("no agent positions supplied")]
    NoAgents,
    #[error("action {0} out of range 0..8")]
    ActionOutOfRange(usize),
}

/// Position lagging toward a target.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LagState {
    pub pos: Vec2,
    pub target: Vec2,
}

impl LagState {
    /// At rest: target equals position.
    pub fn at(pos: Vec2) -> Self {
        LagState { pos, target: pos }
    }
}

/// Exact solution of `dx/dt = (target - x) / tau` over `dt`, then clamped.
pub fn lag_step(state: LagState, tau: f64, dt: f64) -> LagState {
    let decay = (-dt / tau).exp();
    let pos = state.target + (state.pos - state.target) * decay;
    LagState {
        pos: pos.clamp_unit(),
        target: state.target,
    }
}

/// School centroid (or one fish) with its phase clock.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SchoolCentroidState {
    pub lag: LagState,
    /// Seconds left in the current phase. Zero forces a new phase on the
    /// next step.
    pub phase_remaining: f64,
}

impl SchoolCentroidState {
    pub fn at(pos: Vec2) -> Self {
        SchoolCentroidState {
            lag: LagState::at(pos),
            phase_remaining: 0.0,
        }
    }

    pub fn pos(&self) -> Vec2 {
        self.lag.pos
    }
}

/// Phase duration, uniform on `(0, phase_max]`.
pub fn sample_phase(rng: &mut RngHandle, phase_max: f64) -> f64 {
    phase_max * (1.0 - rng.uniform())
}

fn nearest(point: Vec2, others: &[Vec2]) -> Option<(Vec2, f64)> {
    others
        .iter()
        .map(|&a| (a, point.distance(a)))
        .fold(None, |best, cur| match best {
            Some((_, d)) if d <= cur.1 => best,
            _ => Some(cur),
        })
}

/// New lag target for the school at a phase boundary.
///
/// The ignore draw and the displacement draws are consumed on every call,
/// whichever branch is taken, so the random stream does not depend on agent
/// geometry. With `p_ignore = 1` the school path is then independent of the
/// agents.
pub fn update_school_target(
    centroid: Vec2,
    agent_positions: &[Vec2],
    params: &SimParams,
    rng: &mut RngHandle,
) -> Result<Vec2, DynamicsError> {
    spontaneous_or_reaction(centroid, agent_positions, params, rng, Vec2::ZERO)
}

fn spontaneous_or_reaction(
    pos: Vec2,
    agent_positions: &[Vec2],
    params: &SimParams,
    rng: &mut RngHandle,
    pull: Vec2,
) -> Result<Vec2, DynamicsError> {
    let (agent, dist) = nearest(pos, agent_positions).ok_or(DynamicsError::NoAgents)?;
    let u = rng.uniform();
    let dx = rng.uniform_in(-params.delta_x_max, params.delta_x_max);
    let dy = rng.uniform_in(-params.delta_y_max, params.delta_y_max);
    if dist <= params.theta && u >= params.p_ignore {
        Ok(agent)
    } else {
        Ok((pos + Vec2::new(dx, dy) + pull).clamp_unit())
    }
}

/// Advance the school centroid by one substep.
pub fn step_school(
    state: SchoolCentroidState,
    agent_positions: &[Vec2],
    params: &SimParams,
    dt: f64,
    rng: &mut RngHandle,
) -> Result<SchoolCentroidState, DynamicsError> {
    step_fish(state, agent_positions, params, dt, rng, Vec2::ZERO)
}

fn step_fish(
    mut state: SchoolCentroidState,
    agent_positions: &[Vec2],
    params: &SimParams,
    dt: f64,
    rng: &mut RngHandle,
    pull: Vec2,
) -> Result<SchoolCentroidState, DynamicsError> {
    state.phase_remaining -= dt;
    if state.phase_remaining <= 0.0 {
        state.phase_remaining = sample_phase(rng, params.phase_max);
        state.lag.target =
            spontaneous_or_reaction(state.lag.pos, agent_positions, params, rng, pull)?;
    }
    state.lag = lag_step(state.lag, params.tau_r, dt);
    Ok(state)
}

/// Per-fish school. Each fish runs its own phase clock.
#[derive(Debug, Clone, PartialEq)]
pub struct SwarmState {
    pub fish: Vec<SchoolCentroidState>,
}

impl SwarmState {
    pub fn positions(&self) -> Vec<Vec2> {
        self.fish.iter().map(|f| f.pos()).collect()
    }

    pub fn centroid(&self) -> Vec2 {
        Vec2::mean(&self.positions()).unwrap_or(Vec2::new(0.5, 0.5))
    }
}

/// Advance every fish by one substep.
///
/// A fish that moves spontaneously adds `cohesion · (centroid - fish)` to
/// its random displacement, with the centroid taken before the substep.
/// For a single fish the pull vanishes and this reduces to [`step_school`].
pub fn step_swarm(
    state: &SwarmState,
    agent_positions: &[Vec2],
    params: &SimParams,
    dt: f64,
    rng: &mut RngHandle,
) -> Result<SwarmState, DynamicsError> {
    let centroid = state.centroid();
    let fish = state
        .fish
        .iter()
        .map(|f| {
            let pull = (centroid - f.pos()) * params.cohesion;
            step_fish(*f, agent_positions, params, dt, rng, pull)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(SwarmState { fish })
}

/// Direction of a discrete action: action 0 is +x, counter-clockwise in
/// 45° increments.
pub fn action_direction(action: usize) -> Result<Vec2, DynamicsError> {
    if action >= N_ACTIONS {
        return Err(DynamicsError::ActionOutOfRange(action));
    }
    let angle = FRAC_PI_4 * action as f64;
    Ok(Vec2::new(angle.cos(), angle.sin()))
}

/// Lag target selected by `action` from `pos`, clamped to the arena.
pub fn action_to_target(pos: Vec2, action: usize, step_len: f64) -> Result<Vec2, DynamicsError> {
    Ok((pos + action_direction(action)? * step_len).clamp_unit())
}

/// The action whose direction is the horizontal mirror of `action`.
pub fn mirror_action(action: usize) -> usize {
    (N_ACTIONS + 4 - action % N_ACTIONS) % N_ACTIONS
}
