//! Reward family. All terms are bounded to `[-1, 1]` for inputs in the
//! unit square.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{RewardConfig, RewardMode};
use crate::types::{TargetEnd, Vec2};

#[derive(Debug, Error, PartialEq)]
pub enum RewardError {
    #[error("reward needs at least one fish")]
    NoFish,
    #[error("reward needs at least one agent")]
    NoAgents,
    #[error("beta must lie in [0,1], got {0}")]
    BetaOutOfRange(f64),
}

/// Every reward term evaluated on one state.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub r_base: f64,
    pub r_school: f64,
    pub r_direction: f64,
    pub r_beta: f64,
}

impl RewardBreakdown {
    /// The training signal selected by `cfg.mode`.
    pub fn training_reward(&self, cfg: &RewardConfig) -> f64 {
        match cfg.mode {
            RewardMode::Baseline => self.r_base,
            RewardMode::Composite => self.r_beta,
        }
    }
}

/// School-centroid progress toward the target end.
pub fn r_base(c_x: f64, target_end: TargetEnd) -> f64 {
    1.0 - 2.0 * (c_x - target_end.x()).abs()
}

/// Cohesion: one minus √2 times the mean distance from each fish to its
/// nearest agent.
pub fn r_school(fish: &[Vec2], agents: &[Vec2]) -> Result<f64, RewardError> {
    if fish.is_empty() {
        return Err(RewardError::NoFish);
    }
    if agents.is_empty() {
        return Err(RewardError::NoAgents);
    }
    let total: f64 = fish
        .iter()
        .map(|f| {
            agents
                .iter()
                .map(|a| f.distance(*a))
                .fold(f64::INFINITY, f64::min)
        })
        .sum();
    Ok(1.0 - std::f64::consts::SQRT_2 * total / fish.len() as f64)
}

/// Progress of the agents' own centroid toward the target end.
pub fn r_direction(agents: &[Vec2], target_end: TargetEnd) -> Result<f64, RewardError> {
    let c = Vec2::mean(agents).ok_or(RewardError::NoAgents)?;
    Ok(r_base(c.x, target_end))
}

pub fn r_beta(beta: f64, r_school: f64, r_direction: f64) -> Result<f64, RewardError> {
    if !(0.0..=1.0).contains(&beta) {
        return Err(RewardError::BetaOutOfRange(beta));
    }
    Ok(beta * r_school + (1.0 - beta) * r_direction)
}

/// Evaluate every term for one configuration of fish and agents.
pub fn breakdown(
    fish: &[Vec2],
    agents: &[Vec2],
    beta: f64,
    target_end: TargetEnd,
) -> Result<RewardBreakdown, RewardError> {
    let centroid = Vec2::mean(fish).ok_or(RewardError::NoFish)?;
    let school = r_school(fish, agents)?;
    let direction = r_direction(agents, target_end)?;
    Ok(RewardBreakdown {
        r_base: r_base(centroid.x, target_end),
        r_school: school,
        r_direction: direction,
        r_beta: r_beta(beta, school, direction)?,
    })
}
