//! Closed-loop fish-school guidance: school simulator, PPO-trained virtual
//! agent, experiment protocol and guidance metrics.

pub mod analytics;
pub mod calib;
pub mod config;
pub mod dynamics;
pub mod env;
pub mod kmeans;
pub mod par;
pub mod ppo;
pub mod rewards;
pub mod rng;
pub mod session;
pub mod types;

pub use config::{load_config, RunConfig};
pub use par::Exec;
pub use rng::{make_rng, RngHandle};
pub use types::{TargetEnd, Vec2};
