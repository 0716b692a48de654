//! Proximal policy optimization, written against the flat-parameter MLP.

pub mod adam;
pub mod buffer;
pub mod checkpoint;
pub mod dist;
pub mod loss;
pub mod mlp;
pub mod policy;
pub mod train;

pub use checkpoint::{CheckpointError, CurvePoint, PolicyCheckpoint};
pub use mlp::Mlp;
pub use policy::Policy;
pub use train::{evaluate, evaluate_in, evaluate_policy, train, TrainError, Trainer, UpdateReport};
