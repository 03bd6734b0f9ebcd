//! Policy networks, behavioral cloning and PPO.

use std::path::PathBuf;

mod bc;
mod mlp;
mod optim;
mod policy;
mod ppo;
mod rollout;

pub use bc::*;
pub use mlp::{Layer, Mlp, MlpCache};
pub use optim::{clip_grad_norm, global_norm, Adam};
pub use policy::*;
pub use ppo::*;
pub use rollout::{init_policy, CurvePoint, RolloutSetup, TrainConfig, Transition};

#[derive(Debug, thiserror::Error)]
pub enum LearnError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("empty batch")]
    EmptyBatch,
    #[error("non-finite value in {what}; last parameters written to {snapshot:?}")]
    NonFinite {
        what: String,
        snapshot: Option<PathBuf>,
    },
    #[error("invalid checkpoint: {0}")]
    Checkpoint(String),
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}
