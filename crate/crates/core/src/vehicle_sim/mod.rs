//! Closed-loop simulator: kinematic integration, lidar, collisions,
//! obstacles and reward.

use std::path::PathBuf;

mod dynamics;
mod env;
mod grid;
mod reward;

pub use dynamics::{step_dynamics, Action, VehicleParams, VehicleState};
pub use env::{
    run_episode, Decision, Driver, Env, EpisodeLog, EpisodeStart, LidarConfig, LogRow, Sensing,
    SimConfig, StepOutcome,
};
pub use grid::{
    check_collision, load_map, parse_sidecar, place_obstacles, raycast, save_map, sidecar_path,
    MapMeta, ObstacleSpec, OccupancyGrid, DEFAULT_OBSTACLE_SIZE,
};
pub use reward::{compute_reward, RewardConfig};

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {msg}")]
    Map { path: PathBuf, msg: String },
    #[error("invalid simulator configuration: {0}")]
    InvalidConfig(String),
    #[error("obstacle {index}: {reason}")]
    ObstacleOutOfBounds { index: usize, reason: String },
    #[error("no collision-free start pose found after {attempts} attempts")]
    NoValidStart { attempts: usize },
    #[error("waypoint {0} is not a valid start pose")]
    InvalidStart(usize),
    #[error("episode already finished; call reset first")]
    EpisodeFinished,
    #[error("trajectory log: {0}")]
    Log(String),
}
