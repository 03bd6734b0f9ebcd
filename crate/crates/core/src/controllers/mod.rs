//! Path-tracking executors for a modified trajectory.

mod mpc;
mod pure_pursuit;
mod qp;

pub use mpc::{
    build_reference, kinematic_model, linearize_dynamics, numeric_jacobians, solve_mpc,
    InputPenalty, MpcConfig, MpcController, MpcSolution, ReferencePoint,
};
pub use pure_pursuit::{
    lookahead_point, pure_pursuit_control, pure_pursuit_steering, PurePursuitConfig,
};
pub use qp::{qp_solve, QpError, QpProblem, QpSettings, QpSolution};

use serde::{Deserialize, Serialize};

use crate::geometry::Point2;
use crate::vehicle_sim::{Action, VehicleParams, VehicleState};

#[derive(Debug, Clone, thiserror::Error)]
pub enum ControlError {
    #[error("trajectory has too few points")]
    EmptyTrajectory,
    #[error("invalid controller configuration: {0}")]
    InvalidConfig(String),
    #[error("mpc infeasible: {0}")]
    Infeasible(String),
    #[error(transparent)]
    Qp(#[from] QpError),
}

/// Controller selection as it appears in configuration files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TrackerConfig {
    PurePursuit(PurePursuitConfig),
    Mpc(MpcConfig),
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self::PurePursuit(PurePursuitConfig::default())
    }
}

/// A configured executor.
#[derive(Debug, Clone)]
pub enum Tracker {
    PurePursuit(PurePursuitConfig),
    Mpc(MpcController),
}

impl Tracker {
    pub fn new(config: &TrackerConfig) -> Result<Self, ControlError> {
        Ok(match config {
            TrackerConfig::PurePursuit(c) => {
                c.validate()?;
                Self::PurePursuit(*c)
            }
            TrackerConfig::Mpc(c) => Self::Mpc(MpcController::new(c.clone())?),
        })
    }

    /// Command for following `path`, whose points carry reference `speeds`.
    pub fn track(
        &mut self,
        state: &VehicleState,
        path: &[Point2],
        speeds: &[f64],
        params: &VehicleParams,
    ) -> Result<Action, ControlError> {
        match self {
            Self::PurePursuit(c) => pure_pursuit_control(state, path, c, params),
            Self::Mpc(m) => m.control(state, path, speeds, params),
        }
    }

    pub fn reset(&mut self) {
        if let Self::Mpc(m) = self {
            m.reset();
        }
    }
}
