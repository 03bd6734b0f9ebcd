//! Offset-based trajectory planning for 2D racing.
//!
//! A reference raceline is cut into a short horizon ahead of the vehicle, a
//! learned policy shifts each horizon point sideways in the vehicle frame, and
//! a path-tracking controller (pure pursuit or linear MPC) drives the
//! modified trajectory. The policy is first trained by behavioral cloning
//! towards zero offsets and then refined with PPO to steer around static
//! obstacles.

pub mod controllers;
pub mod geometry;
pub mod learn;
pub mod planner;
pub mod track;
pub mod vehicle_sim;

/// Any failure surfaced by the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Track(#[from] track::TrackError),
    #[error(transparent)]
    Sim(#[from] vehicle_sim::SimError),
    #[error(transparent)]
    Control(#[from] controllers::ControlError),
    #[error(transparent)]
    Learn(#[from] learn::LearnError),
    #[error(transparent)]
    Plan(#[from] planner::PlanError),
}
