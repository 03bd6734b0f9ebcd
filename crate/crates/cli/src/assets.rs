//! Generator for the bundled tracks.

use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use clap::ValueEnum;

use nudge_core::track::{
    optimize_min_curvature, save_centerline, save_waypoints, shapes, MinCurvatureConfig, TrackCenterline,
};
use nudge_core::vehicle_sim::{save_map, OccupancyGrid};

pub const MAP_RESOLUTION: f64 = 0.05;
pub const MAP_PADDING: f64 = 0.5;
/// Raceline clearance from either boundary.
pub const RACELINE_MARGIN: f64 = 0.4;
/// Projected-gradient stopping threshold for tracks of a few hundred
/// points. Smaller values sit below the gradient's rounding noise.
pub const RACELINE_TOLERANCE: f64 = 1e-4;
pub const RACELINE_MAX_ITERATIONS: usize = 500_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Shape {
    Oval,
    Squiggle,
}

pub fn centerline(shape: Shape) -> Result<TrackCenterline> {
    Ok(match shape {
        Shape::Oval => shapes::oval(8.0, 3.0, 1.1, 0.1)?,
        Shape::Squiggle => shapes::squiggle(6.0, 1.0, 3, 1.1, 0.1)?,
    })
}

/// Writes `centerline.csv`, `map.pgm` + `map.yaml` and a minimum-curvature
/// `waypoints.csv` into `dir`.
pub fn generate(shape: Shape, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let track = centerline(shape)?;
    save_centerline(&dir.join("centerline.csv"), &track)?;
    let grid = OccupancyGrid::from_centerline(&track, MAP_RESOLUTION, MAP_PADDING)?;
    save_map(&dir.join("map.pgm"), &grid)?;
    let cfg = MinCurvatureConfig {
        margin: RACELINE_MARGIN,
        tolerance: RACELINE_TOLERANCE,
        max_iterations: RACELINE_MAX_ITERATIONS,
        ..MinCurvatureConfig::default()
    };
    let sol = optimize_min_curvature(&track, &cfg)?;
    save_waypoints(&dir.join("waypoints.csv"), &sol.raceline)?;
    Ok(())
}
