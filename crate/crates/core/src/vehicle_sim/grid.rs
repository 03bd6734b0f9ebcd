//! Occupancy grid: map I/O, lidar raycasting, body collision and obstacle
//! placement.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{SimError, VehicleParams, VehicleState};
use crate::geometry::{point_segment_distance, Point2, PolarScan, Pose2D};
use crate::track::{Raceline, TrackCenterline};

/// Boolean occupancy raster. Cell `(col, row)` covers
/// `[col·res, (col+1)·res) × [row·res, (row+1)·res)` in the frame of
/// `origin`; row 0 is the bottom of the map.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyGrid {
    pub width: usize,
    pub height: usize,
    pub resolution: f64,
    pub origin: Pose2D,
    cells: Vec<bool>,
}

/// A square obstacle centred on a waypoint, optionally shifted along the
/// waypoint's left normal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObstacleSpec {
    pub waypoint: usize,
    #[serde(default)]
    pub lateral_shift: f64,
    #[serde(default = "default_obstacle_size")]
    pub size: f64,
}

pub const DEFAULT_OBSTACLE_SIZE: f64 = 0.35;

fn default_obstacle_size() -> f64 {
    DEFAULT_OBSTACLE_SIZE
}

impl OccupancyGrid {
    pub fn new(
        width: usize,
        height: usize,
        resolution: f64,
        origin: Pose2D,
    ) -> Result<Self, SimError> {
        if !(resolution > 0.0) || width == 0 || height == 0 {
            return Err(SimError::InvalidConfig(format!(
                "grid needs positive size and resolution (got {width}x{height} @ {resolution})"
            )));
        }
        Ok(Self {
            width,
            height,
            resolution,
            origin,
            cells: vec![false; width * height],
        })
    }

    pub fn is_occupied(&self, col: i64, row: i64) -> bool {
        if col < 0 || row < 0 || col >= self.width as i64 || row >= self.height as i64 {
            return true;
        }
        self.cells[row as usize * self.width + col as usize]
    }

    pub fn set(&mut self, col: usize, row: usize, occupied: bool) {
        self.cells[row * self.width + col] = occupied;
    }

    pub fn occupied_count(&self) -> usize {
        self.cells.iter().filter(|&&c| c).count()
    }

    /// Continuous cell coordinates of a world point.
    pub fn to_cell_coords(&self, p: Point2) -> Point2 {
        self.origin.to_local(p) * (1.0 / self.resolution)
    }

    /// World position of a cell centre.
    pub fn cell_center(&self, col: usize, row: usize) -> Point2 {
        self.origin.to_world(Point2::new(
            (col as f64 + 0.5) * self.resolution,
            (row as f64 + 0.5) * self.resolution,
        ))
    }

    /// Whether `p` lies in an occupied cell. Cells are closed sets: a point
    /// on a shared boundary touches the cells on both sides.
    pub fn occupied_at(&self, p: Point2) -> bool {
        const EDGE_EPS: f64 = 1e-9;
        let c = self.to_cell_coords(p);
        let candidates = |v: f64| -> [Option<i64>; 2] {
            let base = v.floor() as i64;
            let on_edge = (v - v.round()).abs() < EDGE_EPS;
            if on_edge {
                let r = v.round() as i64;
                [Some(r - 1), Some(r)]
            } else {
                [Some(base), None]
            }
        };
        for col in candidates(c.x).into_iter().flatten() {
            for row in candidates(c.y).into_iter().flatten() {
                if self.is_occupied(col, row) {
                    return true;
                }
            }
        }
        false
    }

    /// Rasterises a track: a cell is free when its centre lies within the
    /// corridor around the centerline. `padding` metres of wall surround the
    /// track's bounding box.
    pub fn from_centerline(
        track: &TrackCenterline,
        resolution: f64,
        padding: f64,
    ) -> Result<Self, SimError> {
        let n = track.len();
        let max_w = track
            .half_width_left
            .iter()
            .chain(&track.half_width_right)
            .fold(0.0f64, |a, &b| a.max(b));
        let (mut lo, mut hi) = (
            Point2::new(f64::MAX, f64::MAX),
            Point2::new(f64::MIN, f64::MIN),
        );
        for c in &track.centers {
            lo = Point2::new(lo.x.min(c.x), lo.y.min(c.y));
            hi = Point2::new(hi.x.max(c.x), hi.y.max(c.y));
        }
        let margin = max_w + padding;
        let origin = Pose2D::new(lo.x - margin, lo.y - margin, 0.0);
        let width = ((hi.x - lo.x + 2.0 * margin) / resolution).ceil() as usize;
        let height = ((hi.y - lo.y + 2.0 * margin) / resolution).ceil() as usize;
        let mut grid = Self::new(width, height, resolution, origin)?;
        let segs = if track.closed { n } else { n - 1 };
        for row in 0..height {
            for col in 0..width {
                let p = grid.cell_center(col, row);
                let mut best = (f64::INFINITY, 0usize, 0.0);
                for i in 0..segs {
                    let a = track.centers[i];
                    let b = track.centers[(i + 1) % n];
                    let (d, t) = point_segment_distance(p, a, b);
                    if d < best.0 {
                        best = (d, i, t);
                    }
                }
                let (d, i, t) = best;
                let j = (i + 1) % n;
                let a = track.centers[i];
                let b = track.centers[j];
                let left = (b - a).cross(p - a) >= 0.0;
                let w = if left {
                    track.half_width_left[i] * (1.0 - t) + track.half_width_left[j] * t
                } else {
                    track.half_width_right[i] * (1.0 - t) + track.half_width_right[j] * t
                };
                grid.set(col, row, d > w);
            }
        }
        Ok(grid)
    }
}

/// Lidar scan of `beam_count` beams spread evenly over `fov`, centred on the
/// heading. Each beam walks the grid cell by cell (Amanatides–Woo traversal)
/// and reports the distance at which it enters the first occupied cell,
/// capped at `range_max`. A pose inside an occupied cell yields all zeros.
pub fn raycast(
    grid: &OccupancyGrid,
    pose: &Pose2D,
    beam_count: usize,
    fov: f64,
    range_max: f64,
) -> PolarScan {
    let (angle_min, angle_increment) = if beam_count > 1 {
        (-fov / 2.0, fov / (beam_count - 1) as f64)
    } else {
        (0.0, 0.0)
    };
    let start = grid.to_cell_coords(pose.position());
    let start_cell = (start.x.floor() as i64, start.y.floor() as i64);
    if grid.is_occupied(start_cell.0, start_cell.1) {
        return PolarScan {
            angle_min,
            angle_increment,
            ranges: vec![0.0; beam_count],
        };
    }
    let max_cells = range_max / grid.resolution;
    let ranges = (0..beam_count)
        .map(|i| {
            let angle = pose.theta + angle_min + i as f64 * angle_increment - grid.origin.theta;
            let t = traverse(grid, start, start_cell, angle, max_cells);
            (t * grid.resolution).min(range_max)
        })
        .collect();
    PolarScan {
        angle_min,
        angle_increment,
        ranges,
    }
}

/// Distance (in cell units) along the ray to the first occupied cell.
fn traverse(grid: &OccupancyGrid, start: Point2, cell: (i64, i64), angle: f64, max_t: f64) -> f64 {
    let (dy, dx) = angle.sin_cos();
    let (mut cx, mut cy) = cell;
    let step_x: i64 = if dx > 0.0 { 1 } else { -1 };
    let step_y: i64 = if dy > 0.0 { 1 } else { -1 };
    let t_delta_x = if dx != 0.0 {
        1.0 / dx.abs()
    } else {
        f64::INFINITY
    };
    let t_delta_y = if dy != 0.0 {
        1.0 / dy.abs()
    } else {
        f64::INFINITY
    };
    let mut t_max_x = if dx > 0.0 {
        (cx as f64 + 1.0 - start.x) / dx
    } else if dx < 0.0 {
        (start.x - cx as f64) / -dx
    } else {
        f64::INFINITY
    };
    let mut t_max_y = if dy > 0.0 {
        (cy as f64 + 1.0 - start.y) / dy
    } else if dy < 0.0 {
        (start.y - cy as f64) / -dy
    } else {
        f64::INFINITY
    };
    loop {
        let t = if t_max_x < t_max_y {
            cx += step_x;
            let t = t_max_x;
            t_max_x += t_delta_x;
            t
        } else {
            cy += step_y;
            let t = t_max_y;
            t_max_y += t_delta_y;
            t
        };
        if t >= max_t {
            return max_t;
        }
        if grid.is_occupied(cx, cy) {
            return t;
        }
    }
}

/// Body rectangle test. The body is `body_length × body_width`, centred half
/// a wheelbase ahead of the rear axle, and is sampled on a lattice no coarser
/// than half a cell, edges included.
pub fn check_collision(grid: &OccupancyGrid, state: &VehicleState, params: &VehicleParams) -> bool {
    let pose = Pose2D::new(
        state.x + 0.5 * params.wheelbase * state.theta.cos(),
        state.y + 0.5 * params.wheelbase * state.theta.sin(),
        state.theta,
    );
    let spacing = grid.resolution / 2.0;
    let nx = (params.body_length / spacing).ceil() as usize;
    let ny = (params.body_width / spacing).ceil() as usize;
    for i in 0..=nx {
        let lx = -params.body_length / 2.0 + params.body_length * i as f64 / nx as f64;
        for j in 0..=ny {
            let ly = -params.body_width / 2.0 + params.body_width * j as f64 / ny as f64;
            if grid.occupied_at(pose.to_world(Point2::new(lx, ly))) {
                return true;
            }
        }
    }
    false
}

/// Returns a copy of `grid` with square blocks marked occupied. A block of
/// side `size` covers `round(size / resolution)` cells per side around the
/// cell containing its centre.
pub fn place_obstacles(
    grid: &OccupancyGrid,
    raceline: &Raceline,
    specs: &[ObstacleSpec],
) -> Result<OccupancyGrid, SimError> {
    let mut out = grid.clone();
    for (index, spec) in specs.iter().enumerate() {
        let wp = raceline.waypoints().get(spec.waypoint).ok_or_else(|| {
            SimError::ObstacleOutOfBounds {
                index,
                reason: format!(
                    "waypoint {} does not exist ({} waypoints)",
                    spec.waypoint,
                    raceline.len()
                ),
            }
        })?;
        if !(spec.size > 0.0) {
            return Err(SimError::ObstacleOutOfBounds {
                index,
                reason: format!("size must be positive, got {}", spec.size),
            });
        }
        let normal = Point2::new(-wp.theta.sin(), wp.theta.cos());
        let center = wp.position() + normal * spec.lateral_shift;
        let c = grid.to_cell_coords(center);
        let (ccol, crow) = (c.x.floor() as i64, c.y.floor() as i64);
        let cells = (spec.size / grid.resolution).round().max(1.0) as i64;
        let lo = -(cells / 2);
        let hi = lo + cells - 1;
        if ccol + lo < 0
            || crow + lo < 0
            || ccol + hi >= grid.width as i64
            || crow + hi >= grid.height as i64
        {
            return Err(SimError::ObstacleOutOfBounds {
                index,
                reason: "footprint leaves the map".to_string(),
            });
        }
        for dc in lo..=hi {
            for dr in lo..=hi {
                out.set((ccol + dc) as usize, (crow + dr) as usize, true);
            }
        }
    }
    Ok(out)
}

/// Map sidecar fields.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MapMeta {
    pub resolution: f64,
    pub origin: Pose2D,
}

/// Path of the `key: value` sidecar next to a `.pgm` map.
pub fn sidecar_path(pgm: &Path) -> PathBuf {
    pgm.with_extension("yaml")
}

fn io_err(path: &Path, source: std::io::Error) -> SimError {
    SimError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn map_err(path: &Path, msg: impl Into<String>) -> SimError {
    SimError::Map {
        path: path.to_path_buf(),
        msg: msg.into(),
    }
}

/// Loads a plain (P2) graymap plus its sidecar. Pixels below 128 are
/// occupied; the first image row is the top of the map.
pub fn load_map(pgm: &Path) -> Result<OccupancyGrid, SimError> {
    let text = fs::read_to_string(pgm).map_err(|e| io_err(pgm, e))?;
    let mut tokens = text
        .lines()
        .map(|l| l.split('#').next().unwrap_or(""))
        .flat_map(str::split_whitespace);
    if tokens.next() != Some("P2") {
        return Err(map_err(pgm, "expected plain graymap magic `P2`"));
    }
    let mut next_num = |what: &str| -> Result<usize, SimError> {
        tokens
            .next()
            .ok_or_else(|| map_err(pgm, format!("missing {what}")))?
            .parse::<usize>()
            .map_err(|_| map_err(pgm, format!("bad {what}")))
    };
    let width = next_num("width")?;
    let height = next_num("height")?;
    let maxval = next_num("maxval")?;
    if maxval == 0 {
        return Err(map_err(pgm, "maxval must be positive"));
    }
    let meta_path = sidecar_path(pgm);
    let meta = parse_sidecar(
        &fs::read_to_string(&meta_path).map_err(|e| io_err(&meta_path, e))?,
        &meta_path,
    )?;
    let mut grid = OccupancyGrid::new(width, height, meta.resolution, meta.origin)?;
    let threshold = 128.0 / 255.0 * maxval as f64;
    for img_row in 0..height {
        for col in 0..width {
            let v = next_num("pixel")?;
            grid.set(col, height - 1 - img_row, (v as f64) < threshold);
        }
    }
    Ok(grid)
}

pub fn parse_sidecar(text: &str, path: &Path) -> Result<MapMeta, SimError> {
    let get = |key: &str| -> Result<f64, SimError> {
        text.lines()
            .filter_map(|l| l.split_once(':'))
            .find(|(k, _)| k.trim() == key)
            .ok_or_else(|| map_err(path, format!("missing key `{key}`")))?
            .1
            .trim()
            .parse::<f64>()
            .map_err(|_| map_err(path, format!("key `{key}` is not a number")))
    };
    let resolution = get("resolution")?;
    let origin = Pose2D::new(get("origin_x")?, get("origin_y")?, get("origin_theta")?);
    Ok(MapMeta { resolution, origin })
}

pub fn save_map(pgm: &Path, grid: &OccupancyGrid) -> Result<(), SimError> {
    let mut out = format!("P2\n{} {}\n255\n", grid.width, grid.height);
    for img_row in 0..grid.height {
        let row = grid.height - 1 - img_row;
        let line: Vec<&str> = (0..grid.width)
            .map(|col| {
                if grid.is_occupied(col as i64, row as i64) {
                    "0"
                } else {
                    "255"
                }
            })
            .collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    fs::write(pgm, out).map_err(|e| io_err(pgm, e))?;
    let meta = format!(
        "resolution: {}\norigin_x: {}\norigin_y: {}\norigin_theta: {}\n",
        grid.resolution, grid.origin.x, grid.origin.y, grid.origin.theta
    );
    let meta_path = sidecar_path(pgm);
    fs::write(&meta_path, meta).map_err(|e| io_err(&meta_path, e))
}
