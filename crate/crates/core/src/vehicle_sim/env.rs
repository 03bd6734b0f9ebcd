//! Episode loop: sense, decide, integrate at the control rate.

use std::io::{Read, Write};
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{
    check_collision, compute_reward, raycast, step_dynamics, Action, OccupancyGrid, RewardConfig,
    SimError, VehicleParams, VehicleState,
};
use crate::geometry::PolarScan;
use crate::track::Raceline;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LidarConfig {
    pub beam_count: usize,
    pub fov: f64,
    pub range_max: f64,
}

impl Default for LidarConfig {
    fn default() -> Self {
        Self {
            beam_count: 108,
            fov: 4.7,
            range_max: 10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub physics_dt: f64,
    pub control_period: f64,
    pub lidar: LidarConfig,
    pub reward: RewardConfig,
    pub vehicle: VehicleParams,
    pub max_start_attempts: usize,
    /// A random start is rejected when any beam within `start_cone` rad of
    /// the heading is shorter than this, in metres.
    pub start_clearance: f64,
    pub start_cone: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            physics_dt: 0.01,
            control_period: 0.1,
            lidar: LidarConfig::default(),
            reward: RewardConfig::default(),
            vehicle: VehicleParams::default(),
            max_start_attempts: 100,
            start_clearance: 1.5,
            start_cone: 0.25,
        }
    }
}

impl SimConfig {
    pub fn substeps(&self) -> usize {
        (self.control_period / self.physics_dt).round() as usize
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::InvalidConfig(m));
        if !(self.physics_dt > 0.0) || !(self.control_period > 0.0) {
            return bad("physics_dt and control_period must be positive".into());
        }
        let ratio = self.control_period / self.physics_dt;
        if (ratio - ratio.round()).abs() > 1e-9 || ratio.round() < 1.0 {
            return bad(format!(
                "control_period {} is not a whole multiple of physics_dt {}",
                self.control_period, self.physics_dt
            ));
        }
        if self.lidar.beam_count == 0 || !(self.lidar.range_max > 0.0) || !(self.lidar.fov >= 0.0) {
            return bad(
                "lidar needs at least one beam, positive range and non-negative fov".into(),
            );
        }
        if self.max_start_attempts == 0 {
            return bad("max_start_attempts must be at least 1".into());
        }
        self.vehicle.validate().map_err(SimError::InvalidConfig)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sensing {
    pub state: VehicleState,
    pub scan: PolarScan,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub state: VehicleState,
    pub scan: PolarScan,
    pub collided: bool,
    pub lap_completed: bool,
    pub reward: f64,
    /// Physics sub-steps survived during this control step.
    pub delta_n: usize,
}

impl StepOutcome {
    pub fn done(&self) -> bool {
        self.collided || self.lap_completed
    }

    pub fn sensing(&self) -> Sensing {
        Sensing {
            state: self.state,
            scan: self.scan.clone(),
        }
    }
}

/// Simulator for one vehicle on a fixed map. Cloning is cheap; the map and
/// raceline are shared.
#[derive(Debug, Clone)]
pub struct Env {
    grid: Arc<OccupancyGrid>,
    raceline: Arc<Raceline>,
    config: SimConfig,
    state: VehicleState,
    last_s: f64,
    progress: f64,
    lap_target: f64,
    time: f64,
    active: bool,
}

impl Env {
    pub fn new(
        grid: Arc<OccupancyGrid>,
        raceline: Arc<Raceline>,
        config: SimConfig,
    ) -> Result<Self, SimError> {
        config.validate()?;
        Ok(Self {
            grid,
            raceline,
            config,
            state: VehicleState::default(),
            last_s: 0.0,
            progress: 0.0,
            lap_target: 0.0,
            time: 0.0,
            active: false,
        })
    }

    pub fn grid(&self) -> &OccupancyGrid {
        &self.grid
    }

    pub fn raceline(&self) -> &Raceline {
        &self.raceline
    }

    pub fn shared_raceline(&self) -> Arc<Raceline> {
        Arc::clone(&self.raceline)
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn state(&self) -> &VehicleState {
        &self.state
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    /// Arc length driven along the raceline since the last reset.
    pub fn progress(&self) -> f64 {
        self.progress
    }

    fn scan(&self) -> PolarScan {
        let l = &self.config.lidar;
        raycast(
            &self.grid,
            &self.state.pose(),
            l.beam_count,
            l.fov,
            l.range_max,
        )
    }

    fn start_state(&self, waypoint: usize) -> VehicleState {
        let wp = &self.raceline.waypoints()[waypoint];
        VehicleState {
            x: wp.x,
            y: wp.y,
            v: 0.0,
            theta: wp.theta,
            delta: 0.0,
        }
    }

    fn start_is_valid(&self, state: &VehicleState, scan: &PolarScan) -> bool {
        if check_collision(&self.grid, state, &self.config.vehicle) {
            return false;
        }
        (0..scan.len())
            .filter(|&i| scan.beam_angle(i).abs() <= self.config.start_cone)
            .all(|i| scan.ranges[i] >= self.config.start_clearance)
    }

    /// Starts at rest on waypoint `waypoint`, facing along the raceline.
    pub fn reset_to(&mut self, waypoint: usize) -> Result<Sensing, SimError> {
        if waypoint >= self.raceline.len() {
            return Err(SimError::InvalidStart(waypoint));
        }
        self.state = self.start_state(waypoint);
        let scan = self.scan();
        if !self.start_is_valid(&self.state, &scan) {
            self.active = false;
            return Err(SimError::InvalidStart(waypoint));
        }
        self.last_s = self.raceline.arc_length_at(waypoint);
        self.progress = 0.0;
        self.lap_target = if self.raceline.is_closed() {
            self.raceline.total_length()
        } else {
            self.raceline.total_length() - self.last_s
        };
        self.time = 0.0;
        self.active = true;
        Ok(Sensing {
            state: self.state,
            scan,
        })
    }

    /// Starts at a uniformly drawn waypoint, redrawing until the pose is
    /// collision-free with a clear view ahead.
    pub fn reset<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<Sensing, SimError> {
        for _ in 0..self.config.max_start_attempts {
            let i = rng.gen_range(0..self.raceline.len());
            match self.reset_to(i) {
                Ok(obs) => return Ok(obs),
                Err(SimError::InvalidStart(_)) => continue,
                Err(e) => return Err(e),
            }
        }
        Err(SimError::NoValidStart {
            attempts: self.config.max_start_attempts,
        })
    }

    /// Holds `action` for one control period. `offsets` only enter the
    /// reward.
    pub fn step(&mut self, action: Action, offsets: &[f64]) -> Result<StepOutcome, SimError> {
        if !self.active {
            return Err(SimError::EpisodeFinished);
        }
        let mut delta_n = 0;
        let mut collided = false;
        let mut lap_completed = false;
        for _ in 0..self.config.substeps() {
            self.state = step_dynamics(
                &self.state,
                &action,
                &self.config.vehicle,
                self.config.physics_dt,
            );
            self.time += self.config.physics_dt;
            if check_collision(&self.grid, &self.state, &self.config.vehicle) {
                collided = true;
                break;
            }
            delta_n += 1;
            let (s, _) = self.raceline.project(self.state.position());
            self.progress += self.raceline.arc_delta(self.last_s, s);
            self.last_s = s;
            if self.progress >= self.lap_target {
                lap_completed = true;
                break;
            }
        }
        if collided || lap_completed {
            self.active = false;
        }
        let reward = compute_reward(delta_n, offsets, collided, &self.config.reward);
        Ok(StepOutcome {
            state: self.state,
            scan: self.scan(),
            collided,
            lap_completed,
            reward,
            delta_n,
        })
    }
}

/// What a driver commands for the next control period.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Decision {
    pub action: Action,
    /// Lateral offsets behind the action, empty for plain controllers.
    pub offsets: Vec<f64>,
}

pub trait Driver {
    fn decide(&mut self, state: &VehicleState, scan: &PolarScan) -> Result<Decision, crate::Error>;

    /// Clears per-episode memory.
    fn reset(&mut self) {}
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EpisodeStart {
    Random(u64),
    Waypoint(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub v: f64,
    pub theta: f64,
    pub delta: f64,
    pub reward: f64,
    pub collided: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EpisodeLog {
    pub rows: Vec<LogRow>,
    pub episodic_return: f64,
    pub collided: bool,
    pub lap_completed: bool,
    /// Mean of |o| over every offset emitted.
    pub mean_abs_offset: f64,
    pub max_abs_offset: f64,
}

impl EpisodeLog {
    pub fn steps(&self) -> usize {
        self.rows.len()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), SimError> {
        let mut w = csv::WriterBuilder::new().delimiter(b';').from_writer(out);
        for row in &self.rows {
            w.serialize(row).map_err(|e| SimError::Log(e.to_string()))?;
        }
        if self.rows.is_empty() {
            w.write_record(["t", "x", "y", "v", "theta", "delta", "reward", "collided"])
                .map_err(|e| SimError::Log(e.to_string()))?;
        }
        w.flush().map_err(|e| SimError::Log(e.to_string()))
    }

    pub fn read_rows<R: Read>(input: R) -> Result<Vec<LogRow>, SimError> {
        csv::ReaderBuilder::new()
            .delimiter(b';')
            .from_reader(input)
            .deserialize()
            .map(|r| r.map_err(|e| SimError::Log(e.to_string())))
            .collect()
    }
}

/// Runs one episode of at most `max_steps` control steps.
pub fn run_episode(
    env: &mut Env,
    driver: &mut dyn Driver,
    max_steps: usize,
    start: EpisodeStart,
) -> Result<EpisodeLog, crate::Error> {
    let mut log = EpisodeLog::default();
    if max_steps == 0 {
        return Ok(log);
    }
    let mut obs = match start {
        EpisodeStart::Random(seed) => {
            use rand::SeedableRng;
            env.reset(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed))?
        }
        EpisodeStart::Waypoint(i) => env.reset_to(i)?,
    };
    driver.reset();
    let mut offset_sum = 0.0;
    let mut offset_count = 0usize;
    for _ in 0..max_steps {
        let decision = driver.decide(&obs.state, &obs.scan)?;
        for o in &decision.offsets {
            offset_sum += o.abs();
            log.max_abs_offset = log.max_abs_offset.max(o.abs());
        }
        offset_count += decision.offsets.len();
        let out = env.step(decision.action, &decision.offsets)?;
        log.episodic_return += out.reward;
        log.rows.push(LogRow {
            t: env.time(),
            x: out.state.x,
            y: out.state.y,
            v: out.state.v,
            theta: out.state.theta,
            delta: out.state.delta,
            reward: out.reward,
            collided: out.collided,
        });
        if out.done() {
            log.collided = out.collided;
            log.lap_completed = out.lap_completed;
            break;
        }
        obs = out.sensing();
    }
    if offset_count > 0 {
        log.mean_abs_offset = offset_sum / offset_count as f64;
    }
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::track::shapes::oval;

    fn oval_env() -> Env {
        let track = oval(8.0, 3.0, 1.1, 0.1).unwrap();
        let line = Raceline::from_positions(&track.centers, true, 2.0, 3.0).unwrap();
        let grid = OccupancyGrid::from_centerline(&track, 0.05, 0.5).unwrap();
        Env::new(Arc::new(grid), Arc::new(line), SimConfig::default()).unwrap()
    }

    struct Constant(Action, Vec<f64>);

    impl Driver for Constant {
        fn decide(&mut self, _: &VehicleState, _: &PolarScan) -> Result<Decision, crate::Error> {
            Ok(Decision {
                action: self.0,
                offsets: self.1.clone(),
            })
        }
    }

    #[test]
    fn zero_steps_gives_empty_log() {
        let mut env = oval_env();
        let mut d = Constant(Action::default(), vec![]);
        let log = run_episode(&mut env, &mut d, 0, EpisodeStart::Waypoint(0)).unwrap();
        assert!(log.rows.is_empty());
        assert_eq!(log.episodic_return, 0.0);
    }

    #[test]
    fn driving_into_wall_collides_and_pays_penalty() {
        let mut env = oval_env();
        let mut d = Constant(
            Action {
                delta_des: 0.4,
                v_des: 2.0,
            },
            vec![1.0; 10],
        );
        let log = run_episode(&mut env, &mut d, 200, EpisodeStart::Waypoint(0)).unwrap();
        assert!(log.collided && !log.lap_completed);
        let last = log.rows.last().unwrap();
        assert!(last.collided);
        // the last step pays C on top of the survived sub-steps
        let survived = (last.reward + 1000.0 + 10f64.sqrt()) / 100.0;
        assert!((survived - survived.round()).abs() < 1e-9);
        assert!(survived.round() < 10.0);
    }

    #[test]
    fn stepping_after_done_is_an_error() {
        let mut env = oval_env();
        assert!(matches!(
            env.step(Action::default(), &[]),
            Err(SimError::EpisodeFinished)
        ));
    }

    #[test]
    fn random_start_faces_along_raceline() {
        let mut env = oval_env();
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(3);
        for _ in 0..20 {
            let obs = env.reset(&mut rng).unwrap();
            let (i, d) = crate::track::closest_waypoint(env.raceline(), obs.state.position());
            assert!(d < 1e-12);
            assert_eq!(obs.state.theta, env.raceline().waypoints()[i].theta);
            assert_eq!(obs.state.v, 0.0);
        }
    }

    #[test]
    fn log_round_trips_through_csv() {
        let mut env = oval_env();
        let mut d = Constant(
            Action {
                delta_des: 0.1,
                v_des: 1.0,
            },
            vec![],
        );
        let log = run_episode(&mut env, &mut d, 30, EpisodeStart::Random(7)).unwrap();
        let mut buf = Vec::new();
        log.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("t;x;y;v;theta;delta;reward;collided\n"));
        assert_eq!(EpisodeLog::read_rows(&buf[..]).unwrap(), log.rows);
    }
}
