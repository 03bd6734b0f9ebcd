//! Horizon extraction, lateral offsets, observation assembly and the
//! policy-driven agent.

use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::controllers::{Tracker, TrackerConfig};
use crate::geometry::{world_to_vehicle, Point2, PolarScan};
use crate::learn::{gaussian_logprob_and_entropy, squash, PolicyParams};
use crate::track::{closest_waypoint, resample_by_arclength, Raceline};
use crate::vehicle_sim::{Decision, Driver, LidarConfig, VehicleParams, VehicleState};

#[derive(Debug, Clone, thiserror::Error)]
pub enum PlanError {
    #[error("scan has {found} beams, observation expects {expected}")]
    BeamMismatch { expected: usize, found: usize },
    #[error("{what}: expected {expected} values, got {found}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("invalid planning configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlanningConfig {
    pub horizon: usize,
    /// Seconds of reference driving covered by the horizon.
    pub prediction_time: f64,
    pub o_max: f64,
}

impl Default for PlanningConfig {
    fn default() -> Self {
        Self {
            horizon: 10,
            prediction_time: 1.0,
            o_max: 1.0,
        }
    }
}

impl PlanningConfig {
    pub fn validate(&self) -> Result<(), PlanError> {
        if self.horizon < 2 || !(self.prediction_time > 0.0) || !(self.o_max > 0.0) {
            return Err(PlanError::InvalidConfig(format!(
                "need horizon >= 2, prediction_time > 0, o_max > 0 (got {}, {}, {})",
                self.horizon, self.prediction_time, self.o_max
            )));
        }
        Ok(())
    }

    pub fn observation_dim(&self, beam_count: usize) -> usize {
        beam_count + 2 * self.horizon + 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Frame {
    World,
    Vehicle,
}

/// `H` points ahead of the vehicle with their reference speeds.
#[derive(Debug, Clone, PartialEq)]
pub struct HorizonTrajectory {
    pub points: Vec<Point2>,
    pub speeds: Vec<f64>,
    pub frame: Frame,
}

/// Cuts the horizon out of the raceline: from the waypoint closest to the
/// vehicle, over the distance the reference speeds cover in
/// `prediction_time`, resampled to `horizon` evenly spaced points.
pub fn extract_horizon(
    raceline: &Raceline,
    state: &VehicleState,
    cfg: &PlanningConfig,
) -> HorizonTrajectory {
    let (start, _) = closest_waypoint(raceline, state.position());
    let dt = cfg.prediction_time / cfg.horizon as f64;
    let s0 = raceline.arc_length_at(start);
    let mut s = s0;
    for _ in 0..cfg.horizon {
        s += raceline.speed_at(s) * dt;
    }
    let length = (s - s0).max(1e-6);
    let points = resample_by_arclength(raceline, start, length, cfg.horizon)
        .expect("validated raceline, positive length and horizon >= 2");
    let step = length / (cfg.horizon - 1) as f64;
    let speeds = (0..cfg.horizon)
        .map(|k| raceline.speed_at(s0 + k as f64 * step))
        .collect();
    HorizonTrajectory {
        points,
        speeds,
        frame: Frame::World,
    }
}

/// Shifts each horizon point sideways in the vehicle frame by its offset:
/// world → vehicle, `y += o_i`, vehicle → world.
pub fn apply_offsets(
    horizon: &HorizonTrajectory,
    state: &VehicleState,
    offsets: &[f64],
) -> Result<HorizonTrajectory, PlanError> {
    if offsets.len() != horizon.points.len() {
        return Err(PlanError::LengthMismatch {
            what: "offsets",
            expected: horizon.points.len(),
            found: offsets.len(),
        });
    }
    let pose = state.pose();
    let points = horizon
        .points
        .iter()
        .zip(offsets)
        .map(|(&p, &o)| {
            if o == 0.0 {
                return p;
            }
            let mut local = pose.to_local(p);
            local.y += o;
            pose.to_world(local)
        })
        .collect();
    Ok(HorizonTrajectory {
        points,
        speeds: horizon.speeds.clone(),
        frame: horizon.frame,
    })
}

/// Policy input: normalised scan, horizon in the vehicle frame, speed.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub scan: Vec<f64>,
    /// x, y interleaved.
    pub local_horizon: Vec<f64>,
    pub speed: f64,
}

impl Observation {
    pub fn len(&self) -> usize {
        self.scan.len() + self.local_horizon.len() + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// `[scan | local_horizon | speed]`
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.len());
        v.extend_from_slice(&self.scan);
        v.extend_from_slice(&self.local_horizon);
        v.push(self.speed);
        v
    }
}

pub fn build_observation(
    scan: &PolarScan,
    horizon: &HorizonTrajectory,
    state: &VehicleState,
    lidar: &LidarConfig,
) -> Result<Observation, PlanError> {
    if scan.len() != lidar.beam_count {
        return Err(PlanError::BeamMismatch {
            expected: lidar.beam_count,
            found: scan.len(),
        });
    }
    let local = match horizon.frame {
        Frame::World => world_to_vehicle(&state.pose(), &horizon.points),
        Frame::Vehicle => horizon.points.clone(),
    };
    Ok(Observation {
        scan: scan.ranges.iter().map(|r| r / lidar.range_max).collect(),
        local_horizon: local.iter().flat_map(|p| [p.x, p.y]).collect(),
        speed: state.v,
    })
}

/// Offsets chosen by the policy and the Gaussian sample behind them.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanOutput {
    pub offsets: Vec<f64>,
    /// Action before the tanh squash.
    pub pre_squash: Vec<f64>,
    pub log_prob: f64,
}

/// Deterministic mode squashes the actor mean; stochastic mode squashes a
/// sample from `N(mean, exp(log_std)²)`.
pub fn plan_step(
    policy: &PolicyParams,
    observation: &[f64],
    deterministic: bool,
    o_max: f64,
    rng: &mut impl Rng,
) -> Result<PlanOutput, crate::Error> {
    let mean = policy.actor.forward_one(observation)?;
    let pre: Vec<f64> = if deterministic {
        mean.iter().copied().collect()
    } else {
        mean.iter()
            .zip(policy.log_std.iter())
            .map(|(m, ls)| m + ls.exp() * rng.sample::<f64, _>(StandardNormal))
            .collect()
    };
    let (log_prob, _) = gaussian_logprob_and_entropy(mean.as_slice(), policy.log_std.as_slice(), &pre);
    Ok(PlanOutput {
        offsets: squash(&pre, o_max),
        pre_squash: pre,
        log_prob,
    })
}

/// Raceline horizon, optional learned offsets, and a path tracker. Without a
/// policy it drives the raceline itself.
#[derive(Debug, Clone)]
pub struct PlanningAgent {
    raceline: Arc<Raceline>,
    pub planning: PlanningConfig,
    policy: Option<Arc<PolicyParams>>,
    tracker: Tracker,
    vehicle: VehicleParams,
    lidar: LidarConfig,
    pub deterministic: bool,
    rng: ChaCha8Rng,
}

/// One decision with everything a learner needs to score it.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentStep {
    pub decision: Decision,
    pub observation: Vec<f64>,
    pub plan: Option<PlanOutput>,
}

impl PlanningAgent {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        raceline: Arc<Raceline>,
        planning: PlanningConfig,
        policy: Option<Arc<PolicyParams>>,
        tracker: &TrackerConfig,
        vehicle: VehicleParams,
        lidar: LidarConfig,
        seed: u64,
    ) -> Result<Self, crate::Error> {
        planning.validate()?;
        if let Some(p) = &policy {
            let want = planning.observation_dim(lidar.beam_count);
            if p.input_dim() != want || p.action_dim() != planning.horizon {
                return Err(crate::learn::LearnError::Dimension(format!(
                    "policy has input_dim {} and action_dim {}, planner expects {} and {}",
                    p.input_dim(),
                    p.action_dim(),
                    want,
                    planning.horizon
                ))
                .into());
            }
        }
        Ok(Self {
            raceline,
            planning,
            policy,
            tracker: Tracker::new(tracker)?,
            vehicle,
            lidar,
            deterministic: true,
            rng: rand::SeedableRng::seed_from_u64(seed),
        })
    }

    pub fn set_policy(&mut self, policy: Option<Arc<PolicyParams>>) {
        self.policy = policy;
    }

    pub fn reset_tracker(&mut self) {
        self.tracker.reset();
    }

    pub fn observe(&self, state: &VehicleState, scan: &PolarScan) -> Result<(HorizonTrajectory, Vec<f64>), PlanError> {
        let horizon = extract_horizon(&self.raceline, state, &self.planning);
        let obs = build_observation(scan, &horizon, state, &self.lidar)?;
        Ok((horizon, obs.to_vec()))
    }

    /// Tracks the horizon shifted by `offsets`.
    pub fn act_with_offsets(
        &mut self,
        state: &VehicleState,
        horizon: &HorizonTrajectory,
        offsets: Vec<f64>,
    ) -> Result<Decision, crate::Error> {
        let modified = apply_offsets(horizon, state, &offsets)?;
        let action = self
            .tracker
            .track(state, &modified.points, &modified.speeds, &self.vehicle)?;
        Ok(Decision { action, offsets })
    }

    pub fn step(&mut self, state: &VehicleState, scan: &PolarScan) -> Result<AgentStep, crate::Error> {
        let (horizon, observation) = self.observe(state, scan)?;
        let plan = match &self.policy {
            Some(p) => Some(plan_step(
                p,
                &observation,
                self.deterministic,
                self.planning.o_max,
                &mut self.rng,
            )?),
            None => None,
        };
        let offsets = plan
            .as_ref()
            .map_or_else(|| vec![0.0; self.planning.horizon], |p| p.offsets.clone());
        let decision = self.act_with_offsets(state, &horizon, offsets)?;
        Ok(AgentStep {
            decision,
            observation,
            plan,
        })
    }
}

impl Driver for PlanningAgent {
    fn decide(&mut self, state: &VehicleState, scan: &PolarScan) -> Result<Decision, crate::Error> {
        Ok(self.step(state, scan)?.decision)
    }

    fn reset(&mut self) {
        self.tracker.reset();
    }
}

/// State and distance to the raceline after one physics step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackingSample {
    pub t: f64,
    pub state: VehicleState,
    pub cross_track: f64,
}

/// Drives the raceline itself (zero offsets) from `start` without a map:
/// the tracker runs every `control_period`, the dynamics every
/// `physics_dt`.
#[allow(clippy::too_many_arguments)]
pub fn follow_raceline(
    raceline: &Raceline,
    start: VehicleState,
    planning: &PlanningConfig,
    tracker: &TrackerConfig,
    vehicle: &VehicleParams,
    physics_dt: f64,
    control_period: f64,
    duration: f64,
) -> Result<Vec<TrackingSample>, crate::Error> {
    planning.validate()?;
    let mut tracker = Tracker::new(tracker)?;
    let substeps = (control_period / physics_dt).round().max(1.0) as usize;
    let controls = (duration / control_period).round() as usize;
    let mut state = start;
    let mut samples = Vec::with_capacity(controls * substeps);
    for k in 0..controls {
        let h = extract_horizon(raceline, &state, planning);
        let action = tracker.track(&state, &h.points, &h.speeds, vehicle)?;
        for j in 0..substeps {
            state = crate::vehicle_sim::step_dynamics(&state, &action, vehicle, physics_dt);
            samples.push(TrackingSample {
                t: (k * substeps + j + 1) as f64 * physics_dt,
                state,
                cross_track: raceline.project(state.position()).1,
            });
        }
    }
    Ok(samples)
}
