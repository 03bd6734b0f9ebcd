//! Training configuration and closed-loop rollout workers shared by the BC
//! and PPO trainers.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{LearnError, PolicyParams};
use crate::controllers::TrackerConfig;
use crate::planner::{plan_step, PlanningAgent, PlanningConfig};
use crate::vehicle_sim::{Env, Sensing};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub clip_eps: f64,
    pub max_grad_norm: f64,
    pub update_epochs: usize,
    pub minibatch_size: usize,
    pub total_timesteps: u64,
    pub seed: u64,
    /// Environments stepped in lockstep.
    pub num_envs: usize,
    /// Control steps per environment between updates.
    pub rollout_steps: usize,
    pub vf_coef: f64,
    pub ent_coef: f64,
    /// Episodes are cut after this many control steps.
    pub max_episode_steps: usize,
    /// Scale rewards by a running estimate of the discounted-return spread.
    pub normalize_rewards: bool,
    /// `log_std` of a freshly initialised policy.
    pub initial_log_std: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 3e-4,
            gamma: 0.99,
            gae_lambda: 0.95,
            clip_eps: 0.2,
            max_grad_norm: 0.5,
            update_epochs: 4,
            minibatch_size: 512,
            total_timesteps: 50_000,
            seed: 0,
            num_envs: 4,
            rollout_steps: 512,
            vf_coef: 0.5,
            ent_coef: 0.0,
            max_episode_steps: 400,
            normalize_rewards: true,
            initial_log_std: 0.0,
        }
    }
}

impl TrainConfig {
    pub fn batch_size(&self) -> usize {
        self.num_envs * self.rollout_steps
    }

    pub fn validate(&self) -> Result<(), LearnError> {
        let positive = [
            ("learning_rate", self.learning_rate),
            ("gamma", self.gamma),
            ("gae_lambda", self.gae_lambda),
            ("max_grad_norm", self.max_grad_norm),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(LearnError::InvalidConfig(format!("{name} must be positive, got {v}")));
            }
        }
        if self.gamma > 1.0 || self.gae_lambda > 1.0 {
            return Err(LearnError::InvalidConfig("gamma and gae_lambda must not exceed 1".into()));
        }
        if !(self.clip_eps > 0.0 && self.clip_eps < 1.0) {
            return Err(LearnError::InvalidConfig(format!(
                "clip_eps must lie in (0, 1), got {}",
                self.clip_eps
            )));
        }
        let counts = [
            ("update_epochs", self.update_epochs),
            ("minibatch_size", self.minibatch_size),
            ("num_envs", self.num_envs),
            ("rollout_steps", self.rollout_steps),
            ("max_episode_steps", self.max_episode_steps),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(LearnError::InvalidConfig(format!("{name} must be positive")));
            }
        }
        if self.total_timesteps == 0 {
            return Err(LearnError::InvalidConfig("total_timesteps must be positive".into()));
        }
        if self.minibatch_size > self.batch_size() {
            return Err(LearnError::InvalidConfig(format!(
                "minibatch_size {} exceeds the rollout batch of {}",
                self.minibatch_size,
                self.batch_size()
            )));
        }
        if self.vf_coef < 0.0 || self.ent_coef < 0.0 || !self.initial_log_std.is_finite() {
            return Err(LearnError::InvalidConfig(
                "vf_coef and ent_coef must be non-negative, initial_log_std finite".into(),
            ));
        }
        Ok(())
    }

    /// Control steps per environment for the rollout starting at global
    /// step `done`: the last rollout is shortened so training stops within
    /// `num_envs` steps of `total_timesteps`.
    pub fn rollout_len(&self, done: u64) -> usize {
        let left = self.total_timesteps.saturating_sub(done);
        (left.div_ceil(self.num_envs as u64) as usize).min(self.rollout_steps)
    }
}

/// Everything a trainer needs to build environments and agents.
#[derive(Debug, Clone)]
pub struct RolloutSetup {
    pub env: Env,
    pub planning: PlanningConfig,
    pub tracker: TrackerConfig,
}

impl RolloutSetup {
    pub fn observation_dim(&self) -> usize {
        self.planning
            .observation_dim(self.env.config().lidar.beam_count)
    }
}

/// One transition collected with a stochastic policy.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub observation: Vec<f64>,
    pub pre_squash: Vec<f64>,
    pub log_prob: f64,
    pub offsets: Vec<f64>,
    pub reward: f64,
    /// The episode ended with this step (collision, lap or time limit).
    pub done: bool,
    /// Return of the finished episode, when `done`.
    pub episode_return: Option<f64>,
    pub lap_completed: bool,
}

/// One environment with its own agent and random stream.
#[derive(Debug, Clone)]
pub(crate) struct Worker {
    env: Env,
    agent: PlanningAgent,
    rng: ChaCha8Rng,
    current: Sensing,
    episode_return: f64,
    episode_steps: usize,
    max_episode_steps: usize,
}

impl Worker {
    pub(crate) fn new(setup: &RolloutSetup, max_episode_steps: usize, seed: u64) -> Result<Self, crate::Error> {
        let mut env = setup.env.clone();
        let agent = PlanningAgent::new(
            env.shared_raceline(),
            setup.planning,
            None,
            &setup.tracker,
            env.config().vehicle.clone(),
            env.config().lidar,
            seed,
        )?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let current = env.reset(&mut rng)?;
        Ok(Self {
            env,
            agent,
            rng,
            current,
            episode_return: 0.0,
            episode_steps: 0,
            max_episode_steps,
        })
    }

    pub(crate) fn observation(&self) -> Result<Vec<f64>, crate::Error> {
        Ok(self.agent.observe(&self.current.state, &self.current.scan)?.1)
    }

    /// Samples offsets from `policy`, tracks them for one control period and
    /// resets the environment when the episode ends.
    pub(crate) fn step(&mut self, policy: &PolicyParams) -> Result<Transition, crate::Error> {
        let (horizon, observation) = self.agent.observe(&self.current.state, &self.current.scan)?;
        let plan = plan_step(policy, &observation, false, self.agent.planning.o_max, &mut self.rng)?;
        let decision = self
            .agent
            .act_with_offsets(&self.current.state, &horizon, plan.offsets.clone())?;
        let out = self.env.step(decision.action, &decision.offsets)?;
        self.episode_return += out.reward;
        self.episode_steps += 1;
        let done = out.done() || self.episode_steps >= self.max_episode_steps;
        let mut episode_return = None;
        if done {
            episode_return = Some(self.episode_return);
            self.episode_return = 0.0;
            self.episode_steps = 0;
            self.agent.reset_tracker();
            self.current = self.env.reset(&mut self.rng)?;
        } else {
            self.current = out.sensing();
        }
        Ok(Transition {
            observation,
            pre_squash: plan.pre_squash,
            log_prob: plan.log_prob,
            offsets: plan.offsets,
            reward: out.reward,
            done,
            episode_return,
            lap_completed: out.lap_completed,
        })
    }
}

pub(crate) fn make_workers(
    setup: &RolloutSetup,
    cfg: &TrainConfig,
) -> Result<Vec<Worker>, crate::Error> {
    (0..cfg.num_envs)
        .map(|i| {
            let seed = cfg.seed.wrapping_mul(1_000_003).wrapping_add(i as u64 + 1);
            Worker::new(setup, cfg.max_episode_steps, seed)
        })
        .collect()
}

/// Fresh policy sized for `setup`, with `log_std` set from `cfg`.
pub fn init_policy(setup: &RolloutSetup, cfg: &TrainConfig, rng: &mut ChaCha8Rng) -> PolicyParams {
    let mut p = PolicyParams::new(setup.observation_dim(), setup.planning.horizon, rng);
    p.log_std.fill(cfg.initial_log_std);
    p
}

/// Episodic return recorded at the global step where the episode ended.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub step: u64,
    pub episodic_return: f64,
}
