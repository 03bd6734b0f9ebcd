//! Clipped-surrogate PPO with GAE, bootstrapped from a cloned actor.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::bc::check_dims;
use super::rollout::{init_policy, make_workers, CurvePoint, RolloutSetup, TrainConfig};
use super::{clip_grad_norm, save_checkpoint, Adam, LearnError, PolicyParams};

/// Transitions of `num_envs` environments, stored time-major: entry
/// `t * num_envs + e` is step `t` of environment `e`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RolloutBuffer {
    pub num_envs: usize,
    pub observations: Vec<Vec<f64>>,
    /// Pre-squash actions.
    pub actions: Vec<Vec<f64>>,
    pub log_probs: Vec<f64>,
    pub rewards: Vec<f64>,
    pub values: Vec<f64>,
    pub dones: Vec<bool>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

impl RolloutBuffer {
    pub fn new(num_envs: usize) -> Self {
        Self {
            num_envs,
            ..Default::default()
        }
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn push(&mut self, observation: Vec<f64>, action: Vec<f64>, log_prob: f64, reward: f64, value: f64, done: bool) {
        self.observations.push(observation);
        self.actions.push(action);
        self.log_probs.push(log_prob);
        self.rewards.push(reward);
        self.values.push(value);
        self.dones.push(done);
    }

    /// Fills `advantages` and `returns`, one GAE pass per environment.
    /// `last_values[e]` is the critic's value of the observation that
    /// follows the buffer in environment `e`.
    pub fn finish(&mut self, last_values: &[f64], gamma: f64, lambda: f64) -> Result<(), LearnError> {
        let n = self.num_envs;
        if self.is_empty() {
            return Err(LearnError::EmptyBatch);
        }
        if n == 0 || self.len() % n != 0 || last_values.len() != n {
            return Err(LearnError::Dimension(format!(
                "buffer of {} steps does not split into {} environments with {} bootstrap values",
                self.len(),
                n,
                last_values.len()
            )));
        }
        self.advantages = vec![0.0; self.len()];
        self.returns = vec![0.0; self.len()];
        for e in 0..n {
            let idx: Vec<usize> = (e..self.len()).step_by(n).collect();
            let pick = |v: &[f64]| idx.iter().map(|&i| v[i]).collect::<Vec<_>>();
            let dones: Vec<bool> = idx.iter().map(|&i| self.dones[i]).collect();
            let (adv, ret) = compute_gae(
                &pick(&self.rewards),
                &pick(&self.values),
                &dones,
                last_values[e],
                gamma,
                lambda,
            );
            for (k, &i) in idx.iter().enumerate() {
                self.advantages[i] = adv[k];
                self.returns[i] = ret[k];
            }
        }
        Ok(())
    }
}

/// GAE(λ) over one environment's transitions. `dones[t]` marks that the
/// episode ended with step `t`, so nothing is bootstrapped across it.
/// Returns `(advantages, advantages + values)`.
pub fn compute_gae(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    last_value: f64,
    gamma: f64,
    lambda: f64,
) -> (Vec<f64>, Vec<f64>) {
    let n = rewards.len();
    let mut adv = vec![0.0; n];
    let mut next_adv = 0.0;
    let mut next_value = last_value;
    for t in (0..n).rev() {
        let live = if dones[t] { 0.0 } else { 1.0 };
        let delta = rewards[t] + gamma * next_value * live - values[t];
        next_adv = delta + gamma * lambda * live * next_adv;
        adv[t] = next_adv;
        next_value = values[t];
    }
    let ret = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    (adv, ret)
}

/// `min(r·A, clip(r, 1-ε, 1+ε)·A)`
pub fn clipped_surrogate(ratio: f64, advantage: f64, clip_eps: f64) -> f64 {
    (ratio * advantage).min(ratio.clamp(1.0 - clip_eps, 1.0 + clip_eps) * advantage)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PpoDiagnostics {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub approx_kl: f64,
    pub clip_fraction: f64,
    pub grad_norm: f64,
}

/// Loss terms and gradients of one minibatch. The total loss is
/// `policy_loss + vf_coef · value_loss / 2 − ent_coef · entropy`, where
/// `value_loss` is the mean squared error to the returns. Advantages are
/// normalised within the minibatch.
pub fn ppo_loss_and_grads(
    policy: &PolicyParams,
    buffer: &RolloutBuffer,
    idx: &[usize],
    cfg: &TrainConfig,
) -> Result<(PolicyParams, PpoDiagnostics), LearnError> {
    let b = idx.len();
    let in_dim = policy.input_dim();
    let h = policy.action_dim();
    let mut obs = DMatrix::zeros(in_dim, b);
    for (j, &i) in idx.iter().enumerate() {
        if buffer.observations[i].len() != in_dim || buffer.actions[i].len() != h {
            return Err(LearnError::Dimension(format!(
                "buffer entry {i} has {} inputs and {} actions, policy expects {in_dim} and {h}",
                buffer.observations[i].len(),
                buffer.actions[i].len()
            )));
        }
        obs.column_mut(j).copy_from_slice(&buffer.observations[i]);
    }
    let mut adv: Vec<f64> = idx.iter().map(|&i| buffer.advantages[i]).collect();
    if b > 1 {
        let m = adv.iter().sum::<f64>() / b as f64;
        let sd = (adv.iter().map(|a| (a - m) * (a - m)).sum::<f64>() / (b - 1) as f64).sqrt();
        adv.iter_mut().for_each(|a| *a = (*a - m) / (sd + 1e-8));
    }

    let (mean, actor_cache) = policy.actor.forward_cached(&obs)?;
    let (value, critic_cache) = policy.critic.forward_cached(&obs)?;
    let inv_var: Vec<f64> = policy.log_std.iter().map(|s| (-2.0 * s).exp()).collect();

    let mut grad_mean = DMatrix::zeros(h, b);
    let mut grad_log_std = DVector::zeros(h);
    let mut grad_value = DMatrix::zeros(1, b);
    let mut diag = PpoDiagnostics::default();
    let (_, entropy) = super::gaussian_logprob_and_entropy(
        &vec![0.0; h],
        policy.log_std.as_slice(),
        &vec![0.0; h],
    );
    diag.entropy = entropy;
    let inv_b = 1.0 / b as f64;
    for (j, &i) in idx.iter().enumerate() {
        let action = &buffer.actions[i];
        let mu: Vec<f64> = mean.column(j).iter().copied().collect();
        let (logp, _) = super::gaussian_logprob_and_entropy(&mu, policy.log_std.as_slice(), action);
        let log_ratio = logp - buffer.log_probs[i];
        let ratio = log_ratio.exp();
        let a = adv[j];
        diag.policy_loss -= clipped_surrogate(ratio, a, cfg.clip_eps) * inv_b;
        diag.approx_kl += ((ratio - 1.0) - log_ratio) * inv_b;
        if (ratio - 1.0).abs() > cfg.clip_eps {
            diag.clip_fraction += inv_b;
        }
        // the unclipped branch is the active one
        let live = if a >= 0.0 {
            ratio < 1.0 + cfg.clip_eps
        } else {
            ratio > 1.0 - cfg.clip_eps
        };
        if live {
            let d_logp = -a * ratio * inv_b;
            for k in 0..h {
                let diff = action[k] - mu[k];
                grad_mean[(k, j)] = d_logp * diff * inv_var[k];
                grad_log_std[k] += d_logp * (diff * diff * inv_var[k] - 1.0);
            }
        }
        let err = value[(0, j)] - buffer.returns[i];
        diag.value_loss += err * err * inv_b;
        grad_value[(0, j)] = cfg.vf_coef * err * inv_b;
    }
    grad_log_std.add_scalar_mut(-cfg.ent_coef);

    let (actor, _) = policy.actor.backward(&actor_cache, &grad_mean)?;
    let (critic, _) = policy.critic.backward(&critic_cache, &grad_value)?;
    let grads = PolicyParams {
        actor,
        log_std: grad_log_std,
        critic,
    };
    Ok((grads, diag))
}

/// `update_epochs` passes over the buffer in shuffled minibatches, one
/// clipped Adam step each. Diagnostics are averaged over minibatches. A
/// non-finite loss or gradient aborts before the offending step is applied.
pub fn ppo_update(
    policy: &mut PolicyParams,
    buffer: &RolloutBuffer,
    optimizer: &mut Adam,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<PpoDiagnostics, LearnError> {
    if buffer.is_empty() {
        return Err(LearnError::EmptyBatch);
    }
    if buffer.advantages.len() != buffer.len() {
        return Err(LearnError::Dimension("advantages have not been computed".into()));
    }
    if cfg.minibatch_size > buffer.len() {
        return Err(LearnError::Dimension(format!(
            "minibatch_size {} exceeds buffer length {}",
            cfg.minibatch_size,
            buffer.len()
        )));
    }
    let mut order: Vec<usize> = (0..buffer.len()).collect();
    let mut total = PpoDiagnostics::default();
    let mut count = 0.0;
    for _ in 0..cfg.update_epochs {
        order.shuffle(rng);
        for chunk in order.chunks(cfg.minibatch_size) {
            let (mut grads, diag) = ppo_loss_and_grads(policy, buffer, chunk, cfg)?;
            let loss = diag.policy_loss + 0.5 * cfg.vf_coef * diag.value_loss - cfg.ent_coef * diag.entropy;
            let norm = clip_grad_norm(&mut grads, cfg.max_grad_norm);
            if !loss.is_finite() || !norm.is_finite() {
                return Err(LearnError::NonFinite {
                    what: format!("ppo loss {loss}, gradient norm {norm}"),
                    snapshot: None,
                });
            }
            optimizer.step(policy, &grads);
            total.policy_loss += diag.policy_loss;
            total.value_loss += diag.value_loss;
            total.entropy += diag.entropy;
            total.approx_kl += diag.approx_kl;
            total.clip_fraction += diag.clip_fraction;
            total.grad_norm += norm;
            count += 1.0;
        }
    }
    Ok(PpoDiagnostics {
        policy_loss: total.policy_loss / count,
        value_loss: total.value_loss / count,
        entropy: total.entropy / count,
        approx_kl: total.approx_kl / count,
        clip_fraction: total.clip_fraction / count,
        grad_norm: total.grad_norm / count,
    })
}

/// Divides rewards by the running standard deviation of each
/// environment's discounted return, then clips to ±`clip`.
#[derive(Debug, Clone)]
pub struct RewardScaler {
    gamma: f64,
    clip: f64,
    returns: Vec<f64>,
    count: f64,
    mean: f64,
    m2: f64,
}

impl RewardScaler {
    pub fn new(num_envs: usize, gamma: f64) -> Self {
        Self {
            gamma,
            clip: 10.0,
            returns: vec![0.0; num_envs],
            count: 0.0,
            mean: 0.0,
            m2: 0.0,
        }
    }

    pub fn scale(&mut self, env: usize, reward: f64, done: bool) -> f64 {
        self.returns[env] = self.returns[env] * self.gamma + reward;
        let x = self.returns[env];
        self.count += 1.0;
        let d = x - self.mean;
        self.mean += d / self.count;
        self.m2 += d * (x - self.mean);
        if done {
            self.returns[env] = 0.0;
        }
        let var = if self.count > 1.0 { self.m2 / self.count } else { 0.0 };
        (reward / (var + 1e-8).sqrt()).clamp(-self.clip, self.clip)
    }
}

#[derive(Debug, Clone)]
pub struct PpoOutput {
    pub policy: PolicyParams,
    pub returns: Vec<CurvePoint>,
    /// Diagnostics of each update, keyed by the global step it followed.
    pub diagnostics: Vec<(u64, PpoDiagnostics)>,
}

/// PPO on `setup`. With a `bootstrap` policy the actor and `log_std` carry
/// over and the critic is reinitialised; otherwise everything starts fresh.
/// On a numerical failure the last finite policy is written to `snapshot`
/// when given.
pub fn ppo_train(
    setup: &RolloutSetup,
    cfg: &TrainConfig,
    bootstrap: Option<&PolicyParams>,
    snapshot: Option<&Path>,
    on_update: &mut dyn FnMut(u64, &PolicyParams) -> Result<(), crate::Error>,
) -> Result<PpoOutput, crate::Error> {
    cfg.validate()?;
    setup.planning.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut policy = match bootstrap {
        Some(p) => {
            check_dims(p, setup)?;
            let mut p = p.clone();
            p.reset_critic(&mut rng);
            p
        }
        None => init_policy(setup, cfg, &mut rng),
    };
    let mut optimizer = Adam::new(&policy, cfg.learning_rate);
    let mut workers = make_workers(setup, cfg)?;
    let mut scaler = RewardScaler::new(cfg.num_envs, cfg.gamma);
    let mut out = PpoOutput {
        policy: policy.clone(),
        returns: Vec::new(),
        diagnostics: Vec::new(),
    };
    let mut step = 0u64;
    while step < cfg.total_timesteps {
        let mut buffer = RolloutBuffer::new(cfg.num_envs);
        for _ in 0..cfg.rollout_len(step) {
            for (e, w) in workers.iter_mut().enumerate() {
                let tr = w.step(&policy)?;
                step += 1;
                if let Some(r) = tr.episode_return {
                    out.returns.push(CurvePoint { step, episodic_return: r });
                }
                let reward = if cfg.normalize_rewards {
                    scaler.scale(e, tr.reward, tr.done)
                } else {
                    tr.reward
                };
                buffer.push(tr.observation, tr.pre_squash, tr.log_prob, reward, 0.0, tr.done);
            }
        }
        buffer.values = critic_values(&policy, &buffer.observations)?;
        let next: Vec<Vec<f64>> = workers
            .iter()
            .map(|w| w.observation())
            .collect::<Result<_, _>>()?;
        let last = critic_values(&policy, &next)?;
        buffer.finish(&last, cfg.gamma, cfg.gae_lambda)?;
        let round = TrainConfig {
            minibatch_size: cfg.minibatch_size.min(buffer.len()),
            ..cfg.clone()
        };
        match ppo_update(&mut policy, &buffer, &mut optimizer, &round, &mut rng) {
            Ok(d) => out.diagnostics.push((step, d)),
            Err(LearnError::NonFinite { what, .. }) => {
                let snapshot = match snapshot {
                    Some(path) => {
                        save_checkpoint(&policy, path)?;
                        Some(path.to_path_buf())
                    }
                    None => None,
                };
                return Err(LearnError::NonFinite { what, snapshot }.into());
            }
            Err(e) => return Err(e.into()),
        }
        on_update(step, &policy)?;
    }
    out.policy = policy;
    Ok(out)
}

fn critic_values(policy: &PolicyParams, observations: &[Vec<f64>]) -> Result<Vec<f64>, LearnError> {
    let dim = policy.input_dim();
    let mut m = DMatrix::zeros(dim, observations.len());
    for (j, o) in observations.iter().enumerate() {
        m.column_mut(j).copy_from_slice(o);
    }
    Ok(policy.critic.forward(&m)?.row(0).iter().copied().collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clip_hand_cases() {
        assert!((clipped_surrogate(1.5, 1.0, 0.2) - 1.2).abs() < 1e-12);
        assert!((clipped_surrogate(0.5, -1.0, 0.2) + 0.8).abs() < 1e-12);
        assert_eq!(clipped_surrogate(1.0, -0.7, 0.2), -0.7);
    }

    #[test]
    fn terminal_single_step() {
        let (a, r) = compute_gae(&[2.0], &[0.5], &[true], 9.0, 0.99, 0.95);
        assert_eq!(a, vec![1.5]);
        assert_eq!(r, vec![2.0]);
    }

    #[test]
    fn reward_scaler_clips() {
        let mut s = RewardScaler::new(1, 0.99);
        for _ in 0..100 {
            let r = s.scale(0, 1.0, false);
            assert!(r.abs() <= 10.0);
        }
    }
}
