//! Behavioral cloning towards the raceline: the expert tracks the raw
//! waypoints, so its offsets are identically zero.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::rollout::{init_policy, make_workers, CurvePoint, RolloutSetup, TrainConfig};
use super::{clip_grad_norm, Adam, LearnError, PolicyParams};

/// Mean absolute offset over batch and horizon, evaluated at the squashed
/// actor mean, with its gradient with respect to the actor mean.
pub fn bc_loss(
    policy: &PolicyParams,
    observations: &DMatrix<f64>,
    o_max: f64,
) -> Result<(f64, DMatrix<f64>, super::MlpCache), LearnError> {
    if observations.ncols() == 0 {
        return Err(LearnError::EmptyBatch);
    }
    let (mean, cache) = policy.actor.forward_cached(observations)?;
    let scale = 1.0 / mean.len() as f64;
    let mut loss = 0.0;
    let grad = mean.map(|u| {
        let t = u.tanh();
        loss += (o_max * t).abs();
        if u == 0.0 {
            0.0
        } else {
            u.signum() * o_max * (1.0 - t * t) * scale
        }
    });
    Ok((loss * scale, grad, cache))
}

/// One clipped Adam step on [`bc_loss`]. Returns the loss before the step.
pub fn bc_update(
    policy: &mut PolicyParams,
    observations: &DMatrix<f64>,
    optimizer: &mut Adam,
    max_grad_norm: f64,
    o_max: f64,
) -> Result<f64, LearnError> {
    let (loss, grad_mean, cache) = bc_loss(policy, observations, o_max)?;
    let (actor_grad, _) = policy.actor.backward(&cache, &grad_mean)?;
    let mut grads = policy.zeros_like();
    grads.actor = actor_grad;
    clip_grad_norm(&mut grads, max_grad_norm);
    if !loss.is_finite() || !grads.is_finite() {
        return Err(LearnError::NonFinite {
            what: "behavioral cloning loss".into(),
            snapshot: None,
        });
    }
    optimizer.step(policy, &grads);
    Ok(loss)
}

#[derive(Debug, Clone)]
pub struct BcOutput {
    pub policy: PolicyParams,
    /// Mean loss of each update, keyed by the global step it followed.
    pub losses: Vec<(u64, f64)>,
    pub returns: Vec<CurvePoint>,
}

/// Rolls out the stochastic policy with the configured tracker, then fits
/// the actor mean to zero offsets on the visited observations; repeats until
/// `total_timesteps`. `on_update` sees the step count and policy after every
/// update.
pub fn bc_train(
    setup: &RolloutSetup,
    cfg: &TrainConfig,
    initial: Option<PolicyParams>,
    on_update: &mut dyn FnMut(u64, &PolicyParams) -> Result<(), crate::Error>,
) -> Result<BcOutput, crate::Error> {
    cfg.validate()?;
    setup.planning.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut policy = match initial {
        Some(p) => {
            check_dims(&p, setup)?;
            p
        }
        None => init_policy(setup, cfg, &mut rng),
    };
    let mut optimizer = Adam::new(&policy, cfg.learning_rate);
    let mut workers = make_workers(setup, cfg)?;
    let o_max = setup.planning.o_max;
    let dim = setup.observation_dim();
    let mut out = BcOutput {
        policy: policy.clone(),
        losses: Vec::new(),
        returns: Vec::new(),
    };
    let mut step = 0u64;
    while step < cfg.total_timesteps {
        let mut data = Vec::with_capacity(cfg.batch_size() * dim);
        for _ in 0..cfg.rollout_len(step) {
            for w in workers.iter_mut() {
                let tr = w.step(&policy)?;
                step += 1;
                data.extend_from_slice(&tr.observation);
                if let Some(r) = tr.episode_return {
                    out.returns.push(CurvePoint { step, episodic_return: r });
                }
            }
        }
        let obs = DMatrix::from_column_slice(dim, data.len() / dim, &data);
        let mut order: Vec<usize> = (0..obs.ncols()).collect();
        let mut loss_sum = 0.0;
        let mut count = 0;
        for _ in 0..cfg.update_epochs {
            order.shuffle(&mut rng);
            for chunk in order.chunks(cfg.minibatch_size) {
                let mb = obs.select_columns(chunk);
                loss_sum += bc_update(&mut policy, &mb, &mut optimizer, cfg.max_grad_norm, o_max)?;
                count += 1;
            }
        }
        out.losses.push((step, loss_sum / count as f64));
        on_update(step, &policy)?;
    }
    out.policy = policy;
    Ok(out)
}

pub(crate) fn check_dims(p: &PolicyParams, setup: &RolloutSetup) -> Result<(), LearnError> {
    let (input, action) = (setup.observation_dim(), setup.planning.horizon);
    if p.input_dim() != input || p.action_dim() != action {
        return Err(LearnError::Dimension(format!(
            "policy has input_dim {} and action_dim {}, environment expects {} and {}",
            p.input_dim(),
            p.action_dim(),
            input,
            action
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_policy(seed: u64) -> PolicyParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        PolicyParams::with_hidden(6, 3, &[8, 8], &mut rng)
    }

    fn batch(seed: u64, n: usize) -> DMatrix<f64> {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(6, n, |_, _| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn zero_actor_is_the_optimum() {
        let mut p = small_policy(0);
        for s in p.actor.slices_mut() {
            s.fill(0.0);
        }
        let before = p.clone();
        let mut adam = Adam::new(&p, 3e-4);
        let loss = bc_update(&mut p, &batch(1, 5), &mut adam, 0.5, 1.0).unwrap();
        assert_eq!(loss, 0.0);
        assert_eq!(p, before);
    }

    #[test]
    fn one_step_descends() {
        let mut p = small_policy(2);
        for l in &mut p.actor.layers {
            l.weight *= 20.0;
        }
        let x = batch(3, 1);
        let mut adam = Adam::new(&p, 3e-4);
        let before = bc_update(&mut p, &x, &mut adam, 0.5, 1.0).unwrap();
        let (after, _, _) = bc_loss(&p, &x, 1.0).unwrap();
        assert!(after < before, "{after} !< {before}");
    }

    #[test]
    fn loss_gradient_matches_finite_difference() {
        let mut p = small_policy(4);
        for l in &mut p.actor.layers {
            l.weight *= 10.0;
        }
        let x = batch(5, 4);
        let (_, g, cache) = bc_loss(&p, &x, 0.8).unwrap();
        let (grad, _) = p.actor.backward(&cache, &g).unwrap();
        let h = 1e-6;
        let mut q = p.clone();
        let grads = grad.slices();
        for (k, gk) in grads.iter().enumerate() {
            for i in 0..gk.len() {
                let orig = q.actor.slices()[k][i];
                q.actor.slices_mut()[k][i] = orig + h;
                let up = bc_loss(&q, &x, 0.8).unwrap().0;
                q.actor.slices_mut()[k][i] = orig - h;
                let down = bc_loss(&q, &x, 0.8).unwrap().0;
                q.actor.slices_mut()[k][i] = orig;
                let fd = (up - down) / (2.0 * h);
                assert!((fd - gk[i]).abs() <= 1e-6 + 1e-4 * fd.abs(), "{fd} vs {}", gk[i]);
            }
        }
    }

    #[test]
    fn empty_batch_is_an_error() {
        let mut p = small_policy(6);
        let mut adam = Adam::new(&p, 3e-4);
        assert!(matches!(
            bc_update(&mut p, &DMatrix::zeros(6, 0), &mut adam, 0.5, 1.0),
            Err(LearnError::EmptyBatch)
        ));
    }
}
