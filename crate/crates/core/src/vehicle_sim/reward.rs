//! Per-control-step reward.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardConfig {
    /// Reward per physics sub-step survived.
    pub step_reward: f64,
    pub collision_penalty: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            step_reward: 100.0,
            collision_penalty: 1000.0,
        }
    }
}

/// `step_reward·Δn − ‖o‖₂ − penalty·[collided]`, where `Δn` counts the
/// physics sub-steps survived during this control step.
pub fn compute_reward(delta_n: usize, offsets: &[f64], collided: bool, cfg: &RewardConfig) -> f64 {
    let norm = offsets.iter().map(|o| o * o).sum::<f64>().sqrt();
    let mut r = cfg.step_reward * delta_n as f64 - norm;
    if collided {
        r -= cfg.collision_penalty;
    }
    r
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn substitution_cases() {
        let cfg = RewardConfig::default();
        assert_eq!(compute_reward(10, &[0.0; 10], false, &cfg), 1000.0);
        let mut o = [0.0; 10];
        o[0] = 0.3;
        o[1] = 0.4;
        assert!((compute_reward(10, &o, false, &cfg) - 999.5).abs() < 1e-12);
        assert_eq!(compute_reward(10, &[0.0; 10], true, &cfg), 0.0);
    }

    proptest! {
        #[test]
        fn collision_costs_exactly_the_penalty(n in 0usize..11, o in prop::collection::vec(-1.0..1.0f64, 10)) {
            let cfg = RewardConfig::default();
            let free = compute_reward(n, &o, false, &cfg);
            let hit = compute_reward(n, &o, true, &cfg);
            prop_assert!(hit < free);
            prop_assert!((free - hit - 1000.0).abs() < 1e-9);
        }
    }
}
