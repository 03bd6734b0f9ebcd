//! Actor-critic parameters, the Gaussian policy head and checkpoints.

use std::fs;
use std::path::Path;

use nalgebra::DVector;
use rand::Rng;

use super::{LearnError, Mlp};

pub const HIDDEN_LAYERS: usize = 4;
pub const HIDDEN_WIDTH: usize = 256;
const ACTOR_OUTPUT_GAIN: f64 = 0.01;
const CRITIC_OUTPUT_GAIN: f64 = 1.0;
const FORMAT_VERSION: u32 = 1;
const MAGIC: &str = "nudge-policy";

/// Actor mean network, state-independent log standard deviation and critic.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    pub actor: Mlp,
    pub log_std: DVector<f64>,
    pub critic: Mlp,
}

fn layer_sizes(input: usize, hidden: &[usize], output: usize) -> Vec<usize> {
    let mut s = vec![input];
    s.extend_from_slice(hidden);
    s.push(output);
    s
}

impl PolicyParams {
    /// Default architecture: four tanh layers of 256 units for both networks.
    pub fn new<R: Rng + ?Sized>(input_dim: usize, action_dim: usize, rng: &mut R) -> Self {
        Self::with_hidden(input_dim, action_dim, &[HIDDEN_WIDTH; HIDDEN_LAYERS], rng)
    }

    pub fn with_hidden<R: Rng + ?Sized>(
        input_dim: usize,
        action_dim: usize,
        hidden: &[usize],
        rng: &mut R,
    ) -> Self {
        let actor = Mlp::new(&layer_sizes(input_dim, hidden, action_dim), ACTOR_OUTPUT_GAIN, rng);
        let critic = Mlp::new(&layer_sizes(input_dim, hidden, 1), CRITIC_OUTPUT_GAIN, rng);
        Self {
            actor,
            log_std: DVector::zeros(action_dim),
            critic,
        }
    }

    /// Replaces the critic with a freshly initialised one of the same shape.
    pub fn reset_critic<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        self.critic = Mlp::new(&self.critic.sizes(), CRITIC_OUTPUT_GAIN, rng);
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            actor: self.actor.zeros_like(),
            log_std: DVector::zeros(self.log_std.len()),
            critic: self.critic.zeros_like(),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.actor.input_dim()
    }

    pub fn action_dim(&self) -> usize {
        self.actor.output_dim()
    }

    /// All parameters in checkpoint order: actor, log_std, critic.
    pub fn slices(&self) -> Vec<&[f64]> {
        let mut v = self.actor.slices();
        v.push(self.log_std.as_slice());
        v.extend(self.critic.slices());
        v
    }

    pub fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v = self.actor.slices_mut();
        v.push(self.log_std.as_mut_slice());
        v.extend(self.critic.slices_mut());
        v
    }

    pub fn is_finite(&self) -> bool {
        self.slices().iter().all(|s| s.iter().all(|v| v.is_finite()))
    }
}

/// Diagonal Gaussian log-density of `action` and the distribution's entropy.
pub fn gaussian_logprob_and_entropy(mean: &[f64], log_std: &[f64], action: &[f64]) -> (f64, f64) {
    let half_log_2pi = 0.5 * (2.0 * std::f64::consts::PI).ln();
    let mut lp = 0.0;
    let mut ent = 0.0;
    for i in 0..mean.len() {
        let z = (action[i] - mean[i]) * (-log_std[i]).exp();
        lp += -0.5 * z * z - log_std[i] - half_log_2pi;
        ent += log_std[i] + 0.5 + half_log_2pi;
    }
    (lp, ent)
}

/// `o_max · tanh(u)`
pub fn squash(pre: &[f64], o_max: f64) -> Vec<f64> {
    pre.iter().map(|u| o_max * u.tanh()).collect()
}

fn header(p: &PolicyParams) -> String {
    let shapes = |m: &Mlp| {
        m.layers
            .iter()
            .map(|l| format!("{}x{}", l.weight.nrows(), l.weight.ncols()))
            .collect::<Vec<_>>()
            .join(" ")
    };
    format!(
        "{MAGIC}\nformat_version: {FORMAT_VERSION}\ninput_dim: {}\naction_dim: {}\nactor: {}\ncritic: {}\nvalues: {}\n",
        p.input_dim(),
        p.action_dim(),
        shapes(&p.actor),
        shapes(&p.critic),
        p.slices().iter().map(|s| s.len()).sum::<usize>()
    )
}

/// Text header, then every parameter as a little-endian f64 in
/// [`PolicyParams::slices`] order (weights column-major, then bias).
pub fn encode_checkpoint(p: &PolicyParams) -> Vec<u8> {
    let mut out = header(p).into_bytes();
    for s in p.slices() {
        for v in s {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn save_checkpoint(p: &PolicyParams, path: &Path) -> Result<(), LearnError> {
    fs::write(path, encode_checkpoint(p)).map_err(|e| LearnError::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<PolicyParams, LearnError> {
    let bad = |m: String| LearnError::Checkpoint(m);
    let mut lines = Vec::new();
    let mut pos = 0;
    while lines.len() < 7 {
        let end = bytes[pos..]
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| bad("truncated header".into()))?;
        let line = std::str::from_utf8(&bytes[pos..pos + end])
            .map_err(|_| bad("header is not text".into()))?;
        lines.push(line.to_string());
        pos += end + 1;
    }
    if lines[0] != MAGIC {
        return Err(bad(format!("not a policy checkpoint (found `{}`)", lines[0])));
    }
    let field = |i: usize, key: &str| -> Result<String, LearnError> {
        lines[i]
            .strip_prefix(&format!("{key}: "))
            .map(str::to_string)
            .ok_or_else(|| bad(format!("expected `{key}` on header line {}", i + 1)))
    };
    let num = |i: usize, key: &str| -> Result<usize, LearnError> {
        field(i, key)?
            .parse()
            .map_err(|_| bad(format!("`{key}` is not an integer")))
    };
    let version = num(1, "format_version")?;
    if version != FORMAT_VERSION as usize {
        return Err(bad(format!(
            "format_version {version} is not supported (expected {FORMAT_VERSION})"
        )));
    }
    let input_dim = num(2, "input_dim")?;
    let action_dim = num(3, "action_dim")?;
    let parse_shapes = |s: String| -> Result<Vec<(usize, usize)>, LearnError> {
        s.split_whitespace()
            .map(|t| {
                let (r, c) = t.split_once('x').ok_or_else(|| bad(format!("bad shape `{t}`")))?;
                Ok((
                    r.parse().map_err(|_| bad(format!("bad shape `{t}`")))?,
                    c.parse().map_err(|_| bad(format!("bad shape `{t}`")))?,
                ))
            })
            .collect()
    };
    let actor_shapes = parse_shapes(field(4, "actor")?)?;
    let critic_shapes = parse_shapes(field(5, "critic")?)?;
    let values = num(6, "values")?;
    let build = |shapes: &[(usize, usize)], out: usize| -> Result<Mlp, LearnError> {
        if shapes.is_empty()
            || shapes[0].1 != input_dim
            || shapes.last().unwrap().0 != out
            || shapes.windows(2).any(|w| w[0].0 != w[1].1)
        {
            return Err(bad(format!("layer shapes {shapes:?} do not chain from {input_dim} to {out}")));
        }
        let mut sizes = vec![input_dim];
        sizes.extend(shapes.iter().map(|s| s.0));
        Ok(Mlp::zeros(&sizes))
    };
    let mut p = PolicyParams {
        actor: build(&actor_shapes, action_dim)?,
        log_std: DVector::zeros(action_dim),
        critic: build(&critic_shapes, 1)?,
    };
    let expected: usize = p.slices().iter().map(|s| s.len()).sum();
    if expected != values {
        return Err(bad(format!("header declares {values} values, shapes imply {expected}")));
    }
    let body = &bytes[pos..];
    if body.len() != 8 * values {
        return Err(bad(format!(
            "expected {} bytes of parameters, found {}",
            8 * values,
            body.len()
        )));
    }
    let mut chunks = body.chunks_exact(8);
    for s in p.slices_mut() {
        for v in s.iter_mut() {
            *v = f64::from_le_bytes(chunks.next().unwrap().try_into().unwrap());
        }
    }
    Ok(p)
}

pub fn load_checkpoint(path: &Path) -> Result<PolicyParams, LearnError> {
    let bytes = fs::read(path).map_err(|e| LearnError::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    decode_checkpoint(&bytes)
}

/// Loads a checkpoint and checks it fits an environment.
pub fn load_checkpoint_for(
    path: &Path,
    input_dim: usize,
    action_dim: usize,
) -> Result<PolicyParams, LearnError> {
    let p = load_checkpoint(path)?;
    if p.input_dim() != input_dim || p.action_dim() != action_dim {
        return Err(LearnError::Dimension(format!(
            "checkpoint {} has input_dim {} and action_dim {}, environment expects {} and {}",
            path.display(),
            p.input_dim(),
            p.action_dim(),
            input_dim,
            action_dim
        )));
    }
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn closed_form_density_and_entropy() {
        let (lp, ent) = gaussian_logprob_and_entropy(&[0.3], &[0.0], &[0.3]);
        assert!((lp - (-0.5 * (2.0 * std::f64::consts::PI).ln())).abs() < 1e-15);
        assert!((lp + 0.9189385332).abs() < 1e-9);
        assert!((ent - 1.4189385332).abs() < 1e-9);
    }

    #[test]
    fn density_falls_away_from_mean() {
        let mut prev = f64::INFINITY;
        for k in 0..20 {
            let (lp, _) = gaussian_logprob_and_entropy(&[1.0, -1.0], &[-0.5, 0.2], &[1.0 + 0.1 * k as f64, -1.0]);
            assert!(lp < prev);
            prev = lp;
        }
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut p = PolicyParams::with_hidden(7, 3, &[5, 4], &mut rng);
        p.log_std[1] = -0.37;
        let back = decode_checkpoint(&encode_checkpoint(&p)).unwrap();
        assert_eq!(back, p);
    }

    #[test]
    fn truncated_checkpoint_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = PolicyParams::with_hidden(7, 3, &[5], &mut rng);
        let bytes = encode_checkpoint(&p);
        for cut in [10, bytes.len() / 2, bytes.len() - 1] {
            assert!(matches!(decode_checkpoint(&bytes[..cut]), Err(LearnError::Checkpoint(_))));
        }
    }

    #[test]
    fn dimension_guard_names_both_sides() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.ckpt");
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        save_checkpoint(&PolicyParams::with_hidden(129, 10, &[8], &mut rng), &path).unwrap();
        let err = load_checkpoint_for(&path, 125, 8).unwrap_err().to_string();
        assert!(err.contains("129") && err.contains("125") && err.contains("10") && err.contains('8'), "{err}");
        assert!(load_checkpoint_for(&path, 129, 10).is_ok());
    }
}
