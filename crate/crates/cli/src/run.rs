//! Mode dispatch and run-directory artifacts.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use nudge_core::learn::{
    bc_train, load_checkpoint_for, ppo_train, save_checkpoint, CurvePoint, PolicyParams,
    RolloutSetup,
};
use nudge_core::planner::PlanningAgent;
use nudge_core::track::{load_centerline, load_waypoints, optimize_min_curvature, save_waypoints, Raceline};
use nudge_core::vehicle_sim::{load_map, place_obstacles, run_episode, EpisodeLog, EpisodeStart, Env};

use crate::config::{ExperimentConfig, Mode};

/// Statistics over deterministic evaluation episodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub seed: u64,
    pub episodes: usize,
    pub return_mean: f64,
    pub return_std: f64,
    pub completion_rate: f64,
    pub collision_rate: f64,
    pub mean_abs_offset: f64,
    pub max_abs_offset: f64,
    pub max_cross_track: f64,
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub output_dir: PathBuf,
    pub eval: Option<EvalSummary>,
    pub policy: Option<PolicyParams>,
    pub returns: Vec<CurvePoint>,
}

/// Map with the configured obstacles, raceline and simulator.
pub fn build_env(cfg: &ExperimentConfig) -> Result<Env> {
    let map = cfg.map.as_deref().context("map: not set")?;
    let wps = cfg.waypoints.as_deref().context("waypoints: not set")?;
    let grid = load_map(map)?;
    let raceline = load_waypoints(wps)?;
    let grid = place_obstacles(&grid, &raceline, &cfg.obstacles).context("obstacles")?;
    Ok(Env::new(Arc::new(grid), Arc::new(raceline), cfg.sim.clone())?)
}

fn setup(cfg: &ExperimentConfig) -> Result<RolloutSetup> {
    Ok(RolloutSetup {
        env: build_env(cfg)?,
        planning: cfg.planning,
        tracker: cfg.controller.clone(),
    })
}

fn load_policy(cfg: &ExperimentConfig, setup: &RolloutSetup) -> Result<Option<PolicyParams>> {
    cfg.checkpoint
        .as_deref()
        .map(|p| load_checkpoint_for(p, setup.observation_dim(), setup.planning.horizon))
        .transpose()
        .context("checkpoint")
}

/// Runs `episodes` deterministic episodes; episode `k` starts from a random
/// valid pose drawn with seed `seed + k`. `policy = None` drives the
/// raceline itself.
pub fn evaluate(
    env: &Env,
    policy: Option<&PolicyParams>,
    cfg: &ExperimentConfig,
    seed: u64,
) -> Result<(Vec<EpisodeLog>, EvalSummary)> {
    let mut env = env.clone();
    let mut agent = PlanningAgent::new(
        env.shared_raceline(),
        cfg.planning,
        policy.map(|p| Arc::new(p.clone())),
        &cfg.controller,
        env.config().vehicle.clone(),
        env.config().lidar,
        seed,
    )?;
    let mut logs = Vec::with_capacity(cfg.eval.episodes);
    for k in 0..cfg.eval.episodes {
        logs.push(run_episode(
            &mut env,
            &mut agent,
            cfg.eval.max_steps,
            EpisodeStart::Random(seed.wrapping_add(k as u64)),
        )?);
    }
    let summary = summarize(&logs, env.raceline(), seed);
    Ok((logs, summary))
}

pub fn summarize(logs: &[EpisodeLog], raceline: &Raceline, seed: u64) -> EvalSummary {
    let n = logs.len().max(1) as f64;
    let returns: Vec<f64> = logs.iter().map(|l| l.episodic_return).collect();
    let mean = returns.iter().sum::<f64>() / n;
    let var = returns.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / n;
    let max_cross_track = logs
        .iter()
        .flat_map(|l| l.rows.iter())
        .map(|r| raceline.project(nudge_core::geometry::Point2::new(r.x, r.y)).1)
        .fold(0.0, f64::max);
    EvalSummary {
        seed,
        episodes: logs.len(),
        return_mean: mean,
        return_std: var.sqrt(),
        completion_rate: logs.iter().filter(|l| l.lap_completed).count() as f64 / n,
        collision_rate: logs.iter().filter(|l| l.collided).count() as f64 / n,
        mean_abs_offset: logs.iter().map(|l| l.mean_abs_offset).sum::<f64>() / n,
        max_abs_offset: logs.iter().map(|l| l.max_abs_offset).fold(0.0, f64::max),
        max_cross_track,
    }
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

pub fn write_returns(path: &Path, returns: &[CurvePoint]) -> Result<()> {
    let mut out = String::from("step;episodic_return\n");
    for c in returns {
        out.push_str(&format!("{};{}\n", c.step, c.episodic_return));
    }
    write(path, out)
}

pub fn read_returns(path: &Path) -> Result<Vec<CurvePoint>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut lines = text.lines();
    if lines.next() != Some("step;episodic_return") {
        bail!("{}: expected header `step;episodic_return`", path.display());
    }
    lines
        .enumerate()
        .map(|(i, l)| {
            let (s, r) = l
                .split_once(';')
                .with_context(|| format!("{}: line {} has no `;`", path.display(), i + 2))?;
            Ok(CurvePoint {
                step: s.parse().with_context(|| format!("{}: line {}", path.display(), i + 2))?,
                episodic_return: r.parse().with_context(|| format!("{}: line {}", path.display(), i + 2))?,
            })
        })
        .collect()
}

fn write_episodes(dir: &Path, logs: &[EpisodeLog], summary: &EvalSummary) -> Result<()> {
    let episodes = dir.join("episodes");
    fs::create_dir_all(&episodes)?;
    for (k, log) in logs.iter().enumerate() {
        let path = episodes.join(format!("episode_{k:03}.csv"));
        let file = fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?;
        log.write_csv(std::io::BufWriter::new(file))?;
    }
    write(&dir.join("summary.yaml"), serde_yaml::to_string(summary)?)
}

/// Saves a checkpoint the first time the step count passes each multiple of
/// `interval`.
struct Checkpointer {
    dir: PathBuf,
    interval: u64,
    next: u64,
}

impl Checkpointer {
    fn new(dir: &Path, interval: u64) -> Result<Self> {
        let dir = dir.join("checkpoints");
        if dir.exists() {
            fs::remove_dir_all(&dir).with_context(|| format!("clearing {}", dir.display()))?;
        }
        fs::create_dir_all(&dir)?;
        Ok(Self { dir, interval, next: interval })
    }

    fn observe(&mut self, step: u64, policy: &PolicyParams) -> Result<(), nudge_core::Error> {
        if self.interval == 0 || step < self.next {
            return Ok(());
        }
        while self.next <= step {
            self.next += self.interval;
        }
        save_checkpoint(policy, &self.dir.join(format!("step_{step:09}.ckpt")))?;
        Ok(())
    }
}

/// Executes one experiment and writes its artifacts under `output_dir`.
pub fn run(cfg: &ExperimentConfig) -> Result<RunReport> {
    let mut cfg = cfg.clone();
    cfg.train.seed = cfg.seed;
    cfg.validate()?;
    let dir = cfg.output_dir.clone();
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    write(&dir.join("config.yaml"), cfg.to_yaml())?;
    match cfg.mode {
        Mode::Raceline => run_raceline(&cfg, &dir),
        Mode::Eval => {
            let setup = setup(&cfg)?;
            let policy = load_policy(&cfg, &setup)?;
            let (logs, summary) = evaluate(&setup.env, policy.as_ref(), &cfg, cfg.seed)?;
            write_episodes(&dir, &logs, &summary)?;
            Ok(RunReport { output_dir: dir, eval: Some(summary), policy, returns: Vec::new() })
        }
        Mode::BcTrain | Mode::PpoTrain => {
            let setup = setup(&cfg)?;
            let start = load_policy(&cfg, &setup)?;
            let mut ckpt = Checkpointer::new(&dir, cfg.checkpoint_interval)?;
            let mut hook = |s: u64, p: &PolicyParams| ckpt.observe(s, p);
            let (policy, returns) = if cfg.mode == Mode::BcTrain {
                let out = bc_train(&setup, &cfg.train, start, &mut hook)?;
                let mut text = String::from("step;loss\n");
                for (s, l) in &out.losses {
                    text.push_str(&format!("{s};{l}\n"));
                }
                write(&dir.join("losses.csv"), text)?;
                (out.policy, out.returns)
            } else {
                let snapshot = dir.join("nonfinite_snapshot.ckpt");
                let out = ppo_train(&setup, &cfg.train, start.as_ref(), Some(&snapshot), &mut hook)?;
                let mut text = String::from(
                    "step;policy_loss;value_loss;entropy;approx_kl;clip_fraction;grad_norm\n",
                );
                for (s, d) in &out.diagnostics {
                    text.push_str(&format!(
                        "{s};{};{};{};{};{};{}\n",
                        d.policy_loss, d.value_loss, d.entropy, d.approx_kl, d.clip_fraction, d.grad_norm
                    ));
                }
                write(&dir.join("diagnostics.csv"), text)?;
                (out.policy, out.returns)
            };
            write_returns(&dir.join("returns.csv"), &returns)?;
            save_checkpoint(&policy, &dir.join("policy.ckpt"))?;
            let (logs, summary) = evaluate(&setup.env, Some(&policy), &cfg, cfg.seed)?;
            write_episodes(&dir, &logs, &summary)?;
            Ok(RunReport { output_dir: dir, eval: Some(summary), policy: Some(policy), returns })
        }
    }
}

fn run_raceline(cfg: &ExperimentConfig, dir: &Path) -> Result<RunReport> {
    let center = load_centerline(cfg.centerline.as_deref().context("centerline: not set")?)?;
    let sol = optimize_min_curvature(&center, &cfg.raceline)?;
    save_waypoints(&dir.join("waypoints.csv"), &sol.raceline)?;
    let summary = format!(
        "seed: {}\ninitial_objective: {}\nobjective: {}\niterations: {}\n",
        cfg.seed, sol.initial_objective, sol.objective, sol.iterations
    );
    write(&dir.join("summary.yaml"), summary)?;
    Ok(RunReport { output_dir: dir.to_path_buf(), eval: None, policy: None, returns: Vec::new() })
}

/// Raceline mode on explicit paths, for the `raceline` subcommand.
pub fn raceline_file(centerline: &Path, output: &Path, cfg: &nudge_core::track::MinCurvatureConfig) -> Result<f64> {
    let center = load_centerline(centerline)?;
    let sol = optimize_min_curvature(&center, cfg)?;
    save_waypoints(output, &sol.raceline)?;
    Ok(sol.objective)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn returns_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.csv");
        let curve = vec![
            CurvePoint { step: 3, episodic_return: 1.0 / 3.0 },
            CurvePoint { step: 10, episodic_return: -2.5e7 },
        ];
        write_returns(&path, &curve).unwrap();
        assert_eq!(read_returns(&path).unwrap(), curve);
    }

    #[test]
    fn checkpoints_at_interval_crossings() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = Checkpointer::new(dir.path(), 100).unwrap();
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
        let p = PolicyParams::with_hidden(3, 2, &[2], &mut rng);
        for s in [64, 128, 192, 256, 448] {
            c.observe(s, &p).unwrap();
        }
        let mut names: Vec<_> = fs::read_dir(dir.path().join("checkpoints"))
            .unwrap()
            .map(|e| e.unwrap().file_name().into_string().unwrap())
            .collect();
        names.sort();
        assert_eq!(names, ["step_000000128.ckpt", "step_000000256.ckpt", "step_000000448.ckpt"]);
    }
}
