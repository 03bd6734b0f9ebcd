use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use nudge_cli::assets::{self, Shape};
use nudge_cli::compare::{compare_runs, format_summaries};
use nudge_cli::config::{ExperimentConfig, Mode};
use nudge_cli::run::{raceline_file, run};
use nudge_core::track::MinCurvatureConfig;

#[derive(Parser)]
#[command(name = "nudge", version, about = "Offset-planning experiments for 2D racing")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment a config file describes.
    Run {
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the config's output directory.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on the config's map and controller.
    Eval {
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        episodes: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Minimum-curvature raceline from a centerline CSV.
    Raceline {
        centerline: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        /// Clearance from both boundaries in metres.
        #[arg(long, default_value_t = 0.0)]
        margin: f64,
        /// Projected-gradient stopping threshold.
        #[arg(long, default_value_t = assets::RACELINE_TOLERANCE)]
        tolerance: f64,
    },
    /// Merge the return curves of several runs.
    Compare {
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        /// Also report the first step where the moving average reaches this.
        #[arg(long)]
        threshold: Option<f64>,
        /// Write the merged curve here instead of printing it.
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Write a bundled track (centerline, map, raceline) into a directory.
    GenTrack {
        #[arg(value_enum)]
        shape: Shape,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load(path: &Path, seed: Option<u64>, output: Option<PathBuf>) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(o) = output {
        cfg.output_dir = o;
    }
    Ok(cfg)
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Run { config, seed, output } => {
            let cfg = load(&config, seed, output)?;
            let report = run(&cfg)?;
            if let Some(s) = report.eval {
                print!("{}", serde_yaml::to_string(&s)?);
            }
            println!("artifacts: {}", report.output_dir.display());
        }
        Command::Eval { config, checkpoint, episodes, seed, output } => {
            let mut cfg = load(&config, seed, output)?;
            cfg.mode = Mode::Eval;
            cfg.checkpoint = Some(checkpoint);
            if let Some(n) = episodes {
                cfg.eval.episodes = n;
            }
            let report = run(&cfg)?;
            print!("{}", serde_yaml::to_string(&report.eval)?);
            println!("artifacts: {}", report.output_dir.display());
        }
        Command::Raceline { centerline, output, margin, tolerance } => {
            let cfg = MinCurvatureConfig {
                margin,
                tolerance,
                max_iterations: assets::RACELINE_MAX_ITERATIONS,
                ..MinCurvatureConfig::default()
            };
            let objective = raceline_file(&centerline, &output, &cfg)?;
            println!("objective: {objective}");
        }
        Command::Compare { runs, threshold, output } => {
            let c = compare_runs(&runs, threshold)?;
            match output {
                Some(path) => std::fs::write(&path, &c.merged_csv)
                    .with_context(|| format!("writing {}", path.display()))?,
                None => print!("{}", c.merged_csv),
            }
            print!("{}", format_summaries(&c.summaries));
        }
        Command::GenTrack { shape, out } => {
            assets::generate(shape, &out)?;
            println!("wrote {}", out.display());
        }
    }
    Ok(())
}
