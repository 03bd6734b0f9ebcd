//! Experiment configuration files.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use nudge_core::controllers::TrackerConfig;
use nudge_core::learn::TrainConfig;
use nudge_core::planner::PlanningConfig;
use nudge_core::track::MinCurvatureConfig;
use nudge_core::vehicle_sim::{ObstacleSpec, SimConfig};

/// Environment variable that relocates relative output directories.
pub const OUTPUT_ROOT_VAR: &str = "NUDGE_OUTPUT_ROOT";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    BcTrain,
    PpoTrain,
    Eval,
    Raceline,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub episodes: usize,
    /// Control steps before an episode is cut.
    pub max_steps: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            episodes: 10,
            max_steps: 600,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub mode: Mode,
    #[serde(default)]
    pub seed: u64,
    /// Occupancy map (`.pgm` with a `.yaml` sidecar).
    #[serde(default)]
    pub map: Option<PathBuf>,
    /// Raceline waypoint CSV.
    #[serde(default)]
    pub waypoints: Option<PathBuf>,
    /// Centerline CSV, for `raceline` mode.
    #[serde(default)]
    pub centerline: Option<PathBuf>,
    #[serde(default)]
    pub controller: TrackerConfig,
    #[serde(default)]
    pub planning: PlanningConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub sim: SimConfig,
    #[serde(default)]
    pub obstacles: Vec<ObstacleSpec>,
    /// Policy to start from: the BC checkpoint for `ppo-train`, an optional
    /// warm start for `bc-train`, the evaluated policy for `eval`. Training
    /// without one starts from a fresh initialisation.
    #[serde(default)]
    pub checkpoint: Option<PathBuf>,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default)]
    pub raceline: MinCurvatureConfig,
    /// Global steps between checkpoints; 0 keeps only the final one.
    #[serde(default = "default_checkpoint_interval")]
    pub checkpoint_interval: u64,
    pub output_dir: PathBuf,
}

fn default_checkpoint_interval() -> u64 {
    50_000
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Parse {
        path: PathBuf,
        #[source]
        source: serde_yaml::Error,
    },
    #[error("{field}: {message}")]
    Invalid { field: &'static str, message: String },
}

fn invalid(field: &'static str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        field,
        message: message.into(),
    }
}

impl ExperimentConfig {
    pub fn from_yaml(text: &str, source: &Path) -> Result<Self, ConfigError> {
        serde_yaml::from_str(text).map_err(|e| ConfigError::Parse {
            path: source.to_path_buf(),
            source: e,
        })
    }

    /// Reads a config and resolves its relative input paths against the
    /// file's directory. A relative `output_dir` goes under
    /// `NUDGE_OUTPUT_ROOT` when that is set and stays relative to the
    /// working directory otherwise.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|e| ConfigError::Read {
            path: path.to_path_buf(),
            source: e,
        })?;
        let mut cfg = Self::from_yaml(&text, path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base, std::env::var_os(OUTPUT_ROOT_VAR).map(PathBuf::from));
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path, output_root: Option<PathBuf>) {
        let join = |p: &mut Option<PathBuf>| {
            if let Some(q) = p {
                if q.is_relative() {
                    *q = base.join(&q);
                }
            }
        };
        join(&mut self.map);
        join(&mut self.waypoints);
        join(&mut self.centerline);
        join(&mut self.checkpoint);
        if let (true, Some(root)) = (self.output_dir.is_relative(), output_root) {
            self.output_dir = root.join(&self.output_dir);
        }
    }

    /// Checks the fields the mode needs, naming the offending field.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let need = |field: &'static str, p: &Option<PathBuf>| -> Result<(), ConfigError> {
            match p {
                None => Err(invalid(field, format!("required in {:?} mode", self.mode))),
                Some(p) if !p.is_file() => Err(invalid(field, format!("file not found: {}", p.display()))),
                Some(_) => Ok(()),
            }
        };
        match self.mode {
            Mode::Raceline => need("centerline", &self.centerline)?,
            Mode::BcTrain | Mode::PpoTrain | Mode::Eval => {
                need("map", &self.map)?;
                need("waypoints", &self.waypoints)?;
                if self.mode == Mode::Eval || self.checkpoint.is_some() {
                    need("checkpoint", &self.checkpoint)?;
                }
                self.sim.validate().map_err(|e| invalid("sim", e.to_string()))?;
                self.planning
                    .validate()
                    .map_err(|e| invalid("planning", e.to_string()))?;
                if self.mode != Mode::Eval {
                    self.train.validate().map_err(|e| invalid("train", e.to_string()))?;
                }
                if self.eval.episodes == 0 || self.eval.max_steps == 0 {
                    return Err(invalid("eval", "episodes and max_steps must be positive"));
                }
            }
        }
        if self.output_dir.as_os_str().is_empty() {
            return Err(invalid("output_dir", "must not be empty"));
        }
        Ok(())
    }

    pub fn to_yaml(&self) -> String {
        serde_yaml::to_string(self).expect("config serialises")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "mode: bc-train\nmap: maps/a.pgm\nwaypoints: w.csv\noutput_dir: out\n";

    #[test]
    fn relative_paths_follow_the_config_file() {
        let mut cfg = ExperimentConfig::from_yaml(MINIMAL, Path::new("c.yaml")).unwrap();
        cfg.resolve_paths(Path::new("/cfg"), None);
        assert_eq!(cfg.map.unwrap(), Path::new("/cfg/maps/a.pgm"));
        assert_eq!(cfg.output_dir, Path::new("out"));
        let mut cfg = ExperimentConfig::from_yaml(MINIMAL, Path::new("c.yaml")).unwrap();
        cfg.resolve_paths(Path::new("/cfg"), Some(PathBuf::from("/runs")));
        assert_eq!(cfg.output_dir, Path::new("/runs/out"));
    }

    #[test]
    fn missing_waypoint_file_is_named() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("a.pgm"), "").unwrap();
        let mut cfg = ExperimentConfig::from_yaml(
            "mode: bc-train\nmap: a.pgm\nwaypoints: nowhere.csv\noutput_dir: out\n",
            Path::new("c.yaml"),
        )
        .unwrap();
        cfg.resolve_paths(dir.path(), None);
        let err = cfg.validate().unwrap_err().to_string();
        assert!(err.starts_with("waypoints:") && err.contains("nowhere.csv"), "{err}");
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let text = format!("{MINIMAL}learning_rate: 0.1\n");
        assert!(ExperimentConfig::from_yaml(&text, Path::new("c.yaml")).is_err());
    }

    #[test]
    fn yaml_round_trip() {
        let cfg = ExperimentConfig::from_yaml(MINIMAL, Path::new("c.yaml")).unwrap();
        let back = ExperimentConfig::from_yaml(&cfg.to_yaml(), Path::new("c.yaml")).unwrap();
        assert_eq!(back, cfg);
    }
}
