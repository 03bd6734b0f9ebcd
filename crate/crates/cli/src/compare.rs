//! Merging return curves of several runs.

use std::path::{Path, PathBuf};

use anyhow::{bail, Result};
use nudge_core::learn::CurvePoint;

use crate::run::read_returns;

/// Episodes averaged by the moving average.
pub const WINDOW: usize = 20;

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub run: PathBuf,
    pub episodes: usize,
    pub final_moving_average: f64,
    /// First step at which the moving average reaches the threshold.
    pub steps_to_threshold: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub summaries: Vec<RunSummary>,
    /// `step;<run>;<run>…` with each run's moving average at that step.
    pub merged_csv: String,
}

/// Trailing mean over the last `window` episodes, one value per episode.
pub fn moving_average(curve: &[CurvePoint], window: usize) -> Vec<(u64, f64)> {
    let mut sum = 0.0;
    curve
        .iter()
        .enumerate()
        .map(|(i, c)| {
            sum += c.episodic_return;
            if i >= window {
                sum -= curve[i - window].episodic_return;
            }
            (c.step, sum / (i + 1).min(window) as f64)
        })
        .collect()
}

pub fn compare_runs(dirs: &[PathBuf], threshold: Option<f64>) -> Result<Comparison> {
    if dirs.is_empty() {
        bail!("compare needs at least one run directory");
    }
    let mut curves = Vec::with_capacity(dirs.len());
    for d in dirs {
        let path = d.join("returns.csv");
        if !path.is_file() {
            bail!("{}: no returns.csv in this run directory", d.display());
        }
        curves.push(moving_average(&read_returns(&path)?, WINDOW));
    }
    let summaries = dirs
        .iter()
        .zip(&curves)
        .map(|(d, c)| RunSummary {
            run: d.clone(),
            episodes: c.len(),
            final_moving_average: c.last().map_or(f64::NAN, |p| p.1),
            steps_to_threshold: threshold.and_then(|t| c.iter().find(|p| p.1 >= t).map(|p| p.0)),
        })
        .collect();
    let mut steps: Vec<u64> = curves.iter().flatten().map(|p| p.0).collect();
    steps.sort_unstable();
    steps.dedup();
    let mut csv = String::from("step");
    for d in dirs {
        csv.push(';');
        csv.push_str(&label(d));
    }
    csv.push('\n');
    let mut cursors = vec![0usize; curves.len()];
    for s in steps {
        csv.push_str(&s.to_string());
        for (c, k) in curves.iter().zip(cursors.iter_mut()) {
            while *k < c.len() && c[*k].0 <= s {
                *k += 1;
            }
            csv.push(';');
            if *k > 0 {
                csv.push_str(&c[*k - 1].1.to_string());
            }
        }
        csv.push('\n');
    }
    Ok(Comparison { summaries, merged_csv: csv })
}

fn label(dir: &Path) -> String {
    dir.file_name()
        .map_or_else(|| dir.display().to_string(), |n| n.to_string_lossy().into_owned())
}

pub fn format_summaries(s: &[RunSummary]) -> String {
    let mut out = String::from("run;episodes;final_moving_average;steps_to_threshold\n");
    for r in s {
        out.push_str(&format!(
            "{};{};{};{}\n",
            r.run.display(),
            r.episodes,
            r.final_moving_average,
            r.steps_to_threshold.map_or(String::new(), |v| v.to_string())
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::run::write_returns;

    fn curve(vals: &[(u64, f64)]) -> Vec<CurvePoint> {
        vals.iter().map(|&(step, episodic_return)| CurvePoint { step, episodic_return }).collect()
    }

    #[test]
    fn moving_average_by_hand() {
        let m = moving_average(&curve(&[(1, 1.0), (2, 3.0), (5, 5.0)]), 2);
        assert_eq!(m, vec![(1, 1.0), (2, 2.0), (5, 4.0)]);
    }

    #[test]
    fn identical_runs_give_identical_rows() {
        let root = tempfile::tempdir().unwrap();
        let dirs: Vec<PathBuf> = ["a", "b"].iter().map(|n| root.path().join(n)).collect();
        for d in &dirs {
            std::fs::create_dir_all(d).unwrap();
            write_returns(&d.join("returns.csv"), &curve(&[(10, 1.0), (20, 2.0)])).unwrap();
        }
        let c = compare_runs(&dirs, Some(1.5)).unwrap();
        assert_eq!(c.summaries[0].final_moving_average, c.summaries[1].final_moving_average);
        assert_eq!(c.summaries[0].steps_to_threshold, Some(20));
        assert_eq!(c.merged_csv, "step;a;b\n10;1;1\n20;1.5;1.5\n");
    }

    #[test]
    fn arity_and_missing_curve_errors() {
        assert!(compare_runs(&[], None).is_err());
        let root = tempfile::tempdir().unwrap();
        let err = compare_runs(&[root.path().to_path_buf()], None).unwrap_err().to_string();
        assert!(err.contains(&root.path().display().to_string()));
    }
}
