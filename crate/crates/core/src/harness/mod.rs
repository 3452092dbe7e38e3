//! Configuration-driven experiment runner behind the `avglab` binary.
//!
//! Each command reads an [`ExperimentConfig`], runs on a worker pool, and
//! writes CSV/JSON artifacts into one output directory. Everything except
//! `timing.log` is a pure function of the config and its seeds.

mod checkpoint;
mod commands;
mod config;
pub mod svg;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use checkpoint::{Checkpoint, CheckpointHeader, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use commands::{
    cmd_landscape, cmd_nqm, cmd_sweep, cmd_train, run_seed, NqmCell, SweepCell, SweepRow,
    TrainSummary,
};
pub use config::{
    apply_override, load_config, merge, switch_iters, AveragerSpec, ExperimentConfig, LandscapeSpec,
    NqmSpec, PlaneKind, ScanRange, SweepSpec, Task, TrainSpec,
};

use crate::error::{Error, Result};

/// Environment variable naming the default output root.
pub const OUT_ENV: &str = "AVGLAB_OUT_DIR";
pub const DEFAULT_OUT_ROOT: &str = "avglab-out";
/// Version tag written into every CSV header comment.
pub const CSV_SCHEMA: &str = "avglab-csv v1";

/// Command-line inputs shared by all subcommands.
#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    pub config: Option<PathBuf>,
    pub overrides: Vec<String>,
    pub seeds: Vec<u64>,
    pub out: Option<PathBuf>,
    pub workers: Option<usize>,
    /// Landscape only: checkpoint files forming one trajectory.
    pub checkpoints: Vec<PathBuf>,
}

#[derive(Clone, Debug)]
pub struct CommandOutput {
    pub out_dir: PathBuf,
    pub config_hash: String,
    /// Human-readable digest printed by the binary.
    pub summary: String,
}

/// `--out`, then `output_dir` from the config, then
/// `$AVGLAB_OUT_DIR/<task>-<hash prefix>`, then `avglab-out/<task>-<hash prefix>`.
pub fn resolve_out_dir(cfg: &ExperimentConfig, out: Option<&Path>) -> PathBuf {
    if let Some(o) = out {
        return o.to_path_buf();
    }
    if let Some(o) = &cfg.output_dir {
        return o.clone();
    }
    let root = std::env::var_os(OUT_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_ROOT));
    root.join(format!("{}-{}", cfg.task.as_str(), &cfg.hash()[..12]))
}

pub fn default_workers() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

pub(crate) fn pool(workers: usize) -> Result<rayon::ThreadPool> {
    if workers == 0 {
        return Err(Error::config("--workers", "need at least one worker"));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Usage(format!("cannot start worker pool: {e}")))
}

/// Loads the config for `task` and runs the matching command.
pub fn execute(task: Task, opts: &RunOptions) -> Result<CommandOutput> {
    let cfg = load_config(task, opts.config.as_deref(), &opts.overrides, &opts.seeds)?;
    if task != Task::Landscape && !opts.checkpoints.is_empty() {
        return Err(Error::Usage("--checkpoint only applies to `landscape`".into()));
    }
    let out = resolve_out_dir(&cfg, opts.out.as_deref());
    let workers = opts.workers.unwrap_or_else(default_workers);
    match task {
        Task::Toy => cmd_train(&cfg, &out, workers),
        Task::Nqm => cmd_nqm(&cfg, &out, workers),
        Task::Landscape => cmd_landscape(&cfg, &opts.checkpoints, &out, workers),
        Task::Sweep => cmd_sweep(&cfg, &out, workers),
    }
}

/// Mean and sample standard deviation (`n - 1`; zero for one value).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

impl Stat {
    pub fn of(values: &[f64]) -> Stat {
        let n = values.len() as f64;
        if values.is_empty() {
            return Stat {
                mean: f64::NAN,
                std: f64::NAN,
            };
        }
        let mean = values.iter().sum::<f64>() / n;
        let var = if values.len() > 1 {
            values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        Stat {
            mean,
            std: var.sqrt(),
        }
    }
}

/// Final averaged-model metrics over seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub seeds: usize,
    pub accuracy: Stat,
    pub ece: Stat,
    pub boundary_width: Stat,
    pub loss: Stat,
}

impl Aggregate {
    pub fn of(finals: &[&crate::toy::BoundaryMetrics]) -> Aggregate {
        let pick = |f: fn(&crate::toy::BoundaryMetrics) -> f64| {
            Stat::of(&finals.iter().map(|m| f(m)).collect::<Vec<_>>())
        };
        Aggregate {
            seeds: finals.len(),
            accuracy: pick(|m| m.accuracy),
            ece: pick(|m| m.ece),
            boundary_width: pick(|m| m.boundary_width.unwrap_or(f64::NAN)),
            loss: pick(|m| m.loss),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stat_matches_hand_values() {
        let s = Stat::of(&[1.0, 2.0, 3.0]);
        assert_eq!(s.mean, 2.0);
        assert_eq!(s.std, 1.0);
        assert_eq!(Stat::of(&[4.0]).std, 0.0);
    }

    #[test]
    fn explicit_out_wins() {
        let cfg = ExperimentConfig::for_task(Task::Toy);
        assert_eq!(resolve_out_dir(&cfg, Some(Path::new("x"))), PathBuf::from("x"));
        let derived = resolve_out_dir(&cfg, None);
        assert!(derived.to_string_lossy().contains(&cfg.hash()[..12]));
    }
}
