use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use avglab::harness::{execute, RunOptions, Task};
use clap::{Args, Parser, Subcommand};

/// Weight-averaging experiments: toy training, noisy quadratic model,
/// loss landscapes and decay/switch-interval sweeps.
#[derive(Parser)]
#[command(name = "avglab", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train on a toy task and log per-epoch metrics and checkpoints.
    Train(Common),
    /// Noisy quadratic model: variance fixed points and sigma_T.
    Nqm(Common),
    /// 1D/2D loss landscapes and trajectory projections.
    Landscape {
        #[command(flatten)]
        common: Common,
        /// Checkpoint file (repeatable, in trajectory order). Without any,
        /// the configured methods are trained first.
        #[arg(long = "checkpoint", value_name = "PATH")]
        checkpoints: Vec<PathBuf>,
    },
    /// Cross-product sweep over decay and switch interval.
    Sweep(Common),
}

#[derive(Args)]
struct Common {
    /// JSON config; missing fields take the task defaults.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Override a field by dotted path, e.g. averager.decay=0.99.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Replace the config's seed list (repeatable).
    #[arg(long = "seed", value_name = "N")]
    seeds: Vec<u64>,
    /// Output directory [default: $AVGLAB_OUT_DIR/<task>-<hash>].
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Worker threads [default: available cores].
    #[arg(long, value_name = "N")]
    workers: Option<usize>,
}

impl Common {
    fn into_options(self, checkpoints: Vec<PathBuf>) -> RunOptions {
        RunOptions {
            config: self.config,
            overrides: self.overrides,
            seeds: self.seeds,
            out: self.out,
            workers: self.workers,
            checkpoints,
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let (task, opts) = match cli.command {
        Command::Train(c) => (Task::Toy, c.into_options(vec![])),
        Command::Nqm(c) => (Task::Nqm, c.into_options(vec![])),
        Command::Landscape { common, checkpoints } => (Task::Landscape, common.into_options(checkpoints)),
        Command::Sweep(c) => (Task::Sweep, c.into_options(vec![])),
    };
    match execute(task, &opts) {
        Ok(out) => {
            // A closed pipe is not a run failure.
            let mut o = std::io::stdout().lock();
            let _ = writeln!(o, "{}", out.summary);
            let _ = writeln!(o, "config hash {}", out.config_hash);
            let _ = writeln!(o, "wrote {}", out.out_dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("avglab: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
