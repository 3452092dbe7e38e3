//! Small decay x switch-interval sweep through the harness. Artifacts go
//! to the directory given as the first argument (default: a temp dir).

use avglab::harness::{cmd_sweep, ExperimentConfig, Task};

fn main() -> avglab::error::Result<()> {
    let out = std::env::args()
        .nth(1)
        .map_or_else(|| std::env::temp_dir().join("avglab-sweep-example"), Into::into);
    let mut cfg = ExperimentConfig::for_task(Task::Sweep);
    cfg.train.epochs = 100;
    cfg.sweep.decays = vec![0.9, 0.99];
    cfg.sweep.switch_epochs = vec![1.0, 5.0];
    cfg.seeds = vec![0, 1];
    let res = cmd_sweep(&cfg, &out, avglab::harness::default_workers())?;
    println!("{}\nwrote {}", res.summary, res.out_dir.display());
    Ok(())
}
