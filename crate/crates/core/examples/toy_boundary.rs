//! Trains the toy classifier on circles and moons with no averaging, EMA
//! and switch-EMA, then prints final test metrics per method.
//!
//!     cargo run --release --example toy_boundary -- [seeds]

use avglab::averaging::AveragerConfig;
use avglab::toy::{run_toy_experiment, ToySpec, ToyTrainConfig};

fn main() -> avglab::error::Result<()> {
    let seeds: u64 = std::env::args().nth(1).map_or(3, |s| s.parse().expect("seed count"));
    let train = ToyTrainConfig::default();
    let methods = [
        ("none", AveragerConfig::default()),
        ("ema", AveragerConfig::ema(0.995)),
        ("sema", AveragerConfig::sema(0.995, Some(200))),
    ];
    for (kind, make) in [("circles", ToySpec::circles as fn(u64) -> ToySpec), ("moons", ToySpec::moons)] {
        for (name, avg) in &methods {
            let (mut acc, mut ece, mut width) = (0.0, 0.0, 0.0);
            for seed in 0..seeds {
                let run = run_toy_experiment(&make(seed), &train, avg)?;
                let m = run.final_metrics();
                acc += m.accuracy;
                ece += m.ece;
                width += m.boundary_width.unwrap_or(f64::NAN);
            }
            let n = seeds as f64;
            println!(
                "{kind:<8} {name:<5} accuracy {:.4}  ece {:.4}  boundary width {:.4}",
                acc / n,
                ece / n,
                width / n
            );
        }
    }
    Ok(())
}
