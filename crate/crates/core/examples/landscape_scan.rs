//! Trains one switch-EMA run on moons, then scans the test loss along a
//! layer-normalized random direction around the averaged weights.

use avglab::averaging::AveragerConfig;
use avglab::landscape::{linspace, make_direction, scan_1d, Normalization};
use avglab::mlp::{forward, MlpParams};
use avglab::numerics::RngState;
use avglab::toy::{run_toy_experiment, ToySpec, ToyTrainConfig};

fn main() -> avglab::error::Result<()> {
    let train = ToyTrainConfig::default();
    let run = run_toy_experiment(&ToySpec::moons(0), &train, &AveragerConfig::sema(0.995, Some(200)))?;
    let center = &run.final_averaged;
    let dir = make_direction(center, &mut RngState::new(0, 10), Normalization::LayerwiseNorm)?;
    let model = center.config().clone();
    let test = &run.data.test;
    let grid = scan_1d(center.flat(), &dir.vector, &linspace(-1.0, 1.0, 11), |p: &[f64]| {
        let params = MlpParams::unflatten(model.clone(), p.to_vec().into()).expect("length");
        (forward(&params, test).map_or(f64::NAN, |r| r.0), None)
    })?;
    for (a, l) in grid.alphas.iter().zip(&grid.loss) {
        println!("alpha {a:+.1}  loss {}", l.map_or("non-finite".into(), |v| format!("{v:.5}")));
    }
    Ok(())
}
