//! Feeds one noisy scalar trajectory through every averager and prints
//! the weights each would evaluate.

use avglab::averaging::{Averager, AveragerConfig};
use avglab::numerics::RngState;

fn main() -> avglab::error::Result<()> {
    let steps = 400u64;
    let configs = [
        ("none", AveragerConfig::default()),
        ("ema", AveragerConfig::ema(0.95)),
        ("sema", AveragerConfig::sema(0.95, Some(50))),
        ("swa", AveragerConfig::swa(5, 320, 16)),
        ("lookahead", AveragerConfig::lookahead(0.5, 10)),
    ];
    for (name, cfg) in configs {
        let mut rng = RngState::new(0, 0);
        let mut fast = vec![5.0];
        let mut avg = Averager::init(cfg, &fast)?;
        let mut switches = 0;
        for _ in 0..steps {
            // Noisy gradient step on x^2 / 2.
            fast[0] -= 0.1 * (fast[0] + rng.standard_normal());
            avg.observe(&fast)?;
            switches += usize::from(avg.maybe_switch(&mut fast)?);
        }
        println!(
            "{name:<10} fast {:+.4}  eval {:+.4}  switches {switches}",
            fast[0],
            avg.eval_params(&fast)[0]
        );
    }
    Ok(())
}
