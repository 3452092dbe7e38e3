//! Calibration error of a calibrated and an overconfident synthetic
//! predictor.

use avglab::numerics::{Mat64, RngState};
use avglab::toy::expected_calibration_error;

fn main() -> avglab::error::Result<()> {
    let mut rng = RngState::new(1, 0);
    let n = 50_000;
    for sharpen in [1.0, 3.0] {
        let mut probs = Vec::with_capacity(2 * n);
        let mut labels = Vec::with_capacity(n);
        for _ in 0..n {
            let p = rng.uniform();
            labels.push(usize::from(rng.uniform() < p));
            let q = p.powf(1.0 / sharpen) / (p.powf(1.0 / sharpen) + (1.0 - p).powf(1.0 / sharpen));
            probs.extend([1.0 - q, q]);
        }
        let ece = expected_calibration_error(&Mat64::new(n, 2, probs)?, &labels, 15)?;
        println!("temperature 1/{sharpen}: ece {ece:.4}");
    }
    Ok(())
}
