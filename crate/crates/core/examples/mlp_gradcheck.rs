//! Backprop against central finite differences on a small MLP.

use avglab::mlp::{forward, loss_and_grad, Activation, Batch, LossKind, MlpConfig, MlpParams};
use avglab::numerics::{Mat64, RngState};

fn main() -> avglab::error::Result<()> {
    let cfg = MlpConfig::new(vec![3, 5, 4, 3], Activation::Tanh, LossKind::SoftmaxCe)?;
    let mut rng = RngState::new(7, 0);
    let params = MlpParams::init(cfg, &mut rng);
    let xs: Vec<f64> = (0..18).map(|_| rng.standard_normal()).collect();
    let batch = Batch::classification(Mat64::new(6, 3, xs)?, vec![0, 1, 2, 0, 1, 2])?;
    let (loss, grad) = loss_and_grad(&params, &batch)?;
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for i in 0..grad.len() {
        let mut plus = params.flat().clone();
        let mut minus = params.flat().clone();
        plus[i] += h;
        minus[i] -= h;
        let fd = (forward(&params.with_flat(plus)?, &batch)?.0 - forward(&params.with_flat(minus)?, &batch)?.0) / (2.0 * h);
        worst = worst.max((fd - grad[i]).abs() / fd.abs().max(grad[i].abs()).max(1e-8));
    }
    println!("loss {loss:.6}, {} parameters, max relative gradient error {worst:.2e}", grad.len());
    Ok(())
}
