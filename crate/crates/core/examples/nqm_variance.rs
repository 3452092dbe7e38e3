//! Stationary variance of SGD, EMA and switch-EMA on the noisy quadratic
//! model: closed form against Monte Carlo.

use avglab::nqm::{variance_report, NqmConfig, VarianceBudget};

fn main() -> avglab::error::Result<()> {
    let mut cfg = NqmConfig::new(vec![0.5, 1.0, 2.0], vec![1.0; 3], 0.05, 0.5);
    cfg.plan_variance_run(&VarianceBudget::default());
    cfg.check_stability()?;
    let report = variance_report(&cfg)?;
    println!("lr {} decay {} ({} steps x {} trials)", cfg.lr, cfg.decay, cfg.steps, cfg.trials);
    for est in &report.estimates {
        for (i, a) in cfg.a_diag.iter().enumerate() {
            println!(
                "{:<14} a={a:<4} analytic {:.6}  empirical {:.6}  rel err {:.4}",
                est.method.as_str(),
                est.analytic[i],
                est.empirical[i],
                est.rel_err[i]
            );
        }
    }
    println!("ordering holds (analytic / empirical): {:?} / {:?}", report.ordering_analytic, report.ordering_empirical);
    Ok(())
}
