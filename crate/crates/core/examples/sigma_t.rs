//! Loss-improvement ratio of one switch at T over plain EMA from T to 2T.

use avglab::nqm::{default_sigma_t_config, estimate_sigma_t, SemaVariant, SigmaTOptions};

fn main() -> avglab::error::Result<()> {
    let mut cfg = default_sigma_t_config();
    cfg.trials = 10_000;
    for (label, opts) in [
        ("coupled, switching", SigmaTOptions::default()),
        (
            "decoupled, no switch",
            SigmaTOptions {
                sema: SemaVariant::Decoupled,
                switching: false,
                ..SigmaTOptions::default()
            },
        ),
    ] {
        let e = estimate_sigma_t(&cfg, &opts)?;
        println!(
            "{label:<22} sigma_T {:.4} ± {:.4}  (L_ema(T) {:.5}, L_sema(2T) {:.5}, L_ema(2T) {:.5})",
            e.sigma_t, e.std_err, e.ema_loss_at_t, e.sema_loss_at_2t, e.ema_loss_at_2t
        );
    }
    Ok(())
}
