//! The training loop shared by every MLP experiment.
//!
//! Per batch: loss/backward, optimizer step, averager observe. At the end of
//! each epoch the callback evaluates the fast and averaged weights, and only
//! then does a due switch rewrite the fast weights. Lookahead syncs are
//! checked after every step since they count steps, not epochs.

use crate::averaging::{Averager, Method, SemaMode};
use crate::error::{Error, Result};
use crate::mlp::{loss_and_grad, Batch, MlpParams};
use crate::optim::{AnyOptimizer, Optimizer};

#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog<E> {
    pub epoch: u64,
    /// Global iteration count at the end of the epoch.
    pub step: u64,
    /// Mean minibatch loss over the epoch, measured before each step.
    pub train_loss: f64,
    pub eval: E,
    /// Whether a switch fired at the epoch boundary, after `eval`.
    pub switched_after_eval: bool,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome<E> {
    pub epochs: Vec<EpochLog<E>>,
    pub fast: MlpParams,
    pub averager: Averager,
}

impl<E> TrainOutcome<E> {
    pub fn eval_params(&self) -> MlpParams {
        let flat = self.averager.eval_params(self.fast.flat());
        self.fast.with_flat(flat).expect("averager preserves length")
    }
}

/// Runs `epochs` passes over `batches`. `on_epoch(epoch, step, fast, averaged)`
/// is called once per epoch with the weights as they stand before any
/// end-of-epoch switch.
pub fn train_loop<E, F>(
    mut fast: MlpParams,
    batches: &[Batch],
    epochs: u64,
    optimizer: &mut AnyOptimizer,
    mut averager: Averager,
    mut on_epoch: F,
) -> Result<TrainOutcome<E>>
where
    F: FnMut(u64, u64, &MlpParams, &MlpParams) -> Result<E>,
{
    if batches.is_empty() {
        return Err(Error::Usage("training needs at least one batch".into()));
    }
    if averager.method() == Method::Sema && averager.config().sema_mode == SemaMode::Coupled {
        return Err(Error::config(
            "averager.sema_mode",
            "coupled mode is only available on the noisy quadratic model",
        ));
    }
    let mut logs = Vec::with_capacity(epochs as usize);
    let mut step = 0u64;
    for epoch in 1..=epochs {
        let mut loss_sum = 0.0;
        let last = batches.len() - 1;
        for (b, batch) in batches.iter().enumerate() {
            let (loss, grad) = loss_and_grad(&fast, batch)?;
            step += 1;
            if !loss.is_finite() || !grad.is_finite() {
                return Err(Error::Divergence {
                    step,
                    detail: format!("non-finite loss or gradient in epoch {epoch}"),
                });
            }
            loss_sum += loss;
            optimizer.step(fast.flat_mut(), &grad)?;
            if !fast.flat().is_finite() {
                return Err(Error::Divergence {
                    step,
                    detail: format!("non-finite parameters in epoch {epoch}"),
                });
            }
            averager.observe(fast.flat())?;
            if b == last {
                let eval_params = fast.with_flat(averager.eval_params(fast.flat()))?;
                let eval = on_epoch(epoch, step, &fast, &eval_params)?;
                let switched = averager.maybe_switch(fast.flat_mut())?;
                logs.push(EpochLog {
                    epoch,
                    step,
                    train_loss: loss_sum / batches.len() as f64,
                    eval,
                    switched_after_eval: switched,
                });
            } else {
                averager.maybe_switch(fast.flat_mut())?;
            }
        }
    }
    Ok(TrainOutcome {
        epochs: logs,
        fast,
        averager,
    })
}
