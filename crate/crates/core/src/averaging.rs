//! Weight averagers over flat parameter vectors.
//!
//! All methods share one interface: [`Averager::observe`] after every
//! optimizer step, [`Averager::maybe_switch`] at iteration boundaries, and
//! [`Averager::eval_params`] for the weights that get evaluated.
//!
//! The decay `d` is the weight on the *old* average:
//! `shadow <- (1 - d) * fast + d * shadow`. Reported coefficients such as
//! 0.999 therefore transfer verbatim; the "new-weight" convention is `1 - d`.

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::numerics::{ParamVector, Vec64};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    #[default]
    None,
    Ema,
    Sema,
    Swa,
    Lookahead,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::None => "none",
            Method::Ema => "ema",
            Method::Sema => "sema",
            Method::Swa => "swa",
            Method::Lookahead => "lookahead",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "none" | "baseline" => Method::None,
            "ema" => Method::Ema,
            "sema" => Method::Sema,
            "swa" => Method::Swa,
            "lookahead" => Method::Lookahead,
            other => return Err(Error::config("averager.method", format!("unknown method `{other}`"))),
        })
    }
}

/// How the switch-EMA shadow is driven.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SemaMode {
    /// The real optimizer drives the fast model; the shadow tracks it and is
    /// copied back into the fast model every `switch_interval` iterations.
    #[default]
    Decoupled,
    /// Gradient steps are taken at the shadow itself (theory-checking form).
    Coupled,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AveragerConfig {
    pub method: Method,
    /// Weight on the old average, in `[0, 1)`.
    pub decay: f64,
    /// Iterations between switches; `None` never switches.
    pub switch_interval: Option<u64>,
    pub sema_mode: SemaMode,
    pub swa_snapshot_count: usize,
    /// First iteration eligible for an SWA snapshot.
    pub swa_start: u64,
    /// Iterations between SWA snapshots.
    pub swa_every: u64,
    pub la_alpha: f64,
    pub la_k: u64,
}

impl Default for AveragerConfig {
    fn default() -> Self {
        AveragerConfig {
            method: Method::None,
            decay: 0.999,
            switch_interval: Some(1),
            sema_mode: SemaMode::Decoupled,
            swa_snapshot_count: 5,
            swa_start: 0,
            swa_every: 1,
            la_alpha: 0.5,
            la_k: 100,
        }
    }
}

impl AveragerConfig {
    pub fn ema(decay: f64) -> Self {
        AveragerConfig {
            method: Method::Ema,
            decay,
            ..Default::default()
        }
    }

    pub fn sema(decay: f64, switch_interval: Option<u64>) -> Self {
        AveragerConfig {
            method: Method::Sema,
            decay,
            switch_interval,
            ..Default::default()
        }
    }

    pub fn swa(count: usize, start: u64, every: u64) -> Self {
        AveragerConfig {
            method: Method::Swa,
            swa_snapshot_count: count,
            swa_start: start,
            swa_every: every,
            ..Default::default()
        }
    }

    pub fn lookahead(alpha: f64, k: u64) -> Self {
        AveragerConfig {
            method: Method::Lookahead,
            la_alpha: alpha,
            la_k: k,
            ..Default::default()
        }
    }

    /// Places `swa_snapshot_count` equally spaced snapshots in the final 20%
    /// of a run of `total_iters` iterations, aligned to multiples of
    /// `iters_per_epoch`. The last snapshot lands on the final iteration.
    pub fn with_swa_budget(mut self, total_iters: u64, iters_per_epoch: u64) -> Self {
        let count = self.swa_snapshot_count.max(1) as u64;
        let ipe = iters_per_epoch.max(1);
        let tail_epochs = (total_iters / ipe) / 5;
        let every_epochs = (tail_epochs / count).max(1);
        self.swa_every = every_epochs * ipe;
        self.swa_start = total_iters.saturating_sub((count - 1) * self.swa_every).max(1);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.decay) {
            return Err(Error::config("averager.decay", "decay must lie in [0, 1)"));
        }
        if self.switch_interval == Some(0) {
            return Err(Error::config("averager.switch_interval", "switch interval must be >= 1"));
        }
        if self.swa_snapshot_count == 0 {
            return Err(Error::config("averager.swa_snapshot_count", "need at least one snapshot"));
        }
        if self.swa_every == 0 {
            return Err(Error::config("averager.swa_every", "snapshot spacing must be >= 1"));
        }
        if !(self.la_alpha > 0.0 && self.la_alpha <= 1.0) {
            return Err(Error::config("averager.la_alpha", "lookahead alpha must lie in (0, 1]"));
        }
        if self.la_k == 0 {
            return Err(Error::config("averager.la_k", "lookahead k must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AveragerState {
    pub shadow: ParamVector,
    pub t: u64,
    pub swa_snapshots: Vec<ParamVector>,
    pub la_slow: ParamVector,
    pub la_counter: u64,
}

#[derive(Clone, Debug)]
pub struct Averager {
    config: AveragerConfig,
    state: AveragerState,
}

impl Averager {
    /// Starts every slow copy at `params`.
    pub fn init(config: AveragerConfig, params: &[f64]) -> Result<Self> {
        config.validate()?;
        if !params.iter().all(|v| v.is_finite()) {
            return Err(Error::Domain("initial parameters must be finite".into()));
        }
        let state = AveragerState {
            shadow: Vec64::from(params),
            t: 0,
            swa_snapshots: Vec::new(),
            la_slow: Vec64::from(params),
            la_counter: 0,
        };
        Ok(Averager { config, state })
    }

    pub fn config(&self) -> &AveragerConfig {
        &self.config
    }

    pub fn state(&self) -> &AveragerState {
        &self.state
    }

    pub fn method(&self) -> Method {
        self.config.method
    }

    /// Records the fast weights after one optimizer step.
    pub fn observe(&mut self, fast: &[f64]) -> Result<()> {
        check_len("Averager::observe", self.state.shadow.len(), fast.len())?;
        self.state.t += 1;
        let d = self.config.decay;
        match self.config.method {
            Method::Ema | Method::Sema => {
                for (s, f) in self.state.shadow.iter_mut().zip(fast) {
                    *s = (1.0 - d) * f + d * *s;
                }
            }
            Method::Swa => {
                let t = self.state.t;
                let cfg = &self.config;
                if t >= cfg.swa_start
                    && (t - cfg.swa_start).is_multiple_of(cfg.swa_every)
                    && self.state.swa_snapshots.len() < cfg.swa_snapshot_count
                {
                    self.state.swa_snapshots.push(Vec64::from(fast));
                }
            }
            Method::Lookahead => self.state.la_counter += 1,
            Method::None => {}
        }
        Ok(())
    }

    /// Whether a switch is due at the current iteration count.
    pub fn switch_due(&self) -> bool {
        match self.config.method {
            Method::Sema => match self.config.switch_interval {
                Some(every) => self.state.t > 0 && self.state.t.is_multiple_of(every),
                None => false,
            },
            Method::Lookahead => self.state.la_counter >= self.config.la_k,
            _ => false,
        }
    }

    /// Applies the switch if one is due. Returns whether `fast` was rewritten.
    ///
    /// Switch-EMA copies the shadow into the fast weights. Lookahead moves
    /// the slow weights `la_alpha` of the way toward the fast weights, then
    /// resets the fast weights onto them.
    pub fn maybe_switch(&mut self, fast: &mut [f64]) -> Result<bool> {
        check_len("Averager::maybe_switch", self.state.shadow.len(), fast.len())?;
        if !self.switch_due() {
            return Ok(false);
        }
        match self.config.method {
            Method::Sema => fast.copy_from_slice(&self.state.shadow),
            Method::Lookahead => {
                let a = self.config.la_alpha;
                for (s, f) in self.state.la_slow.iter_mut().zip(fast.iter_mut()) {
                    *s += a * (*f - *s);
                    *f = *s;
                }
                self.state.la_counter = 0;
            }
            _ => unreachable!("switch_due is false for other methods"),
        }
        Ok(true)
    }

    /// One coupled switch-EMA iteration with the gradient taken at the shadow:
    /// `probe = shadow - lr * grad(shadow)`, then the shadow becomes `probe`
    /// on switch iterations and `(1 - d) * probe + d * shadow` otherwise.
    pub fn coupled_sema_step<F>(&mut self, lr: f64, mut grad_fn: F) -> Result<()>
    where
        F: FnMut(&[f64]) -> Vec64,
    {
        if self.config.method != Method::Sema || self.config.sema_mode != SemaMode::Coupled {
            return Err(Error::Usage(
                "coupled_sema_step requires method = sema with sema_mode = coupled".into(),
            ));
        }
        let grad = grad_fn(&self.state.shadow);
        check_len("coupled_sema_step grad", self.state.shadow.len(), grad.len())?;
        self.state.t += 1;
        let switch = matches!(self.config.switch_interval, Some(every) if self.state.t.is_multiple_of(every));
        let d = self.config.decay;
        for (s, g) in self.state.shadow.iter_mut().zip(grad.iter()) {
            let probe = *s - lr * g;
            *s = if switch { probe } else { (1.0 - d) * probe + d * *s };
        }
        Ok(())
    }

    /// Weights to evaluate. Never mutates state.
    pub fn eval_params(&self, fast: &[f64]) -> ParamVector {
        match self.config.method {
            Method::Ema | Method::Sema => self.state.shadow.clone(),
            Method::Lookahead => self.state.la_slow.clone(),
            Method::None => Vec64::from(fast),
            Method::Swa => {
                let snaps = &self.state.swa_snapshots;
                if snaps.is_empty() {
                    return Vec64::from(fast);
                }
                let n = snaps.len() as f64;
                let mut mean = Vec64::zeros(fast.len());
                for s in snaps {
                    for (m, v) in mean.iter_mut().zip(s.iter()) {
                        *m += v;
                    }
                }
                mean.iter_mut().for_each(|m| *m /= n);
                mean
            }
        }
    }
}
