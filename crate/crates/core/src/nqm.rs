//! Noisy quadratic model.
//!
//! Loss `L(x) = 1/2 (x - c)^T A (x - c)` with a fresh `c ~ N(0, Sigma)` drawn
//! every step, `A` and `Sigma` diagonal. The optimum is pinned at zero.
//!
//! Here the decay `lambda` is the weight on the *new* iterate:
//! `ema <- lambda * sgd + (1 - lambda) * ema`. This is `1 - d` in the
//! averager convention.
//!
//! Provides the stationary variance fixed points of SGD, EMA-of-SGD and
//! coupled switch-EMA, Monte Carlo estimates of the same, and the
//! single-switch improvement ratio `sigma_T`.

use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::numerics::{KahanSum, RngState, Vec64};

/// Iterates beyond this magnitude count as divergence.
pub const DIVERGENCE_LIMIT: f64 = 1e12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NqmConfig {
    pub a_diag: Vec64,
    pub sigma_diag: Vec64,
    pub lr: f64,
    /// Weight on the new iterate, in `(0, 1)`.
    pub decay: f64,
    /// Switch every `T` iterations; `None` never switches.
    pub switch_interval: Option<u64>,
    pub steps: u64,
    pub burn_in: u64,
    pub trials: u64,
    pub seed: u64,
    /// Shared starting point for every method and trial. Empty means zero.
    #[serde(default)]
    pub init: Vec64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NqmMethod {
    Sgd,
    /// EMA of the SGD iterates.
    Ema,
    /// Gradient steps at the averaged point; full-`lr` step on switch iterations.
    SemaCoupled,
    /// SGD fast model + EMA shadow, shadow copied into the fast model on switches.
    SemaDecoupled,
}

impl NqmMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            NqmMethod::Sgd => "sgd",
            NqmMethod::Ema => "ema",
            NqmMethod::SemaCoupled => "sema_coupled",
            NqmMethod::SemaDecoupled => "sema_decoupled",
        }
    }
}

impl NqmConfig {
    /// Scalar-per-coordinate config with the burn-in default applied.
    pub fn new(a_diag: Vec<f64>, sigma_diag: Vec<f64>, lr: f64, decay: f64) -> Self {
        let mut cfg = NqmConfig {
            a_diag: Vec64(a_diag),
            sigma_diag: Vec64(sigma_diag),
            lr,
            decay,
            switch_interval: None,
            steps: 0,
            burn_in: 0,
            trials: 1,
            seed: 0,
            init: Vec64::default(),
        };
        cfg.burn_in = cfg.default_burn_in();
        cfg.steps = cfg.burn_in + MIN_VARIANCE_SAMPLES;
        cfg
    }

    pub fn dim(&self) -> usize {
        self.a_diag.len()
    }

    pub fn initial_point(&self) -> Vec64 {
        if self.init.is_empty() {
            Vec64::zeros(self.dim())
        } else {
            self.init.clone()
        }
    }

    /// Structural checks only; stability is [`NqmConfig::check_stability`].
    pub fn validate(&self) -> Result<()> {
        check_len("nqm sigma_diag", self.a_diag.len(), self.sigma_diag.len())?;
        if self.a_diag.is_empty() {
            return Err(Error::config("nqm.a_diag", "need at least one coordinate"));
        }
        if !self.init.is_empty() {
            check_len("nqm init", self.a_diag.len(), self.init.len())?;
        }
        if let Some(i) = self.a_diag.iter().position(|a| !(*a > 0.0)) {
            return Err(Error::config(format!("nqm.a_diag[{i}]"), "curvature must be > 0"));
        }
        if let Some(i) = self.sigma_diag.iter().position(|s| !(*s >= 0.0)) {
            return Err(Error::config(format!("nqm.sigma_diag[{i}]"), "noise variance must be >= 0"));
        }
        if !(self.lr > 0.0) {
            return Err(Error::config("nqm.lr", "learning rate must be > 0"));
        }
        if !(self.decay > 0.0 && self.decay < 1.0) {
            return Err(Error::config("nqm.decay", "decay must lie in (0, 1)"));
        }
        if self.switch_interval == Some(0) {
            return Err(Error::config("nqm.switch_interval", "switch interval must be >= 1"));
        }
        if self.trials == 0 {
            return Err(Error::config("nqm.trials", "need at least one trial"));
        }
        if self.burn_in >= self.steps && self.steps > 0 {
            return Err(Error::config("nqm.burn_in", "burn-in must be shorter than the run"));
        }
        Ok(())
    }

    /// `lr * a < 2` (SGD) and `decay * lr * a < 2` (coupled switch-EMA).
    pub fn check_stability(&self) -> Result<()> {
        self.validate()?;
        for (i, a) in self.a_diag.iter().enumerate() {
            let ea = self.lr * a;
            if ea >= 2.0 {
                return Err(Error::Domain(format!(
                    "unstable: lr * a[{i}] = {ea} >= 2"
                )));
            }
            if self.decay * ea >= 2.0 {
                return Err(Error::Domain(format!(
                    "unstable: decay * lr * a[{i}] = {} >= 2",
                    self.decay * ea
                )));
            }
        }
        Ok(())
    }

    /// Slowest per-step contraction factor of `method`'s mean dynamics.
    pub fn slowest_pole(&self, method: NqmMethod) -> f64 {
        self.a_diag
            .iter()
            .map(|a| {
                let q = (1.0 - self.lr * a).abs();
                match method {
                    NqmMethod::Sgd => q,
                    NqmMethod::Ema | NqmMethod::SemaDecoupled => q.max(1.0 - self.decay),
                    NqmMethod::SemaCoupled => (1.0 - self.decay * self.lr * a).abs(),
                }
            })
            .fold(0.0, f64::max)
    }

    /// Ten time constants of the slowest mode over all methods.
    pub fn default_burn_in(&self) -> u64 {
        let pole = [NqmMethod::Sgd, NqmMethod::Ema, NqmMethod::SemaCoupled]
            .iter()
            .map(|m| self.slowest_pole(*m))
            .fold(0.0, f64::max);
        if pole >= 1.0 {
            return 0;
        }
        (10.0 / (1.0 - pole)).ceil() as u64
    }

    /// Integrated autocorrelation time of the squared iterate for `method`,
    /// approximated by the slowest pole: `(1 + r^2) / (1 - r^2)`.
    pub fn autocorrelation_time(&self, method: NqmMethod) -> f64 {
        let r2 = self.slowest_pole(method).powi(2);
        (1.0 + r2) / (1.0 - r2)
    }

    /// Sizes `steps` so each coordinate pools at least `budget.min_samples`
    /// post-burn-in samples and at least `budget.samples_per_tau`
    /// autocorrelation times of the slowest method.
    pub fn plan_variance_run(&mut self, budget: &VarianceBudget) {
        self.trials = budget.trials.max(1);
        self.burn_in = self.default_burn_in();
        let tau = [NqmMethod::Sgd, NqmMethod::Ema, NqmMethod::SemaCoupled]
            .iter()
            .map(|m| self.autocorrelation_time(*m))
            .fold(0.0, f64::max);
        let total = (budget.min_samples as f64).max(budget.samples_per_tau * tau);
        let per_trial = (total / self.trials as f64).ceil() as u64;
        self.steps = self.burn_in + per_trial;
    }

    pub fn post_burn_in_samples(&self) -> u64 {
        self.trials * self.steps.saturating_sub(self.burn_in)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VarianceBudget {
    pub min_samples: u64,
    pub samples_per_tau: f64,
    pub trials: u64,
}

impl Default for VarianceBudget {
    /// `5.6e4` autocorrelation times puts the relative standard deviation of
    /// the variance estimate near 0.6%.
    fn default() -> Self {
        VarianceBudget {
            min_samples: 1_000_000,
            samples_per_tau: 5.6e4,
            trials: 8,
        }
    }
}

/// Closed-form stationary variances, one entry per coordinate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalyticVariances {
    pub sgd: Vec64,
    pub ema: Vec64,
    pub sema: Vec64,
    /// EMA variance from solving the joint (variance, covariance) fixed-point
    /// system numerically instead of the simplified expression.
    pub ema_linear_system: Vec64,
    /// `coef_k * ema`, the product form of the switch-EMA variance.
    pub sema_product_form: Vec64,
    pub coef_j: Vec64,
    pub coef_k: Vec64,
}

impl AnalyticVariances {
    pub fn for_method(&self, method: NqmMethod) -> Option<&Vec64> {
        match method {
            NqmMethod::Sgd => Some(&self.sgd),
            NqmMethod::Ema => Some(&self.ema),
            NqmMethod::SemaCoupled => Some(&self.sema),
            NqmMethod::SemaDecoupled => None,
        }
    }

    /// Per coordinate: `sema < ema < sgd`.
    pub fn ordering(&self) -> Vec<bool> {
        (0..self.sgd.len())
            .map(|i| self.sema[i] < self.ema[i] && self.ema[i] < self.sgd[i])
            .collect()
    }
}

fn coef_j(ea: f64, lam: f64) -> f64 {
    lam / (2.0 - lam) * (2.0 - lam - (1.0 - lam) * ea) / (lam + (1.0 - lam) * ea)
}

fn coef_k(ea: f64, lam: f64) -> f64 {
    (2.0 - lam) / lam * (lam + (1.0 - lam) * ea) / (2.0 - lam - (1.0 - lam) * ea)
        * (lam * ea / (2.0 - lam * ea))
        * ((2.0 - ea) / ea)
}

/// Solves `V = q^2 V + (ea)^2 s`, `C = lam q V + (1 - lam) q C`,
/// `W = lam^2 V + (1 - lam)^2 W + 2 lam (1 - lam) C` for `W`.
fn ema_fixed_point_system(ea: f64, lam: f64, sigma: f64) -> f64 {
    let q = 1.0 - ea;
    #[rustfmt::skip]
    let m = Matrix3::new(
        1.0 - q * q,            0.0,                                0.0,
        -lam * q,               1.0 - (1.0 - lam) * q,              0.0,
        -lam * lam,             -2.0 * lam * (1.0 - lam),           1.0 - (1.0 - lam).powi(2),
    );
    let rhs = Vector3::new(ea * ea * sigma, 0.0, 0.0);
    let sol = m.lu().solve(&rhs).expect("fixed-point system is non-singular for stable configs");
    sol[2]
}

pub fn analytic_variances(config: &NqmConfig) -> Result<AnalyticVariances> {
    config.check_stability()?;
    let lam = config.decay;
    let n = config.dim();
    let mut out = AnalyticVariances {
        sgd: Vec64::zeros(n),
        ema: Vec64::zeros(n),
        sema: Vec64::zeros(n),
        ema_linear_system: Vec64::zeros(n),
        sema_product_form: Vec64::zeros(n),
        coef_j: Vec64::zeros(n),
        coef_k: Vec64::zeros(n),
    };
    for i in 0..n {
        let ea = config.lr * config.a_diag[i];
        let s = config.sigma_diag[i];
        let v_sgd = ea / (2.0 - ea) * s;
        let j = coef_j(ea, lam);
        let k = coef_k(ea, lam);
        out.sgd[i] = v_sgd;
        out.coef_j[i] = j;
        out.coef_k[i] = k;
        out.ema[i] = j * v_sgd;
        out.sema[i] = lam * ea / (2.0 - lam * ea) * s;
        out.ema_linear_system[i] = ema_fixed_point_system(ea, lam, s);
        out.sema_product_form[i] = k * out.ema[i];
    }
    Ok(out)
}

/// Per-method iterate state for one trajectory.
#[derive(Clone, Debug)]
struct Dynamics {
    method: NqmMethod,
    /// SGD iterate, coupled switch-EMA iterate, or the decoupled fast model.
    primary: Vec<f64>,
    /// EMA / decoupled shadow.
    shadow: Vec<f64>,
}

impl Dynamics {
    fn new(method: NqmMethod, init: &[f64]) -> Self {
        Dynamics {
            method,
            primary: init.to_vec(),
            shadow: init.to_vec(),
        }
    }

    fn output(&self) -> &[f64] {
        match self.method {
            NqmMethod::Sgd | NqmMethod::SemaCoupled => &self.primary,
            NqmMethod::Ema | NqmMethod::SemaDecoupled => &self.shadow,
        }
    }

    /// Advances to iteration `t` given this step's optimum sample `c`.
    #[inline]
    #[allow(clippy::needless_range_loop)]
    fn step(&mut self, cfg: &NqmConfig, c: &[f64], t: u64, switch_enabled: bool) {
        let lr = cfg.lr;
        let lam = cfg.decay;
        let switch = switch_enabled && matches!(cfg.switch_interval, Some(every) if t.is_multiple_of(every));
        for i in 0..c.len() {
            let a = cfg.a_diag[i];
            match self.method {
                NqmMethod::Sgd => {
                    let x = self.primary[i];
                    self.primary[i] = x - lr * a * (x - c[i]);
                }
                NqmMethod::Ema => {
                    let x = self.primary[i];
                    let x = x - lr * a * (x - c[i]);
                    self.primary[i] = x;
                    self.shadow[i] = lam * x + (1.0 - lam) * self.shadow[i];
                }
                NqmMethod::SemaCoupled => {
                    let x = self.primary[i];
                    let probe = x - lr * a * (x - c[i]);
                    self.primary[i] = if switch { probe } else { lam * probe + (1.0 - lam) * x };
                }
                NqmMethod::SemaDecoupled => {
                    let x = self.primary[i];
                    let x = x - lr * a * (x - c[i]);
                    let s = lam * x + (1.0 - lam) * self.shadow[i];
                    self.shadow[i] = s;
                    self.primary[i] = if switch { s } else { x };
                }
            }
        }
    }

    fn check(&self, t: u64) -> Result<()> {
        let bad = self
            .primary
            .iter()
            .chain(self.shadow.iter())
            .any(|v| !(v.abs() <= DIVERGENCE_LIMIT));
        if bad {
            return Err(Error::Divergence {
                step: t,
                detail: format!("{} iterate exceeded {DIVERGENCE_LIMIT:e}", self.method.as_str()),
            });
        }
        Ok(())
    }
}

#[inline]
fn draw_optimum(rng: &mut RngState, sd: &[f64], c: &mut [f64]) {
    for (ci, s) in c.iter_mut().zip(sd) {
        *ci = s * rng.standard_normal();
    }
}

/// Runs one trajectory of `config.steps` iterations. Element 0 is the
/// starting point; element `t` is the method's output after iteration `t`.
pub fn simulate(config: &NqmConfig, method: NqmMethod, rng: &mut RngState) -> Result<Vec<Vec64>> {
    config.validate()?;
    let sd: Vec<f64> = config.sigma_diag.iter().map(|s| s.sqrt()).collect();
    let mut dyns = Dynamics::new(method, &config.initial_point());
    let mut c = vec![0.0; config.dim()];
    let mut out = Vec::with_capacity(config.steps as usize + 1);
    out.push(Vec64::from(dyns.output()));
    for t in 1..=config.steps {
        draw_optimum(rng, &sd, &mut c);
        dyns.step(config, &c, t, true);
        dyns.check(t)?;
        out.push(Vec64::from(dyns.output()));
    }
    Ok(out)
}

#[derive(Clone, Debug, Default)]
struct Moments {
    sum: Vec<KahanSum>,
    sum_sq: Vec<KahanSum>,
    count: u64,
}

impl Moments {
    fn new(n: usize) -> Self {
        Moments {
            sum: vec![KahanSum::default(); n],
            sum_sq: vec![KahanSum::default(); n],
            count: 0,
        }
    }

    fn merge(&mut self, other: &Moments) {
        for (a, b) in self.sum.iter_mut().zip(&other.sum) {
            a.merge(b);
        }
        for (a, b) in self.sum_sq.iter_mut().zip(&other.sum_sq) {
            a.merge(b);
        }
        self.count += other.count;
    }

    fn variance(&self) -> Vec64 {
        let n = self.count as f64;
        Vec64(
            self.sum
                .iter()
                .zip(&self.sum_sq)
                .map(|(s, s2)| {
                    let mean = s.value() / n;
                    (s2.value() / n - mean * mean).max(0.0)
                })
                .collect(),
        )
    }
}

fn trial_moments(config: &NqmConfig, method: NqmMethod, trial: u64) -> Result<Moments> {
    let mut rng = RngState::new(config.seed, trial);
    let sd: Vec<f64> = config.sigma_diag.iter().map(|s| s.sqrt()).collect();
    let mut dyns = Dynamics::new(method, &config.initial_point());
    let mut c = vec![0.0; config.dim()];
    let mut m = Moments::new(config.dim());
    for t in 1..=config.steps {
        draw_optimum(&mut rng, &sd, &mut c);
        dyns.step(config, &c, t, true);
        if t % 4096 == 0 {
            dyns.check(t)?;
        }
        if t > config.burn_in {
            for (i, x) in dyns.output().iter().enumerate() {
                m.sum[i].add(*x);
                m.sum_sq[i].add(x * x);
            }
            m.count += 1;
        }
    }
    dyns.check(config.steps)?;
    Ok(m)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VarianceEstimate {
    pub method: NqmMethod,
    pub analytic: Vec64,
    pub empirical: Vec64,
    pub rel_err: Vec64,
    /// Pooled post-burn-in samples per coordinate.
    pub samples: u64,
    /// `samples` divided by the slowest autocorrelation time.
    pub decorrelated_samples: f64,
}

pub const MIN_VARIANCE_SAMPLES: u64 = 10_000;

/// Pooled empirical variance of post-burn-in iterates across all trials.
/// Trials run in parallel; accumulators merge in trial order.
pub fn estimate_variance_mc(config: &NqmConfig, method: NqmMethod) -> Result<VarianceEstimate> {
    config.validate()?;
    let samples = config.post_burn_in_samples();
    if samples < MIN_VARIANCE_SAMPLES {
        return Err(Error::Usage(format!(
            "{samples} post-burn-in samples; need at least {MIN_VARIANCE_SAMPLES}"
        )));
    }
    let analytic = analytic_variances(config)?;
    let per_trial: Vec<Moments> = (0..config.trials)
        .into_par_iter()
        .map(|trial| trial_moments(config, method, trial))
        .collect::<Result<_>>()?;
    let mut pooled = Moments::new(config.dim());
    for m in &per_trial {
        pooled.merge(m);
    }
    let empirical = pooled.variance();
    let reference = match analytic.for_method(method) {
        Some(v) => v.clone(),
        // Without switches the decoupled shadow is exactly the EMA.
        None => analytic.ema.clone(),
    };
    let rel_err = Vec64(
        empirical
            .iter()
            .zip(reference.iter())
            .map(|(e, a)| {
                if *a == 0.0 {
                    if *e == 0.0 { 0.0 } else { f64::INFINITY }
                } else {
                    (e - a).abs() / a
                }
            })
            .collect(),
    );
    Ok(VarianceEstimate {
        method,
        analytic: reference,
        empirical,
        rel_err,
        samples,
        decorrelated_samples: samples as f64 / config.autocorrelation_time(method),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VarianceReport {
    pub analytic: AnalyticVariances,
    pub estimates: Vec<VarianceEstimate>,
    /// Per coordinate: analytic `sema < ema < sgd`.
    pub ordering_analytic: Vec<bool>,
    /// Per coordinate: the same ordering on the Monte Carlo estimates.
    pub ordering_empirical: Vec<bool>,
    pub max_rel_err: f64,
}

/// Analytic and Monte Carlo variances for SGD, EMA and coupled switch-EMA.
pub fn variance_report(config: &NqmConfig) -> Result<VarianceReport> {
    let analytic = analytic_variances(config)?;
    let estimates = [NqmMethod::Sgd, NqmMethod::Ema, NqmMethod::SemaCoupled]
        .iter()
        .map(|m| estimate_variance_mc(config, *m))
        .collect::<Result<Vec<_>>>()?;
    let ordering_empirical = (0..config.dim())
        .map(|i| {
            let (s, e, z) = (
                estimates[0].empirical[i],
                estimates[1].empirical[i],
                estimates[2].empirical[i],
            );
            z < e && e < s
        })
        .collect();
    let max_rel_err = estimates
        .iter()
        .flat_map(|e| e.rel_err.iter().cloned())
        .fold(0.0, f64::max);
    Ok(VarianceReport {
        ordering_analytic: analytic.ordering(),
        analytic,
        estimates,
        ordering_empirical,
        max_rel_err,
    })
}

/// `1/2 x^T A x`: excess loss over the optimum. The `1/2 tr(A Sigma)` offset
/// of the noisy loss cancels in every difference `sigma_T` uses.
pub fn excess_loss(a_diag: &[f64], x: &[f64]) -> f64 {
    0.5 * a_diag.iter().zip(x).map(|(a, v)| a * v * v).sum::<f64>()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SemaVariant {
    Coupled,
    Decoupled,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SigmaTOptions {
    pub sema: SemaVariant,
    /// When false the switch-EMA run never switches.
    pub switching: bool,
    /// Denominators below `floor * ema_loss_at_t` are rejected.
    pub floor: f64,
}

impl Default for SigmaTOptions {
    fn default() -> Self {
        SigmaTOptions {
            sema: SemaVariant::Coupled,
            switching: true,
            floor: 1e-6,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SigmaTEstimate {
    pub horizon: u64,
    pub ema_loss_at_t: f64,
    pub sema_loss_at_2t: f64,
    pub ema_loss_at_2t: f64,
    pub sigma_t: f64,
    pub std_err: f64,
    pub trials: u64,
}

pub const MIN_SIGMA_T_TRIALS: u64 = 100;

/// Ratio of the loss improvement from `T` to `2T` with one switch at `T`
/// against the improvement without it:
/// `(E L(ema_T) - E L(sema_2T)) / (E L(ema_T) - E L(ema_2T))`.
///
/// Both runs of a trial replay the same optimum samples. The standard error
/// comes from the delta method on the per-trial numerator and denominator.
pub fn estimate_sigma_t(config: &NqmConfig, opts: &SigmaTOptions) -> Result<SigmaTEstimate> {
    config.validate()?;
    let horizon = config.switch_interval.ok_or_else(|| {
        Error::config("nqm.switch_interval", "sigma_T needs a finite switch interval")
    })?;
    if 2 * horizon > config.steps {
        return Err(Error::Usage(format!(
            "2T = {} exceeds steps = {}",
            2 * horizon,
            config.steps
        )));
    }
    if config.trials < MIN_SIGMA_T_TRIALS {
        return Err(Error::Usage(format!(
            "sigma_T needs at least {MIN_SIGMA_T_TRIALS} trials, got {}",
            config.trials
        )));
    }
    let sema_method = match opts.sema {
        SemaVariant::Coupled => NqmMethod::SemaCoupled,
        SemaVariant::Decoupled => NqmMethod::SemaDecoupled,
    };
    let sd: Vec<f64> = config.sigma_diag.iter().map(|s| s.sqrt()).collect();
    let init = config.initial_point();

    let per_trial: Vec<[f64; 3]> = (0..config.trials)
        .into_par_iter()
        .map(|trial| -> Result<[f64; 3]> {
            let mut rng = RngState::new(config.seed, trial);
            let mut ema = Dynamics::new(NqmMethod::Ema, &init);
            let mut sema = Dynamics::new(sema_method, &init);
            let mut c = vec![0.0; config.dim()];
            let mut ema_t = 0.0;
            for t in 1..=2 * horizon {
                draw_optimum(&mut rng, &sd, &mut c);
                ema.step(config, &c, t, false);
                sema.step(config, &c, t, opts.switching);
                if t == horizon {
                    ema_t = excess_loss(&config.a_diag, ema.output());
                }
            }
            ema.check(2 * horizon)?;
            sema.check(2 * horizon)?;
            Ok([
                ema_t,
                excess_loss(&config.a_diag, sema.output()),
                excess_loss(&config.a_diag, ema.output()),
            ])
        })
        .collect::<Result<_>>()?;

    let n = per_trial.len() as f64;
    let mut sums = [KahanSum::default(); 3];
    for row in &per_trial {
        for (s, v) in sums.iter_mut().zip(row) {
            s.add(*v);
        }
    }
    let [ema_loss_at_t, sema_loss_at_2t, ema_loss_at_2t] = sums.map(|s| s.value() / n);
    let num = ema_loss_at_t - sema_loss_at_2t;
    let den = ema_loss_at_t - ema_loss_at_2t;
    if !(den.abs() > opts.floor * ema_loss_at_t.abs()) || den == 0.0 {
        return Err(Error::IllConditioned(format!(
            "denominator {den:e} is below the floor ({} x E L(ema_T) = {:e})",
            opts.floor,
            opts.floor * ema_loss_at_t
        )));
    }
    let sigma_t = num / den;
    let mut resid = KahanSum::default();
    for row in &per_trial {
        let (ni, di) = (row[0] - row[1], row[0] - row[2]);
        let r = (ni - num) - sigma_t * (di - den);
        resid.add(r * r);
    }
    let var_r = if n > 1.0 { resid.value() / (n - 1.0) } else { 0.0 };
    let std_err = (var_r / n).sqrt() / den.abs();
    Ok(SigmaTEstimate {
        horizon,
        ema_loss_at_t,
        sema_loss_at_2t,
        ema_loss_at_2t,
        sigma_t,
        std_err,
        trials: config.trials,
    })
}

/// Setting used by the command-line default and the acceptance check:
/// one coordinate, `a = 1`, `Sigma = 1`, `lr = 0.05`, `lambda = 0.5`,
/// `T = 50`, start at 1, 40k trials.
pub fn default_sigma_t_config() -> NqmConfig {
    NqmConfig {
        a_diag: Vec64(vec![1.0]),
        sigma_diag: Vec64(vec![1.0]),
        lr: 0.05,
        decay: 0.5,
        switch_interval: Some(50),
        steps: 100,
        burn_in: 0,
        trials: 40_000,
        seed: 0,
        init: Vec64(vec![1.0]),
    }
}
