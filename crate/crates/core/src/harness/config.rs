//! Experiment configuration: one JSON document per experiment.
//!
//! A config file only needs the fields it changes; it is deep-merged onto
//! the defaults for the subcommand's task before parsing. `--set a.b=v`
//! overrides then apply to the merged document by dotted path.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::averaging::{AveragerConfig, Method, SemaMode};
use crate::error::{Error, Result};
use crate::landscape::Normalization;
use crate::mlp::MlpConfig;
use crate::nqm::{default_sigma_t_config, NqmConfig, SigmaTOptions, VarianceBudget};
use crate::optim::OptimizerConfig;
use crate::toy::{ToySpec, ToyTrainConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Toy,
    Nqm,
    Landscape,
    Sweep,
}

impl Task {
    pub fn as_str(self) -> &'static str {
        match self {
            Task::Toy => "toy",
            Task::Nqm => "nqm",
            Task::Landscape => "landscape",
            Task::Sweep => "sweep",
        }
    }
}

/// Averager settings with the switch interval in epochs. Converted to
/// iterations once the number of batches per epoch is known.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AveragerSpec {
    pub method: Method,
    /// Weight on the old average.
    pub decay: f64,
    /// `null` never switches. Fractions are floored to whole iterations.
    pub switch_epochs: Option<f64>,
    pub sema_mode: SemaMode,
    pub swa_snapshot_count: usize,
    pub la_alpha: f64,
    pub la_k: u64,
}

impl Default for AveragerSpec {
    fn default() -> Self {
        AveragerSpec {
            method: Method::Sema,
            decay: 0.995,
            switch_epochs: Some(40.0),
            sema_mode: SemaMode::Decoupled,
            swa_snapshot_count: 5,
            la_alpha: 0.5,
            la_k: 100,
        }
    }
}

/// `floor(epochs * iters_per_epoch)`, at least one iteration.
pub fn switch_iters(switch_epochs: f64, iters_per_epoch: u64) -> u64 {
    ((switch_epochs * iters_per_epoch as f64).floor() as u64).max(1)
}

impl AveragerSpec {
    pub fn validate(&self) -> Result<()> {
        if let Some(e) = self.switch_epochs {
            if !(e > 0.0 && e.is_finite()) {
                return Err(Error::config("averager.switch_epochs", "must be > 0 or null"));
            }
        }
        self.resolve(1, 1).validate()
    }

    pub fn resolve(&self, iters_per_epoch: u64, total_iters: u64) -> AveragerConfig {
        let base = AveragerConfig {
            method: self.method,
            decay: self.decay,
            switch_interval: self.switch_epochs.map(|e| switch_iters(e, iters_per_epoch)),
            sema_mode: self.sema_mode,
            swa_snapshot_count: self.swa_snapshot_count,
            la_alpha: self.la_alpha,
            la_k: self.la_k,
            ..AveragerConfig::default()
        };
        if self.method == Method::Swa {
            base.with_swa_budget(total_iters, iters_per_epoch)
        } else {
            base
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSpec {
    pub epochs: u64,
    /// `null` trains full-batch.
    pub batch_size: Option<usize>,
    pub grid_resolution: usize,
    pub width_band: f64,
    pub ece_bins: usize,
    pub boundary_every: u64,
    pub checkpoint_every: u64,
}

impl Default for TrainSpec {
    fn default() -> Self {
        let t = ToyTrainConfig::default();
        TrainSpec {
            epochs: t.epochs,
            batch_size: t.batch_size,
            grid_resolution: t.grid_resolution,
            width_band: t.width_band,
            ece_bins: t.ece_bins,
            boundary_every: t.boundary_every,
            checkpoint_every: t.checkpoint_every,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NqmSpec {
    /// Grid axes; each `(lr, decay)` pair is one run over all curvatures.
    pub lrs: Vec<f64>,
    /// Weight on the new iterate.
    pub decays: Vec<f64>,
    pub curvatures: Vec<f64>,
    pub sigma: f64,
    pub budget: VarianceBudget,
    pub sigma_t: NqmConfig,
    pub sigma_t_options: SigmaTOptions,
}

impl Default for NqmSpec {
    fn default() -> Self {
        NqmSpec {
            lrs: vec![0.01, 0.05, 0.1],
            decays: vec![0.1, 0.5, 0.9],
            curvatures: vec![0.5, 1.0, 2.0],
            sigma: 1.0,
            budget: VarianceBudget::default(),
            sigma_t: default_sigma_t_config(),
            sigma_t_options: SigmaTOptions::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlaneKind {
    /// Top two principal directions of the reference trajectory.
    #[default]
    Pca,
    /// Two normalized random directions around the center; the same seed
    /// gives comparable planes across methods.
    Random,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanRange {
    pub lo: f64,
    pub hi: f64,
    pub points: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LandscapeSpec {
    /// Methods trained when no checkpoint files are given.
    pub methods: Vec<Method>,
    /// Whose final weights center the shared 2D plane.
    pub reference: Method,
    pub normalization: Normalization,
    pub plane: PlaneKind,
    pub range_1d: ScanRange,
    pub range_2d: ScanRange,
}

impl Default for LandscapeSpec {
    fn default() -> Self {
        LandscapeSpec {
            methods: vec![Method::None, Method::Ema, Method::Sema],
            reference: Method::Sema,
            normalization: Normalization::LayerwiseNorm,
            plane: PlaneKind::Pca,
            range_1d: ScanRange {
                lo: -1.0,
                hi: 1.0,
                points: 51,
            },
            range_2d: ScanRange {
                lo: -1.0,
                hi: 1.0,
                points: 41,
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub decays: Vec<f64>,
    pub switch_epochs: Vec<f64>,
    /// Upper bound on cells x seeds.
    pub cap: usize,
}

impl Default for SweepSpec {
    fn default() -> Self {
        SweepSpec {
            decays: vec![0.9, 0.99, 0.999, 0.9999],
            switch_epochs: vec![0.5, 1.0, 2.0, 5.0],
            cap: 200,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub task: Task,
    pub model: MlpConfig,
    pub optimizer: OptimizerConfig,
    pub averager: AveragerSpec,
    pub dataset: ToySpec,
    pub train: TrainSpec,
    pub nqm: NqmSpec,
    pub landscape: LandscapeSpec,
    pub sweep: SweepSpec,
    pub seeds: Vec<u64>,
    /// Not part of the config hash.
    pub output_dir: Option<PathBuf>,
    /// Also write SVG renderings next to the CSV files.
    pub svg: bool,
}

impl ExperimentConfig {
    pub fn for_task(task: Task) -> Self {
        let seeds = match task {
            Task::Toy | Task::Sweep => vec![0, 1, 2, 3, 4],
            Task::Nqm | Task::Landscape => vec![0],
        };
        ExperimentConfig {
            task,
            model: MlpConfig::default(),
            optimizer: ToyTrainConfig::default().optimizer,
            averager: AveragerSpec::default(),
            dataset: ToySpec::default(),
            train: TrainSpec::default(),
            nqm: NqmSpec::default(),
            landscape: LandscapeSpec::default(),
            sweep: SweepSpec::default(),
            seeds,
            output_dir: None,
            svg: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.averager.validate()?;
        self.dataset.validate()?;
        if self.seeds.is_empty() {
            return Err(Error::config("seeds", "need at least one seed"));
        }
        if self.train.epochs == 0 {
            return Err(Error::config("train.epochs", "need at least one epoch"));
        }
        if self.train.batch_size == Some(0) {
            return Err(Error::config("train.batch_size", "batch size must be positive"));
        }
        self.optimizer.build(0).map_err(|e| match e {
            Error::Config { .. } => e,
            other => Error::config("optimizer", other.to_string()),
        })?;
        Ok(())
    }

    /// Iterations per epoch for the configured dataset and batch size.
    pub fn iters_per_epoch(&self) -> u64 {
        let n = self.dataset.n_labeled;
        match self.train.batch_size {
            Some(b) if b > 0 && b < n => n.div_ceil(b) as u64,
            _ => 1,
        }
    }

    pub fn toy_train(&self) -> ToyTrainConfig {
        ToyTrainConfig {
            model: self.model.clone(),
            optimizer: self.optimizer.clone(),
            epochs: self.train.epochs,
            batch_size: self.train.batch_size,
            grid_resolution: self.train.grid_resolution,
            width_band: self.train.width_band,
            ece_bins: self.train.ece_bins,
            boundary_every: self.train.boundary_every,
            checkpoint_every: self.train.checkpoint_every,
        }
    }

    pub fn averager_config(&self) -> AveragerConfig {
        let ipe = self.iters_per_epoch();
        self.averager.resolve(ipe, ipe * self.train.epochs)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// SHA-256 over the compact JSON form with `output_dir` cleared.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output_dir = None;
        let json = serde_json::to_string(&c).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    /// Parses a full document, reporting the failing field path.
    pub fn from_value(value: Value) -> Result<Self> {
        serde_path_to_error::deserialize(value).map_err(|e| {
            let path = e.path().to_string();
            Error::config(path, e.into_inner().to_string())
        })
    }
}

/// Recursive object merge. An object whose `kind` tag differs from the base
/// replaces it wholesale, so switching optimizer kinds drops stale fields.
pub fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            let retagged = matches!((b.get("kind"), p.get("kind")), (Some(x), Some(y)) if x != y);
            if retagged {
                *b = p;
                return;
            }
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Applies `path=value`. The value is parsed as JSON when possible and
/// taken as a plain string otherwise.
pub fn apply_override(doc: &mut Value, assignment: &str) -> Result<()> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::config(assignment, "override must look like key=value"))?;
    let path = path.trim();
    if path.is_empty() {
        return Err(Error::config(assignment, "empty override key"));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut slot = doc;
    for seg in path.split('.') {
        slot = match slot {
            Value::Object(map) => map
                .get_mut(seg)
                .ok_or_else(|| Error::config(path, format!("unknown field `{seg}`")))?,
            Value::Array(items) => {
                let i: usize = seg
                    .parse()
                    .map_err(|_| Error::config(path, format!("`{seg}` is not an array index")))?;
                let len = items.len();
                items
                    .get_mut(i)
                    .ok_or_else(|| Error::config(path, format!("index {i} out of range (len {len})")))?
            }
            _ => return Err(Error::config(path, format!("cannot descend into `{seg}`"))),
        };
    }
    if let (Value::Object(_), Value::Object(_)) = (&*slot, &value) {
        merge(slot, value);
    } else {
        *slot = value;
    }
    Ok(())
}

/// Builds the effective config for `task`: defaults, then the file, then
/// `--set` overrides, then `--seed` values if any were given.
pub fn load_config(
    task: Task,
    path: Option<&Path>,
    overrides: &[String],
    seeds: &[u64],
) -> Result<ExperimentConfig> {
    let mut doc = serde_json::to_value(ExperimentConfig::for_task(task))?;
    if let Some(p) = path {
        let text = std::fs::read_to_string(p)
            .map_err(|e| Error::config(p.display().to_string(), e.to_string()))?;
        let file: Value = serde_json::from_str(&text)
            .map_err(|e| Error::config(p.display().to_string(), e.to_string()))?;
        if !file.is_object() {
            return Err(Error::config(p.display().to_string(), "config must be a JSON object"));
        }
        merge(&mut doc, file);
    }
    for o in overrides {
        apply_override(&mut doc, o)?;
    }
    if !seeds.is_empty() {
        doc["seeds"] = serde_json::to_value(seeds)?;
    }
    let cfg = ExperimentConfig::from_value(doc)?;
    if cfg.task != task {
        return Err(Error::config(
            "task",
            format!("config is for `{}` but the command is `{}`", cfg.task.as_str(), task.as_str()),
        ));
    }
    cfg.validate()?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn round_trip_is_exact() {
        for task in [Task::Toy, Task::Nqm, Task::Landscape, Task::Sweep] {
            let c = ExperimentConfig::for_task(task);
            let s = c.to_json();
            let back: ExperimentConfig = serde_json::from_str(&s).unwrap();
            assert_eq!(back, c);
            assert_eq!(back.to_json(), s);
            assert_eq!(back.hash(), c.hash());
        }
    }

    #[test]
    fn hash_ignores_output_dir() {
        let a = ExperimentConfig::for_task(Task::Toy);
        let mut b = a.clone();
        b.output_dir = Some("elsewhere".into());
        assert_eq!(a.hash(), b.hash());
        b.averager.decay = 0.5;
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn overrides_by_path() {
        let mut doc = serde_json::to_value(ExperimentConfig::for_task(Task::Toy)).unwrap();
        apply_override(&mut doc, "averager.decay=0.5").unwrap();
        apply_override(&mut doc, "averager.method=ema").unwrap();
        apply_override(&mut doc, "model.layer_sizes.1=8").unwrap();
        apply_override(&mut doc, "averager.switch_epochs=null").unwrap();
        let c = ExperimentConfig::from_value(doc.clone()).unwrap();
        assert_eq!(c.averager.decay, 0.5);
        assert_eq!(c.averager.method, Method::Ema);
        assert_eq!(c.model.layer_sizes, vec![2, 8, 2]);
        assert_eq!(c.averager.switch_epochs, None);
        let err = apply_override(&mut doc, "averager.nope=1").unwrap_err();
        assert!(matches!(err, Error::Config { ref path, .. } if path == "averager.nope"));
        assert!(apply_override(&mut doc, "no_equals_sign").is_err());
    }

    #[test]
    fn bad_field_reports_path() {
        let mut doc = serde_json::to_value(ExperimentConfig::for_task(Task::Toy)).unwrap();
        merge(&mut doc, json!({"train": {"epochs": "many"}}));
        match ExperimentConfig::from_value(doc).unwrap_err() {
            Error::Config { path, .. } => assert_eq!(path, "train.epochs"),
            e => panic!("{e}"),
        }
    }

    #[test]
    fn retagged_optimizer_replaces() {
        let mut doc = serde_json::to_value(ExperimentConfig::for_task(Task::Toy)).unwrap();
        merge(&mut doc, json!({"optimizer": {"kind": "adam", "lr": 0.001}}));
        let c = ExperimentConfig::from_value(doc).unwrap();
        assert!(matches!(c.optimizer, OptimizerConfig::Adam { lr, .. } if lr == 0.001));
    }

    #[test]
    fn fractional_switch_interval_floors() {
        assert_eq!(switch_iters(0.5, 5), 2);
        assert_eq!(switch_iters(2.0, 5), 10);
        assert_eq!(switch_iters(0.5, 1), 1);
        let mut c = ExperimentConfig::for_task(Task::Sweep);
        c.averager.switch_epochs = Some(0.5);
        assert_eq!(c.iters_per_epoch(), 5);
        assert_eq!(c.averager_config().switch_interval, Some(2));
    }
}
