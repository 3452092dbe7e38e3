//! Synthetic 2D classification tasks and decision-boundary metrics.
//!
//! Metrics:
//! - accuracy on the test set;
//! - boundary width: fraction of an evaluation grid where `|p1 - 0.5| < delta`;
//! - ECE over equal-width confidence bins on `[0, 1]`, using the top-class
//!   probability as confidence.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::averaging::AveragerConfig;
use crate::error::{check_len, Error, Result};
use crate::mlp::{self, Batch, MlpConfig, MlpParams};
use crate::numerics::{Mat64, ParamVector, RngState};
use crate::optim::OptimizerConfig;
use crate::train::{train_loop, TrainOutcome};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToyKind {
    Circles,
    Moons,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToySpec {
    pub kind: ToyKind,
    pub n_labeled: usize,
    pub n_test: usize,
    /// Standard deviation of isotropic Gaussian jitter; `None` uses the
    /// per-kind default (0.2 circles, 0.3 moons).
    pub noise: Option<f64>,
    /// Inner/outer radius ratio for circles.
    pub factor: f64,
    pub seed: u64,
}

impl Default for ToySpec {
    fn default() -> Self {
        ToySpec::circles(0)
    }
}

impl ToySpec {
    pub fn circles(seed: u64) -> Self {
        ToySpec {
            kind: ToyKind::Circles,
            n_labeled: 50,
            n_test: 500,
            noise: None,
            factor: 0.5,
            seed,
        }
    }

    pub fn moons(seed: u64) -> Self {
        ToySpec {
            kind: ToyKind::Moons,
            n_labeled: 50,
            n_test: 500,
            noise: None,
            factor: 0.5,
            seed,
        }
    }

    pub fn noise(&self) -> f64 {
        self.noise.unwrap_or(match self.kind {
            ToyKind::Circles => 0.2,
            ToyKind::Moons => 0.3,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_labeled < 2 {
            return Err(Error::config("dataset.n_labeled", "need at least 2 labeled samples"));
        }
        if self.n_test < 1 {
            return Err(Error::config("dataset.n_test", "need at least 1 test sample"));
        }
        if !(self.noise() >= 0.0) {
            return Err(Error::config("dataset.noise", "noise must be >= 0"));
        }
        if !(self.factor > 0.0 && self.factor < 1.0) {
            return Err(Error::config("dataset.factor", "radius ratio must lie in (0, 1)"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ToyData {
    pub labeled: Batch,
    pub test: Batch,
    pub bounds: BoundingBox,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl BoundingBox {
    fn of(points: &[&Mat64]) -> Self {
        let mut b = BoundingBox {
            x_min: f64::INFINITY,
            x_max: f64::NEG_INFINITY,
            y_min: f64::INFINITY,
            y_max: f64::NEG_INFINITY,
        };
        for m in points {
            for r in 0..m.rows() {
                let (x, y) = (m.get(r, 0), m.get(r, 1));
                b.x_min = b.x_min.min(x);
                b.x_max = b.x_max.max(x);
                b.y_min = b.y_min.min(y);
                b.y_max = b.y_max.max(y);
            }
        }
        b
    }

    /// Grows each side by `frac` of the extent along that axis.
    pub fn padded(&self, frac: f64) -> Self {
        let (dx, dy) = (self.x_max - self.x_min, self.y_max - self.y_min);
        BoundingBox {
            x_min: self.x_min - frac * dx,
            x_max: self.x_max + frac * dx,
            y_min: self.y_min - frac * dy,
            y_max: self.y_max + frac * dy,
        }
    }
}

fn sample_points(spec: &ToySpec, n: usize, rng: &mut RngState) -> (Vec<f64>, Vec<usize>) {
    let n0 = n / 2;
    let noise = spec.noise();
    let mut xs = Vec::with_capacity(2 * n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let class = usize::from(i >= n0);
        let (x, y) = match spec.kind {
            ToyKind::Circles => {
                let theta = rng.uniform_range(0.0, 2.0 * PI);
                let r = if class == 0 { 1.0 } else { spec.factor };
                (r * theta.cos(), r * theta.sin())
            }
            ToyKind::Moons => {
                let theta = rng.uniform_range(0.0, PI);
                if class == 0 {
                    (theta.cos(), theta.sin())
                } else {
                    (1.0 - theta.cos(), 0.5 - theta.sin())
                }
            }
        };
        let jx = noise * rng.standard_normal();
        let jy = noise * rng.standard_normal();
        xs.push(x + jx);
        xs.push(y + jy);
        labels.push(class);
    }
    (xs, labels)
}

/// Labeled points come from stream 0 of the seed, test points from stream 1.
pub fn gen_dataset(spec: &ToySpec) -> Result<ToyData> {
    spec.validate()?;
    let (xl, yl) = sample_points(spec, spec.n_labeled, &mut RngState::new(spec.seed, 0));
    let (xt, yt) = sample_points(spec, spec.n_test, &mut RngState::new(spec.seed, 1));
    let labeled = Batch::classification(Mat64::new(spec.n_labeled, 2, xl)?, yl)?;
    let test = Batch::classification(Mat64::new(spec.n_test, 2, xt)?, yt)?;
    let bounds = BoundingBox::of(&[&labeled.inputs, &test.inputs]);
    Ok(ToyData {
        labeled,
        test,
        bounds,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub bounds: BoundingBox,
    pub resolution: usize,
}

impl GridSpec {
    /// Data bounding box padded by 20%, `resolution` points per axis.
    pub fn around(data: &ToyData, resolution: usize) -> Self {
        GridSpec {
            bounds: data.bounds.padded(0.2),
            resolution,
        }
    }

    pub fn points(&self) -> Result<Mat64> {
        let n = self.resolution;
        if n < 1 {
            return Err(Error::config("metrics.grid_resolution", "grid must have at least one point"));
        }
        let axis = |lo: f64, hi: f64| -> Vec<f64> {
            if n == 1 {
                vec![(lo + hi) / 2.0]
            } else {
                (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
            }
        };
        let xs = axis(self.bounds.x_min, self.bounds.x_max);
        let ys = axis(self.bounds.y_min, self.bounds.y_max);
        let mut data = Vec::with_capacity(2 * n * n);
        for y in &ys {
            for x in &xs {
                data.push(*x);
                data.push(*y);
            }
        }
        Mat64::new(n * n, 2, data)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundaryMetrics {
    /// Mean loss on the test set.
    pub loss: f64,
    pub accuracy: f64,
    /// Only computed on epochs where the grid is evaluated.
    pub boundary_width: Option<f64>,
    pub ece: f64,
    pub grid_resolution: usize,
}

/// Binned `sum_b (n_b / N) |acc_b - conf_b|` with confidence = top-class probability.
pub fn expected_calibration_error(probs: &Mat64, labels: &[usize], bins: usize) -> Result<f64> {
    if bins < 1 {
        return Err(Error::config("metrics.ece_bins", "need at least one bin"));
    }
    check_len("ece labels", probs.rows(), labels.len())?;
    let mut count = vec![0usize; bins];
    let mut conf_sum = vec![0.0; bins];
    let mut hit_sum = vec![0.0; bins];
    for (r, &label) in labels.iter().enumerate() {
        let row = probs.row(r);
        let pred = mlp::argmax(row);
        let conf = row[pred];
        let b = ((conf * bins as f64) as usize).min(bins - 1);
        count[b] += 1;
        conf_sum[b] += conf;
        hit_sum[b] += if pred == label { 1.0 } else { 0.0 };
    }
    let n = labels.len() as f64;
    Ok((0..bins)
        .filter(|b| count[*b] > 0)
        .map(|b| {
            let c = count[b] as f64;
            (c / n) * (hit_sum[b] / c - conf_sum[b] / c).abs()
        })
        .sum())
}

/// Fraction of rows with `|p1 - 0.5| < delta`.
pub fn band_fraction(probs: &Mat64, delta: f64) -> f64 {
    let inside = (0..probs.rows())
        .filter(|r| (probs.get(*r, 1) - 0.5).abs() < delta)
        .count();
    inside as f64 / probs.rows().max(1) as f64
}

pub fn boundary_width(params: &MlpParams, grid: &GridSpec, delta: f64) -> Result<f64> {
    let probs = mlp::predict_proba(params, &grid.points()?)?;
    Ok(band_fraction(&probs, delta))
}

fn check_binary(params: &MlpParams) -> Result<()> {
    if params.config().output_dim() != 2 || !params.config().is_classifier() {
        return Err(Error::Usage(
            "boundary metrics need a 2-class softmax classifier".into(),
        ));
    }
    Ok(())
}

/// Accuracy and ECE on `test`; boundary width over `grid` when given.
pub fn boundary_metrics(
    params: &MlpParams,
    test: &Batch,
    grid: Option<&GridSpec>,
    width_band: f64,
    ece_bins: usize,
) -> Result<BoundaryMetrics> {
    check_binary(params)?;
    let labels = test
        .labels()
        .ok_or_else(|| Error::Usage("boundary metrics need class labels".into()))?;
    let (loss, logits) = mlp::forward(params, test)?;
    let probs = mlp::softmax_rows(&logits);
    let ece = expected_calibration_error(&probs, labels, ece_bins)?;
    let boundary_width = grid.map(|g| boundary_width(params, g, width_band)).transpose()?;
    Ok(BoundaryMetrics {
        loss,
        accuracy: mlp::accuracy(&logits, labels),
        boundary_width,
        ece,
        grid_resolution: grid.map_or(0, |g| g.resolution),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToyTrainConfig {
    pub model: MlpConfig,
    pub optimizer: OptimizerConfig,
    pub epochs: u64,
    /// `None` trains full-batch, so one epoch is one step.
    pub batch_size: Option<usize>,
    pub grid_resolution: usize,
    pub width_band: f64,
    pub ece_bins: usize,
    /// Boundary width is computed every this many epochs and at the end.
    pub boundary_every: u64,
    /// Parameter checkpoints are kept every this many epochs and at the end.
    pub checkpoint_every: u64,
}

impl Default for ToyTrainConfig {
    fn default() -> Self {
        ToyTrainConfig {
            model: MlpConfig::default(),
            optimizer: OptimizerConfig::Sgd {
                lr: 0.1,
                momentum: 0.9,
                weight_decay: 0.0,
            },
            epochs: 300,
            batch_size: Some(10),
            grid_resolution: 201,
            width_band: 0.1,
            ece_bins: 10,
            boundary_every: 100,
            checkpoint_every: 50,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToyEpoch {
    pub epoch: u64,
    pub train_loss: f64,
    pub fast: BoundaryMetrics,
    pub averaged: BoundaryMetrics,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToyCheckpoint {
    pub epoch: u64,
    pub fast: ParamVector,
    pub averaged: ParamVector,
}

#[derive(Clone, Debug)]
pub struct ToyRun {
    pub epochs: Vec<ToyEpoch>,
    pub checkpoints: Vec<ToyCheckpoint>,
    pub data: ToyData,
    pub final_fast: MlpParams,
    pub final_averaged: MlpParams,
}

impl ToyRun {
    pub fn final_metrics(&self) -> &BoundaryMetrics {
        &self.epochs.last().expect("at least one epoch").averaged
    }
}

/// Splits `batch` into fixed chunks after one seeded shuffle (stream 3).
/// The order is reused every epoch.
pub fn minibatches(batch: &Batch, size: Option<usize>, seed: u64) -> Result<Vec<Batch>> {
    let n = batch.len();
    let size = match size {
        None => return Ok(vec![batch.clone()]),
        Some(0) => return Err(Error::config("train.batch_size", "batch size must be positive")),
        Some(s) if s >= n => return Ok(vec![batch.clone()]),
        Some(s) => s,
    };
    let labels = batch
        .labels()
        .ok_or_else(|| Error::Usage("minibatching needs class labels".into()))?;
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = RngState::new(seed, 3);
    for i in (1..n).rev() {
        let j = ((rng.uniform() * (i + 1) as f64) as usize).min(i);
        order.swap(i, j);
    }
    order
        .chunks(size)
        .map(|idx| {
            let cols = batch.inputs.cols();
            let mut xs = Vec::with_capacity(idx.len() * cols);
            for &r in idx {
                xs.extend_from_slice(batch.inputs.row(r));
            }
            Batch::classification(Mat64::new(idx.len(), cols, xs)?, idx.iter().map(|&r| labels[r]).collect())
        })
        .collect()
}

/// Trains on the labeled points. The model is initialised from
/// stream 2 of the dataset seed.
pub fn run_toy_experiment(
    spec: &ToySpec,
    train: &ToyTrainConfig,
    averager: &AveragerConfig,
) -> Result<ToyRun> {
    train.model.validate()?;
    if train.epochs == 0 {
        return Err(Error::config("train.epochs", "need at least one epoch"));
    }
    let data = gen_dataset(spec)?;
    let init = MlpParams::init(train.model.clone(), &mut RngState::new(spec.seed, 2));
    check_binary(&init)?;
    let grid = GridSpec::around(&data, train.grid_resolution);
    let mut optimizer = train.optimizer.build(init.flat().len())?;
    let avg = crate::averaging::Averager::init(averager.clone(), init.flat())?;
    let batches = minibatches(&data.labeled, train.batch_size, spec.seed)?;
    let mut checkpoints = Vec::new();
    let outcome: TrainOutcome<(BoundaryMetrics, BoundaryMetrics)> = train_loop(
        init,
        &batches,
        train.epochs,
        &mut optimizer,
        avg,
        |epoch, _step, fast, averaged| {
            let last = epoch == train.epochs;
            let with_grid = (last || epoch % train.boundary_every.max(1) == 0).then_some(&grid);
            if last || epoch % train.checkpoint_every.max(1) == 0 {
                checkpoints.push(ToyCheckpoint {
                    epoch,
                    fast: fast.flatten(),
                    averaged: averaged.flatten(),
                });
            }
            Ok((
                boundary_metrics(fast, &data.test, with_grid, train.width_band, train.ece_bins)?,
                boundary_metrics(averaged, &data.test, with_grid, train.width_band, train.ece_bins)?,
            ))
        },
    )?;
    let final_averaged = outcome.eval_params();
    let epochs = outcome
        .epochs
        .into_iter()
        .map(|log| ToyEpoch {
            epoch: log.epoch,
            train_loss: log.train_loss,
            fast: log.eval.0,
            averaged: log.eval.1,
        })
        .collect();
    Ok(ToyRun {
        epochs,
        checkpoints,
        data,
        final_fast: outcome.fast,
        final_averaged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mlp::{Activation, LossKind};
    use crate::numerics::Vec64;

    #[test]
    fn circles_split_and_size() {
        let d = gen_dataset(&ToySpec::circles(3)).unwrap();
        let labels = d.labeled.labels().unwrap();
        assert_eq!(labels.iter().filter(|c| **c == 0).count(), 25);
        assert_eq!(labels.iter().filter(|c| **c == 1).count(), 25);
        assert_eq!(d.test.len(), 500);
    }

    #[test]
    fn odd_sizes_balance_within_one() {
        let mut s = ToySpec::moons(1);
        s.n_labeled = 51;
        let d = gen_dataset(&s).unwrap();
        let ones = d.labeled.labels().unwrap().iter().filter(|c| **c == 1).count();
        assert!((ones as i64 - 25).abs() <= 1);
    }

    #[test]
    fn noiseless_circles_are_separated() {
        let mut s = ToySpec::circles(5);
        s.noise = Some(0.0);
        let d = gen_dataset(&s).unwrap();
        let radius = |m: &Mat64, r: usize| m.get(r, 0).hypot(m.get(r, 1));
        let (mut inner_max, mut outer_min) = (0.0_f64, f64::INFINITY);
        for b in [&d.labeled, &d.test] {
            for (r, c) in b.labels().unwrap().iter().enumerate() {
                if *c == 1 {
                    inner_max = inner_max.max(radius(&b.inputs, r));
                } else {
                    outer_min = outer_min.min(radius(&b.inputs, r));
                }
            }
        }
        assert!(inner_max < outer_min);
    }

    #[test]
    fn dataset_is_seeded() {
        assert_eq!(gen_dataset(&ToySpec::moons(9)).unwrap(), gen_dataset(&ToySpec::moons(9)).unwrap());
        assert!(ToySpec { n_labeled: 1, ..ToySpec::circles(0) }.validate().is_err());
    }

    fn linear_model(scale: f64) -> MlpParams {
        // logits = (0, scale * x1)
        let cfg = MlpConfig::new(vec![2, 2], Activation::Tanh, LossKind::SoftmaxCe).unwrap();
        MlpParams::unflatten(cfg, Vec64(vec![0.0, 0.0, scale, 0.0, 0.0, 0.0])).unwrap()
    }

    fn unit_grid(resolution: usize) -> GridSpec {
        GridSpec {
            bounds: BoundingBox {
                x_min: -1.0,
                x_max: 1.0,
                y_min: -1.0,
                y_max: 1.0,
            },
            resolution,
        }
    }

    #[test]
    fn constant_model_fills_band() {
        let p = MlpParams::zeros(MlpConfig::default());
        assert_eq!(boundary_width(&p, &unit_grid(21), 0.1).unwrap(), 1.0);
    }

    #[test]
    fn linear_logit_band_matches_area() {
        // |sigmoid(10 x) - 0.5| < 0.1  <=>  |x| < ln(1.5) / 10
        let half = 1.5f64.ln() / 10.0;
        let exact = half; // band width 2*half over an axis of length 2
        let w = boundary_width(&linear_model(10.0), &unit_grid(2001), 0.1).unwrap();
        assert!((w - exact).abs() < 2.0 / 2000.0, "{w} vs {exact}");
    }

    #[test]
    fn sharper_logits_shrink_band() {
        let grid = unit_grid(101);
        let widths: Vec<f64> = [1.0, 2.0, 4.0]
            .iter()
            .map(|s| boundary_width(&linear_model(3.0 * s), &grid, 0.1).unwrap())
            .collect();
        assert!(widths[0] >= widths[1] && widths[1] >= widths[2]);
    }

    #[test]
    fn confident_correct_model_is_calibrated() {
        let probs = Mat64::new(3, 2, vec![1.0, 0.0, 0.0, 1.0, 1.0, 0.0]).unwrap();
        assert_eq!(expected_calibration_error(&probs, &[0, 1, 0], 10).unwrap(), 0.0);
        assert!(expected_calibration_error(&probs, &[0, 1, 0], 0).is_err());
    }

    #[test]
    fn ece_hand_example() {
        // one bin [0.7,0.8): conf 0.75 twice, one correct => |0.5 - 0.75| = 0.25
        let probs = Mat64::new(2, 2, vec![0.75, 0.25, 0.25, 0.75]).unwrap();
        let e = expected_calibration_error(&probs, &[0, 0], 10).unwrap();
        assert!((e - 0.25).abs() < 1e-15);
    }

    #[test]
    fn none_equals_degenerate_sema() {
        let train = ToyTrainConfig {
            epochs: 60,
            grid_resolution: 21,
            boundary_every: 20,
            ..ToyTrainConfig::default()
        };
        let spec = ToySpec::circles(1);
        let base = run_toy_experiment(&spec, &train, &AveragerConfig::default()).unwrap();
        let sema = run_toy_experiment(&spec, &train, &AveragerConfig::sema(0.0, Some(1))).unwrap();
        assert_eq!(base.epochs, sema.epochs);
        let again = run_toy_experiment(&spec, &train, &AveragerConfig::sema(0.0, Some(1))).unwrap();
        assert_eq!(again.epochs, sema.epochs);
    }
}
