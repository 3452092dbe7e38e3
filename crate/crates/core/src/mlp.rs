//! Small fully-connected network with hand-written backprop.
//!
//! Parameters live in a single flat vector. Per layer, the weight matrix
//! (`fan_out x fan_in`, row-major) comes first, then the bias vector. That
//! ordering is the canonical flattening used by averagers, checkpoints and
//! landscape directions.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::numerics::{Mat64, ParamVector, RngState, Vec64};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Relu,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(0.0),
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `a`.
    #[inline]
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// Softmax cross-entropy over integer class labels.
    SoftmaxCe,
    /// Mean squared error over all `n * k` outputs.
    Mse,
    /// Mean absolute error over all `n * k` outputs.
    L1,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpConfig {
    pub layer_sizes: Vec<usize>,
    pub activation: Activation,
    pub loss: LossKind,
}

/// Location of one layer inside the flat parameter vector.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerBlock {
    pub fan_in: usize,
    pub fan_out: usize,
    pub weights: Range<usize>,
    pub biases: Range<usize>,
}

impl LayerBlock {
    /// Whole block (weights followed by biases).
    pub fn range(&self) -> Range<usize> {
        self.weights.start..self.biases.end
    }
}

impl Default for MlpConfig {
    /// 2 -> 16 -> 2, tanh, softmax cross-entropy.
    fn default() -> Self {
        MlpConfig {
            layer_sizes: vec![2, 16, 2],
            activation: Activation::Tanh,
            loss: LossKind::SoftmaxCe,
        }
    }
}

impl MlpConfig {
    pub fn new(layer_sizes: Vec<usize>, activation: Activation, loss: LossKind) -> Result<Self> {
        let cfg = MlpConfig {
            layer_sizes,
            activation,
            loss,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_sizes.len() < 2 {
            return Err(Error::config(
                "model.layer_sizes",
                "need at least an input and an output layer",
            ));
        }
        if let Some(i) = self.layer_sizes.iter().position(|w| *w == 0) {
            return Err(Error::config(
                format!("model.layer_sizes[{i}]"),
                "layer width must be >= 1",
            ));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn is_classifier(&self) -> bool {
        self.loss == LossKind::SoftmaxCe
    }

    pub fn layout(&self) -> Vec<LayerBlock> {
        let mut offset = 0;
        self.layer_sizes
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let weights = offset..offset + fan_in * fan_out;
                let biases = weights.end..weights.end + fan_out;
                offset = biases.end;
                LayerBlock {
                    fan_in,
                    fan_out,
                    weights,
                    biases,
                }
            })
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.layer_sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MlpParams {
    config: MlpConfig,
    flat: ParamVector,
}

impl MlpParams {
    pub fn zeros(config: MlpConfig) -> Self {
        let n = config.param_count();
        MlpParams {
            config,
            flat: Vec64::zeros(n),
        }
    }

    /// Glorot-uniform weights in `±sqrt(6 / (fan_in + fan_out))`, zero biases.
    pub fn init(config: MlpConfig, rng: &mut RngState) -> Self {
        let mut p = Self::zeros(config);
        for block in p.config.layout() {
            let limit = (6.0 / (block.fan_in + block.fan_out) as f64).sqrt();
            for w in &mut p.flat[block.weights.clone()] {
                *w = rng.uniform_range(-limit, limit);
            }
        }
        p
    }

    /// Rebuilds parameters from a flat vector in canonical order.
    pub fn unflatten(config: MlpConfig, flat: ParamVector) -> Result<Self> {
        config.validate()?;
        check_len("MlpParams::unflatten", config.param_count(), flat.len())?;
        Ok(MlpParams { config, flat })
    }

    pub fn flatten(&self) -> ParamVector {
        self.flat.clone()
    }

    pub fn flat(&self) -> &ParamVector {
        &self.flat
    }

    pub fn flat_mut(&mut self) -> &mut ParamVector {
        &mut self.flat
    }

    pub fn into_flat(self) -> ParamVector {
        self.flat
    }

    pub fn config(&self) -> &MlpConfig {
        &self.config
    }

    /// Copy of these parameters with a different flat vector.
    pub fn with_flat(&self, flat: ParamVector) -> Result<Self> {
        Self::unflatten(self.config.clone(), flat)
    }

    pub fn weights(&self, layer: usize) -> &[f64] {
        let block = &self.config.layout()[layer];
        &self.flat[block.weights.clone()]
    }

    pub fn biases(&self, layer: usize) -> &[f64] {
        let block = &self.config.layout()[layer];
        &self.flat[block.biases.clone()]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Targets {
    Classes(Vec<usize>),
    Values(Mat64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub inputs: Mat64,
    pub targets: Targets,
}

impl Batch {
    pub fn classification(inputs: Mat64, labels: Vec<usize>) -> Result<Self> {
        check_len("Batch labels", inputs.rows(), labels.len())?;
        if inputs.rows() == 0 {
            return Err(Error::Usage("batch must contain at least one sample".into()));
        }
        Ok(Batch {
            inputs,
            targets: Targets::Classes(labels),
        })
    }

    pub fn regression(inputs: Mat64, targets: Mat64) -> Result<Self> {
        check_len("Batch targets", inputs.rows(), targets.rows())?;
        if inputs.rows() == 0 {
            return Err(Error::Usage("batch must contain at least one sample".into()));
        }
        Ok(Batch {
            inputs,
            targets: Targets::Values(targets),
        })
    }

    pub fn len(&self) -> usize {
        self.inputs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.rows() == 0
    }

    pub fn labels(&self) -> Option<&[usize]> {
        match &self.targets {
            Targets::Classes(c) => Some(c),
            Targets::Values(_) => None,
        }
    }
}

/// Per-layer cached activations from a forward pass. `acts[0]` is the input,
/// `acts[l + 1]` the output of layer `l`; `pre[l]` the pre-activation of layer `l`.
struct Trace {
    pre: Vec<Vec<f64>>,
    acts: Vec<Vec<f64>>,
}

fn run_layers(params: &MlpParams, inputs: &Mat64) -> Result<Trace> {
    let cfg = &params.config;
    check_len("forward input width", cfg.input_dim(), inputs.cols())?;
    let n = inputs.rows();
    let layout = cfg.layout();
    let last = layout.len() - 1;
    let mut acts = vec![inputs.data().to_vec()];
    let mut pre = Vec::with_capacity(layout.len());
    for (l, block) in layout.iter().enumerate() {
        let w = &params.flat[block.weights.clone()];
        let b = &params.flat[block.biases.clone()];
        let input = &acts[l];
        let mut z = vec![0.0; n * block.fan_out];
        for s in 0..n {
            let x = &input[s * block.fan_in..(s + 1) * block.fan_in];
            let zs = &mut z[s * block.fan_out..(s + 1) * block.fan_out];
            for (o, zo) in zs.iter_mut().enumerate() {
                let row = &w[o * block.fan_in..(o + 1) * block.fan_in];
                *zo = b[o] + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
            }
        }
        let a = if l == last {
            z.clone()
        } else {
            z.iter().map(|v| cfg.activation.apply(*v)).collect()
        };
        pre.push(z);
        acts.push(a);
    }
    Ok(Trace { pre, acts })
}

/// Row-wise `log(sum(exp(row)))` with max subtraction.
fn log_sum_exp(row: &[f64]) -> f64 {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

fn softmax_row(row: &[f64], out: &mut [f64]) {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (o, v) in out.iter_mut().zip(row) {
        *o = (v - m).exp();
        total += *o;
    }
    for o in out.iter_mut() {
        *o /= total;
    }
}

fn check_targets(cfg: &MlpConfig, batch: &Batch) -> Result<()> {
    let k = cfg.output_dim();
    match (&batch.targets, cfg.loss) {
        (Targets::Classes(labels), LossKind::SoftmaxCe) => {
            check_len("batch labels", batch.len(), labels.len())?;
            if let Some(bad) = labels.iter().find(|c| **c >= k) {
                return Err(Error::Shape(format!(
                    "class label {bad} out of range for {k} outputs"
                )));
            }
        }
        (Targets::Values(t), LossKind::Mse | LossKind::L1) => {
            check_len("regression target rows", batch.len(), t.rows())?;
            check_len("regression target width", k, t.cols())?;
        }
        _ => {
            return Err(Error::Shape(
                "target kind does not match the configured loss".into(),
            ))
        }
    }
    Ok(())
}

/// Batch-mean loss and per-output gradient `dL/d(output)`.
fn loss_and_output_grad(cfg: &MlpConfig, outputs: &[f64], batch: &Batch) -> (f64, Vec<f64>) {
    let n = batch.len();
    let k = cfg.output_dim();
    let mut grad = vec![0.0; n * k];
    let mut total = 0.0;
    match &batch.targets {
        Targets::Classes(labels) => {
            let mut p = vec![0.0; k];
            for (s, &c) in labels.iter().enumerate() {
                let row = &outputs[s * k..(s + 1) * k];
                total += log_sum_exp(row) - row[c];
                softmax_row(row, &mut p);
                let g = &mut grad[s * k..(s + 1) * k];
                for (j, gj) in g.iter_mut().enumerate() {
                    *gj = (p[j] - if j == c { 1.0 } else { 0.0 }) / n as f64;
                }
            }
            total /= n as f64;
        }
        Targets::Values(t) => {
            let denom = (n * k) as f64;
            for (i, (y, tv)) in outputs.iter().zip(t.data()).enumerate() {
                let r = y - tv;
                match cfg.loss {
                    LossKind::Mse => {
                        total += r * r;
                        grad[i] = 2.0 * r / denom;
                    }
                    _ => {
                        total += r.abs();
                        grad[i] = if r > 0.0 {
                            1.0 / denom
                        } else if r < 0.0 {
                            -1.0 / denom
                        } else {
                            0.0
                        };
                    }
                }
            }
            total /= denom;
        }
    }
    (total, grad)
}

/// Batch-mean loss and raw outputs (logits for classification).
pub fn forward(params: &MlpParams, batch: &Batch) -> Result<(f64, Mat64)> {
    check_targets(&params.config, batch)?;
    let trace = run_layers(params, &batch.inputs)?;
    let out = trace.acts.last().unwrap();
    let (loss, _) = loss_and_output_grad(&params.config, out, batch);
    let outputs = Mat64::new(batch.len(), params.config.output_dim(), out.clone())?;
    Ok((loss, outputs))
}

/// Raw outputs for an input matrix, without a loss.
pub fn outputs(params: &MlpParams, inputs: &Mat64) -> Result<Mat64> {
    let trace = run_layers(params, inputs)?;
    Mat64::new(
        inputs.rows(),
        params.config.output_dim(),
        trace.acts.last().unwrap().clone(),
    )
}

/// Loss and gradient of the batch-mean loss w.r.t. the flat parameters.
pub fn loss_and_grad(params: &MlpParams, batch: &Batch) -> Result<(f64, ParamVector)> {
    let cfg = &params.config;
    check_targets(cfg, batch)?;
    let trace = run_layers(params, &batch.inputs)?;
    let (loss, mut delta) = loss_and_output_grad(cfg, trace.acts.last().unwrap(), batch);
    let n = batch.len();
    let layout = cfg.layout();
    let mut grad = Vec64::zeros(cfg.param_count());
    for l in (0..layout.len()).rev() {
        let block = &layout[l];
        let input = &trace.acts[l];
        {
            let (gw, gb) = grad[block.weights.start..block.biases.end].split_at_mut(block.weights.len());
            for s in 0..n {
                let d = &delta[s * block.fan_out..(s + 1) * block.fan_out];
                let x = &input[s * block.fan_in..(s + 1) * block.fan_in];
                for (o, dv) in d.iter().enumerate() {
                    gb[o] += dv;
                    let row = &mut gw[o * block.fan_in..(o + 1) * block.fan_in];
                    for (g, xv) in row.iter_mut().zip(x) {
                        *g += dv * xv;
                    }
                }
            }
        }
        if l == 0 {
            break;
        }
        let w = &params.flat[block.weights.clone()];
        let z_prev = &trace.pre[l - 1];
        let a_prev = &trace.acts[l];
        let mut next = vec![0.0; n * block.fan_in];
        for s in 0..n {
            let d = &delta[s * block.fan_out..(s + 1) * block.fan_out];
            let out = &mut next[s * block.fan_in..(s + 1) * block.fan_in];
            for (o, dv) in d.iter().enumerate() {
                let row = &w[o * block.fan_in..(o + 1) * block.fan_in];
                for (acc, wv) in out.iter_mut().zip(row) {
                    *acc += dv * wv;
                }
            }
            for (i, acc) in out.iter_mut().enumerate() {
                let idx = s * block.fan_in + i;
                *acc *= cfg.activation.derivative(z_prev[idx], a_prev[idx]);
            }
        }
        delta = next;
    }
    Ok((loss, grad))
}

pub fn backward(params: &MlpParams, batch: &Batch) -> Result<ParamVector> {
    loss_and_grad(params, batch).map(|(_, g)| g)
}

/// Softmax class probabilities, one row per input.
pub fn predict_proba(params: &MlpParams, inputs: &Mat64) -> Result<Mat64> {
    if !params.config.is_classifier() {
        return Err(Error::Usage(
            "predict_proba requires a softmax classification model".into(),
        ));
    }
    let logits = outputs(params, inputs)?;
    Ok(softmax_rows(&logits))
}

pub fn softmax_rows(logits: &Mat64) -> Mat64 {
    let k = logits.cols();
    let mut out = vec![0.0; logits.data().len()];
    for r in 0..logits.rows() {
        softmax_row(logits.row(r), &mut out[r * k..(r + 1) * k]);
    }
    Mat64::new(logits.rows(), k, out).expect("shape preserved")
}

/// Fraction of rows whose argmax matches the label.
pub fn accuracy(logits: &Mat64, labels: &[usize]) -> f64 {
    let hits = labels
        .iter()
        .enumerate()
        .filter(|(r, c)| argmax(logits.row(*r)) == **c)
        .count();
    hits as f64 / labels.len().max(1) as f64
}

pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_class_batch() -> Batch {
        let x = Mat64::new(3, 2, vec![0.5, -1.0, 1.5, 0.2, -0.3, 0.7]).unwrap();
        Batch::classification(x, vec![0, 1, 1]).unwrap()
    }

    #[test]
    fn config_validation() {
        assert!(MlpConfig::new(vec![2], Activation::Tanh, LossKind::Mse).is_err());
        assert!(MlpConfig::new(vec![2, 0, 1], Activation::Tanh, LossKind::Mse).is_err());
        let cfg = MlpConfig::default();
        assert_eq!(cfg.param_count(), 2 * 16 + 16 + 16 * 2 + 2);
        let layout = cfg.layout();
        assert_eq!(layout[1].biases.end, cfg.param_count());
    }

    #[test]
    fn zero_params_give_ln2() {
        let p = MlpParams::zeros(MlpConfig::default());
        let (loss, out) = forward(&p, &two_class_batch()).unwrap();
        assert!((loss - 2f64.ln()).abs() < 1e-15);
        assert!(out.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn perfect_fit_mse_has_zero_loss_and_gradient() {
        let cfg = MlpConfig::new(vec![2, 1], Activation::Tanh, LossKind::Mse).unwrap();
        // y = 2 x0 - x1 + 0.5
        let p = MlpParams::unflatten(cfg, Vec64(vec![2.0, -1.0, 0.5])).unwrap();
        let x = Mat64::new(2, 2, vec![1.0, 2.0, -1.0, 0.5]).unwrap();
        let t = Mat64::new(2, 1, vec![0.5, -2.0]).unwrap();
        let batch = Batch::regression(x, t).unwrap();
        let (loss, g) = loss_and_grad(&p, &batch).unwrap();
        assert_eq!(loss, 0.0);
        assert!(g.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn shape_mismatch_errors() {
        let p = MlpParams::zeros(MlpConfig::default());
        let x = Mat64::new(1, 3, vec![0.0; 3]).unwrap();
        let b = Batch::classification(x, vec![0]).unwrap();
        assert!(matches!(forward(&p, &b), Err(Error::Dimension { .. })));
        let x = Mat64::new(1, 2, vec![0.0; 2]).unwrap();
        let b = Batch::classification(x, vec![5]).unwrap();
        assert!(matches!(backward(&p, &b), Err(Error::Shape(_))));
    }

    #[test]
    fn softmax_probabilities() {
        let p = MlpParams::zeros(MlpConfig::default());
        let x = Mat64::new(1, 2, vec![3.0, 4.0]).unwrap();
        let probs = predict_proba(&p, &x).unwrap();
        assert_eq!(probs.row(0), &[0.5, 0.5]);

        let logits = Mat64::new(2, 2, vec![1e3, 0.0, -1e3, 1e3]).unwrap();
        let pr = softmax_rows(&logits);
        assert!((pr.get(0, 0) - 1.0).abs() < 1e-9);
        assert!(pr.data().iter().all(|v| v.is_finite()));
        for r in 0..2 {
            assert!((pr.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn predict_proba_rejects_regression() {
        let cfg = MlpConfig::new(vec![2, 1], Activation::Tanh, LossKind::Mse).unwrap();
        let p = MlpParams::zeros(cfg);
        let x = Mat64::new(1, 2, vec![0.0; 2]).unwrap();
        assert!(matches!(predict_proba(&p, &x), Err(Error::Usage(_))));
    }

    #[test]
    fn class_labels_are_indices_not_magnitudes() {
        // Relabelling is the only way to change a CE target; the same labels
        // give the same gradient no matter how they were produced.
        let mut rng = RngState::new(3, 0);
        let p = MlpParams::init(MlpConfig::default(), &mut rng);
        let b = two_class_batch();
        let labels: Vec<usize> = b.labels().unwrap().iter().map(|c| (c * 10) / 10).collect();
        let b2 = Batch::classification(b.inputs.clone(), labels).unwrap();
        assert_eq!(backward(&p, &b).unwrap(), backward(&p, &b2).unwrap());
    }

    #[test]
    fn init_respects_glorot_limit() {
        let mut rng = RngState::new(9, 0);
        let cfg = MlpConfig::default();
        let p = MlpParams::init(cfg.clone(), &mut rng);
        for (l, block) in cfg.layout().iter().enumerate() {
            let limit = (6.0 / (block.fan_in + block.fan_out) as f64).sqrt();
            assert!(p.weights(l).iter().all(|w| w.abs() <= limit));
            assert!(p.biases(l).iter().all(|b| *b == 0.0));
        }
    }
}
