//! Loss-landscape scans along normalized random directions.
//!
//! `f(alpha) = L(center + alpha * direction)` in 1D, and the analogous
//! two-direction grid in 2D. Directions are Gaussian and rescaled so their
//! norm matches the center point, either globally or per layer block
//! (filter normalization adapted to dense layers).

use std::ops::Range;

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::mlp::MlpParams;
use crate::numerics::{ParamVector, RngState, Vec64};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    GlobalNorm,
    #[default]
    LayerwiseNorm,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Direction {
    pub vector: ParamVector,
    pub normalization: Normalization,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Random direction for an arbitrary flat vector split into `blocks`.
/// Under global normalization the blocks are ignored.
pub fn make_direction_for(
    center: &[f64],
    blocks: &[Range<usize>],
    rng: &mut RngState,
    normalization: Normalization,
) -> Result<Direction> {
    let mut v: Vec<f64> = (0..center.len()).map(|_| rng.standard_normal()).collect();
    match normalization {
        Normalization::GlobalNorm => {
            let target = norm(center);
            if target == 0.0 {
                return Err(Error::DegenerateLayer { layer: 0 });
            }
            let scale = target / norm(&v);
            v.iter_mut().for_each(|x| *x *= scale);
        }
        Normalization::LayerwiseNorm => {
            for (layer, block) in blocks.iter().enumerate() {
                let target = norm(&center[block.clone()]);
                if target == 0.0 {
                    return Err(Error::DegenerateLayer { layer });
                }
                let scale = target / norm(&v[block.clone()]);
                v[block.clone()].iter_mut().for_each(|x| *x *= scale);
            }
        }
    }
    Ok(Direction {
        vector: Vec64(v),
        normalization,
    })
}

/// Random direction normalized against an MLP's layer blocks
/// (each block = one layer's weights and biases).
pub fn make_direction(
    center: &MlpParams,
    rng: &mut RngState,
    normalization: Normalization,
) -> Result<Direction> {
    let blocks: Vec<_> = center.config().layout().iter().map(|b| b.range()).collect();
    make_direction_for(center.flat(), &blocks, rng, normalization)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanGrid {
    pub alphas: Vec<f64>,
    /// Present for 2D scans.
    pub betas: Option<Vec<f64>>,
    /// Row-major over `(alpha, beta)`. `None` marks a non-finite loss.
    pub loss: Vec<Option<f64>>,
    pub accuracy: Vec<Option<f64>>,
    pub center_loss: f64,
    pub center_accuracy: Option<f64>,
}

impl ScanGrid {
    pub fn shape(&self) -> (usize, usize) {
        (self.alphas.len(), self.betas.as_ref().map_or(1, |b| b.len()))
    }

    pub fn loss_at(&self, i: usize, j: usize) -> Option<f64> {
        self.loss[i * self.shape().1 + j]
    }
}

/// Evaluation outcome at one parameter point: loss and optional accuracy.
pub type EvalPoint = (f64, Option<f64>);

fn displaced(center: &[f64], dirs: &[(&[f64], f64)]) -> Vec<f64> {
    let mut p = center.to_vec();
    for (d, coef) in dirs {
        if *coef != 0.0 {
            for (pi, di) in p.iter_mut().zip(d.iter()) {
                *pi += coef * di;
            }
        }
    }
    p
}

fn record(point: EvalPoint) -> (Option<f64>, Option<f64>) {
    let (loss, acc) = point;
    if loss.is_finite() {
        (Some(loss), acc)
    } else {
        (None, None)
    }
}

pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    let mut v: Vec<f64> = (0..n)
        .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
        .collect();
    // Snap the midpoint of symmetric ranges onto exact zero.
    for x in v.iter_mut() {
        if x.abs() < 1e-12 * (hi - lo).abs() {
            *x = 0.0;
        }
    }
    v
}

pub fn scan_1d<F>(center: &[f64], direction: &[f64], alphas: &[f64], eval_fn: F) -> Result<ScanGrid>
where
    F: Fn(&[f64]) -> EvalPoint + Sync,
{
    check_len("scan_1d direction", center.len(), direction.len())?;
    if !alphas.contains(&0.0) {
        return Err(Error::Usage("1D scan coefficients must include 0".into()));
    }
    let (center_loss, center_accuracy) = eval_fn(center);
    let cells: Vec<(Option<f64>, Option<f64>)> = alphas
        .par_iter()
        .map(|a| record(eval_fn(&displaced(center, &[(direction, *a)]))))
        .collect();
    let (loss, accuracy) = cells.into_iter().unzip();
    Ok(ScanGrid {
        alphas: alphas.to_vec(),
        betas: None,
        loss,
        accuracy,
        center_loss,
        center_accuracy,
    })
}

pub fn scan_2d<F>(
    center: &[f64],
    dir1: &[f64],
    dir2: &[f64],
    alphas: &[f64],
    betas: &[f64],
    eval_fn: F,
) -> Result<ScanGrid>
where
    F: Fn(&[f64]) -> EvalPoint + Sync,
{
    check_len("scan_2d dir1", center.len(), dir1.len())?;
    check_len("scan_2d dir2", center.len(), dir2.len())?;
    if !alphas.contains(&0.0) || !betas.contains(&0.0) {
        return Err(Error::Usage("2D scan grid must contain (0, 0)".into()));
    }
    let (center_loss, center_accuracy) = eval_fn(center);
    let nb = betas.len();
    let cells: Vec<(Option<f64>, Option<f64>)> = (0..alphas.len() * nb)
        .into_par_iter()
        .map(|idx| {
            let (a, b) = (alphas[idx / nb], betas[idx % nb]);
            record(eval_fn(&displaced(center, &[(dir1, a), (dir2, b)])))
        })
        .collect();
    let (loss, accuracy) = cells.into_iter().unzip();
    Ok(ScanGrid {
        alphas: alphas.to_vec(),
        betas: Some(betas.to_vec()),
        loss,
        accuracy,
        center_loss,
        center_accuracy,
    })
}

/// Least-squares coordinates of `checkpoint - center` in span{dir1, dir2}.
pub fn project_trajectory(
    checkpoints: &[ParamVector],
    center: &[f64],
    dir1: &[f64],
    dir2: &[f64],
) -> Result<Vec<(f64, f64)>> {
    check_len("project_trajectory dir1", center.len(), dir1.len())?;
    check_len("project_trajectory dir2", center.len(), dir2.len())?;
    let (g11, g12, g22) = (dot(dir1, dir1), dot(dir1, dir2), dot(dir2, dir2));
    let det = g11 * g22 - g12 * g12;
    if !(det > 1e-12 * g11 * g22) {
        return Err(Error::Basis(
            "projection directions are (numerically) linearly dependent".into(),
        ));
    }
    checkpoints
        .iter()
        .map(|cp| {
            check_len("project_trajectory checkpoint", center.len(), cp.len())?;
            let r: Vec<f64> = cp.iter().zip(center).map(|(a, b)| a - b).collect();
            let (b1, b2) = (dot(dir1, &r), dot(dir2, &r));
            Ok(((g22 * b1 - g12 * b2) / det, (g11 * b2 - g12 * b1) / det))
        })
        .collect()
}

/// Unit-norm top-two principal directions of `checkpoint - center`.
pub fn pca_directions(checkpoints: &[ParamVector], center: &[f64]) -> Result<(Vec64, Vec64)> {
    if checkpoints.len() < 2 {
        return Err(Error::Basis("PCA plane needs at least two checkpoints".into()));
    }
    let diffs: Vec<Vec<f64>> = checkpoints
        .iter()
        .map(|cp| {
            check_len("pca_directions checkpoint", center.len(), cp.len())?;
            Ok(cp.iter().zip(center).map(|(a, b)| a - b).collect())
        })
        .collect::<Result<_>>()?;
    let n = diffs.len();
    let gram = DMatrix::from_fn(n, n, |i, j| dot(&diffs[i], &diffs[j]));
    let eig = SymmetricEigen::new(gram);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|a, b| eig.eigenvalues[*b].total_cmp(&eig.eigenvalues[*a]).then(a.cmp(b)));
    let top = eig.eigenvalues[order[0]];
    let mut dirs = Vec::with_capacity(2);
    for &k in order.iter().take(2) {
        if !(eig.eigenvalues[k] > 1e-12 * top) {
            return Err(Error::Basis(
                "checkpoints span fewer than two directions".into(),
            ));
        }
        let mut v = vec![0.0; center.len()];
        for (i, d) in diffs.iter().enumerate() {
            let w = eig.eigenvectors[(i, k)];
            for (vj, dj) in v.iter_mut().zip(d) {
                *vj += w * dj;
            }
        }
        // Fix the sign so the largest-magnitude entry is positive.
        let lead = v.iter().cloned().fold(0.0_f64, |m, x| if x.abs() > m.abs() { x } else { m });
        let s = lead.signum() / norm(&v);
        v.iter_mut().for_each(|x| *x *= s);
        dirs.push(Vec64(v));
    }
    let d2 = dirs.pop().unwrap();
    let d1 = dirs.pop().unwrap();
    Ok((d1, d2))
}
