//! Dense vector/matrix primitives and seeded sampling.
//!
//! Everything is `f64`. Randomness comes from [`RngState`], a ChaCha8 stream
//! addressed by `(seed, stream)`: the same pair always replays the same
//! sequence, and distinct streams never overlap.

use std::ops::{Deref, DerefMut};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};

/// Flat, ordered vector of 64-bit floats. Also serves as the parameter vector
/// that averagers operate on.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Vec64(pub Vec<f64>);

pub type ParamVector = Vec64;

impl Vec64 {
    pub fn zeros(len: usize) -> Self {
        Vec64(vec![0.0; len])
    }

    pub fn filled(len: usize, value: f64) -> Self {
        Vec64(vec![value; len])
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn dot(&self, other: &[f64]) -> Result<f64> {
        check_len("dot", self.len(), other.len())?;
        Ok(self.iter().zip(other).map(|(a, b)| a * b).sum())
    }

    pub fn norm(&self) -> f64 {
        self.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn scaled(&self, a: f64) -> Vec64 {
        Vec64(self.iter().map(|v| a * v).collect())
    }

    pub fn sub(&self, other: &[f64]) -> Result<Vec64> {
        check_len("sub", self.len(), other.len())?;
        Ok(Vec64(self.iter().zip(other).map(|(a, b)| a - b).collect()))
    }

    pub fn is_finite(&self) -> bool {
        self.iter().all(|v| v.is_finite())
    }
}

impl Deref for Vec64 {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for Vec64 {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

impl From<Vec<f64>> for Vec64 {
    fn from(v: Vec<f64>) -> Self {
        Vec64(v)
    }
}

impl From<&[f64]> for Vec64 {
    fn from(v: &[f64]) -> Self {
        Vec64(v.to_vec())
    }
}

/// Row-major dense matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mat64 {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat64 {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        check_len("Mat64::new", rows * cols, data.len())?;
        Ok(Mat64 { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat64 {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        let n = diag.len();
        let mut m = Self::zeros(n, n);
        for (i, d) in diag.iter().enumerate() {
            m.data[i * n + i] = *d;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }
}

/// `a * x + y`.
pub fn axpy(a: f64, x: &[f64], y: &[f64]) -> Result<Vec64> {
    check_len("axpy", x.len(), y.len())?;
    Ok(Vec64(x.iter().zip(y).map(|(xi, yi)| a * xi + yi).collect()))
}

/// In-place `y += a * x`.
pub fn axpy_in_place(a: f64, x: &[f64], y: &mut [f64]) -> Result<()> {
    check_len("axpy_in_place", x.len(), y.len())?;
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
    Ok(())
}

pub fn matvec(m: &Mat64, x: &[f64]) -> Result<Vec64> {
    check_len("matvec", m.cols, x.len())?;
    Ok(Vec64(
        (0..m.rows)
            .map(|r| m.row(r).iter().zip(x).map(|(a, b)| a * b).sum())
            .collect(),
    ))
}

/// Seeded, splittable random source. A `(seed, stream)` pair fully determines
/// the sample sequence.
#[derive(Clone, Debug)]
pub struct RngState {
    seed: u64,
    stream: u64,
    rng: ChaCha8Rng,
}

impl RngState {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        RngState { seed, stream, rng }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    /// Fresh generator on another stream of the same seed.
    pub fn fork(&self, stream: u64) -> RngState {
        RngState::new(self.seed, stream)
    }

    #[inline]
    pub fn standard_normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    /// Uniform on `[0, 1)`.
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    #[inline]
    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }
}

/// Independent normals with per-coordinate mean and variance.
pub fn sample_gaussian(rng: &mut RngState, mean: &[f64], diag_cov: &[f64]) -> Result<Vec64> {
    check_len("sample_gaussian", mean.len(), diag_cov.len())?;
    if let Some(v) = diag_cov.iter().find(|v| !(**v >= 0.0)) {
        return Err(Error::Domain(format!("variance must be non-negative, got {v}")));
    }
    Ok(Vec64(
        mean.iter()
            .zip(diag_cov)
            .map(|(m, v)| m + v.sqrt() * rng.standard_normal())
            .collect(),
    ))
}

/// Compensated summation. Merging two accumulators is exact up to the
/// compensation terms, so pooled results do not depend on merge order
/// beyond ~1e-14 relative.
#[derive(Clone, Copy, Debug, Default)]
pub struct KahanSum {
    sum: f64,
    comp: f64,
}

impl KahanSum {
    #[inline]
    pub fn add(&mut self, x: f64) {
        let y = x - self.comp;
        let t = self.sum + y;
        self.comp = (t - self.sum) - y;
        self.sum = t;
    }

    pub fn merge(&mut self, other: &KahanSum) {
        self.add(other.sum);
        self.add(-other.comp);
    }

    pub fn value(&self) -> f64 {
        self.sum - self.comp
    }
}
