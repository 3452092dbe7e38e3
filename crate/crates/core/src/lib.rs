//! Weight-averaging laboratory.
//!
//! EMA, switch-EMA (SEMA), SWA and Lookahead as interchangeable averagers
//! over a small MLP, plus the analysis tooling used to study them: the noisy
//! quadratic model, loss-landscape scans, and decision-boundary metrics on
//! 2D toy tasks. The `harness` module ties these into reproducible
//! experiments with deterministic CSV/JSON artifacts.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod averaging;
pub mod error;
pub mod harness;
pub mod landscape;
pub mod mlp;
pub mod nqm;
pub mod numerics;
pub mod optim;
pub mod toy;
pub mod train;

pub use error::{Error, Result};
