//! Probabilistic embeddings for speaker diarization.
//!
//! Segments are represented as Gaussian likelihoods over a hidden embedding
//! (a mean `xhat` plus a diagonal precision `prec`) and scored under a
//! diagonalized two-covariance PLDA model. The crate provides:
//!
//! * [`partitions`]: restricted growth strings, Bell numbers and the
//!   Chinese-restaurant partition prior, plus the sparse subset tables used
//!   to score every clustering of a small tuple at once.
//! * [`plda`]: per-segment weights, pooled cluster statistics, cluster
//!   log-likelihoods and the exact clustering posterior.
//! * [`extractor`]: the linear mean transform and the softplus precision
//!   network, and a synthetic corpus generator.
//! * [`training`]: multiclass cross-entropy over tuples with analytic
//!   gradients and plain SGD.
//! * [`clustering`]: baseline average-linkage AHC with unsupervised
//!   calibration and greedy maximum-likelihood (by-the-book) AHC.
//! * [`evalkit`]: RTTM I/O and diarization error rate.
//! * [`cli`]: the `probdiar` command-line front end.

// `!(x > 0.0)` is used on purpose so NaN is rejected too; index loops
// follow the formulas they implement
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod cli;
pub mod clustering;
pub mod corpus_io;
pub mod error;
pub mod evalkit;
pub mod extractor;
pub mod modelfile;
pub mod partitions;
pub mod pipeline;
pub mod plda;
pub mod seeding;
pub mod selftest;
pub mod training;

pub use error::{Error, Result};

/// Toolkit version reported by `--version`.
pub const TOOLKIT_VERSION: &str = env!("CARGO_PKG_VERSION");
