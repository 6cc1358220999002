//! Contextual diversity-aware sequential sampling for recommendation.
//!
//! A Thompson-sampling bandit tracks per-item posteriors. Each round a batch
//! of `K` items is chosen by one of six strategies that mix diversity
//! (log-det volume, ridge leverage scores, k-DPP eigen-probabilities) with
//! relevance to the user. The [`simulation`] module runs the sequential loop
//! over embeddings built by [`dataio`] and records the evaluation metrics.
//!
//! Module map:
//!
//! - [`kernelmath`]: kernels, PSD repair, volume and ridge leverage scores.
//! - [`dataio`]: ratings ingestion, filtering, stratified split, truncated SVD.
//! - [`bandit`]: Beta posteriors, Thompson draws and gain ratios.
//! - [`selection`]: scalar and vectorized objectives, Pareto ranking, strategies.
//! - [`simulation`]: the round loop, rewards and evaluation report.
//! - [`cli`]: the `divsample` command-line front end.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bandit;
pub mod cli;
pub mod dataio;
pub mod error;
pub mod kernelmath;
pub mod selection;
pub mod simulation;

pub use error::{Error, Result};
