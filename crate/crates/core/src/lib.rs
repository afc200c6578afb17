//! Trainable compound activations (TCAs) and the models built on them.
//!
//! A TCA is the average of `M` shifted and scaled copies of a base activation.
//! Read as a stochastic unit it is a uniform mixture of the base generating
//! distribution, which gives restricted Boltzmann machines with mixture hidden
//! units, deep belief networks with a free-energy classifier, and a monotone
//! density estimator.
//!
//! Modules:
//! - [`activations`]: base units and the TCA layer.
//! - [`pdf`]: univariate maximum-likelihood density estimation.
//! - [`rbm`]: TCA-hidden RBMs, Gibbs sampling and contrastive divergence.
//! - [`dbn`]: stacked RBMs with a label-injected top layer.
//! - [`autoenc`]: small dense auto-encoder with TCA encoder layers.
//! - [`data`]: MNIST IDX ingestion, dithering, batching and model files.

pub mod activations;
pub mod autoenc;
pub mod config;
pub mod data;
pub mod dbn;
pub mod error;
pub mod experiments;
pub mod parallel;
pub mod pdf;
pub mod rbm;
pub mod schedule;
pub mod stats;

#[cfg(test)]
pub(crate) mod testutil;

pub use activations::{BaseKind, TcaParams};
pub use error::{Error, Result};
