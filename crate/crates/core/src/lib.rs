//! Entropy-regularized actor-critic training for sequence-to-sequence
//! translation models.
//!
//! The crate bundles:
//! - a minimal tape-based reverse-mode autodiff engine ([`autodiff`]),
//! - a GRU encoder/decoder policy with additive attention ([`model`]),
//! - a four-network soft-Q critic ensemble ([`model::critic`]),
//! - per-step smoothed-BLEU and skill-discriminator rewards ([`rewards`]),
//! - the off-policy maximum-entropy training pipeline ([`train`]),
//! - translation evaluation metrics with bootstrap significance ([`metrics`]),
//! - corpus loading, vocabulary, batching, and synthetic tasks ([`corpus`]).
//!
//! The `parallel` feature (default) parallelizes the data-parallel inner
//! loops with rayon; outputs are identical with the feature off.

pub mod autodiff;
pub mod checkpoint;
pub mod corpus;
pub mod error;
pub mod metrics;
pub mod model;
pub mod par;
pub mod rewards;
pub mod train;

pub use error::{CoreError, Result};
