//! Uncertainty-based resampling and reweighting (UBR²S) for unsupervised
//! domain adaptation, at desk scale.
//!
//! A small dense network is pretrained on a labeled source domain and then
//! adapted to an unlabeled target domain. Each adaptation cycle extracts
//! Monte Carlo dropout statistics over the target set, resamples pseudo-labels
//! from them, and trains on class-balanced mixed batches whose target rows are
//! reweighted by sample likelihood and decision error.

pub mod checkpoint;
pub mod config;
pub mod datasets;
pub mod error;
pub mod experiment;
pub mod neuralcore;
pub mod pseudolabel;
pub mod reweighting;
pub mod sampler;
pub mod seed;
pub mod smoothing;
pub mod trainer;
pub mod uncertainty;

pub use error::{Error, Result};
