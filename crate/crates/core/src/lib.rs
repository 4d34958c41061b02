//! Shared-trunk multi-task neural networks for small tabular cohorts.
//!
//! The crate covers the whole pipeline: CSV ingestion and cleaning, chained
//! equations imputation, encoding and z-scoring ([`dataset`]); synthetic
//! correlated-outcome data ([`synth`]); the multi-head network with exact
//! gradients ([`network`]); Adam with a cosine schedule ([`optim`]);
//! training, cross-validation and grid search ([`train`]); evaluation
//! ([`metrics`]); gradient-based feature attribution ([`attrib`]); and
//! outcome distribution summaries ([`report`]).

pub mod attrib;
pub mod dataset;
pub mod error;
pub mod linalg;
pub mod metrics;
pub mod network;
pub mod optim;
pub mod report;
pub mod rng;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
