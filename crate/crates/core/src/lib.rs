//! Temporal action proposals by dense boundary matching with random
//! proposal-feature masking.
//!
//! The pipeline runs from snippet-level feature sequences to scored,
//! class-labelled detections:
//!
//! * [`dataio`]: annotation, feature and class-score formats plus a seeded
//!   synthetic dataset generator.
//! * [`preprocess`]: training-set filtering and feature augmentation.
//! * [`bm`]: the proposal lattice, IoU targets, the proposal-feature sampling
//!   matrix and proposal masking.
//! * [`model`]: the trainable boundary/confidence network with hand-written
//!   gradients and its training loop.
//! * [`postprocess`]: score fusion, soft-NMS, detection assembly and
//!   ensembling.
//! * [`eval`]: AR@AN, AUC and average-mAP metrics.

pub mod bm;
pub mod dataio;
mod error;
pub mod eval;
pub mod model;
pub mod postprocess;
pub mod preprocess;

pub use error::{Error, Result};
