//! Post-feature-extraction pipeline for multimodal outcome prediction.
//!
//! The crate consumes per-modality patient embeddings (clinical tabular,
//! radiology volumes, histology slides), rebalances and classifies them with
//! small from-scratch neural networks, fuses modalities early or late with
//! missing-modality handling, and evaluates everything with a binary
//! classification metric surface.
//!
//! Module map:
//!
//! - [`tabular`]: clinical record imputation, encoding, scaling, stratified splits
//! - [`resample`]: SMOTE, ADASYN and inverse-frequency sample weights
//! - [`neural`]: feed-forward networks, losses, Adam, training loop, model files
//! - [`volume`]: intensity clipping/normalization and trilinear resampling
//! - [`curate`]: series-description filtering of scan manifests
//! - [`aggregate`]: instance-to-patient pooling and max-probability inference
//! - [`fusion`]: early/late fusion and the fusion experiment runner
//! - [`metrics`]: confusion matrices, summary metrics, ROC and PR curves
//! - [`features`], [`synth`], [`config`], [`pipeline`]: file formats,
//!   synthetic data and the staged experiment driver behind the CLI

pub mod aggregate;
mod apportion;
pub mod config;
pub mod curate;
pub mod error;
pub mod features;
pub mod fusion;
pub mod io;
pub mod metrics;
pub mod neural;
pub mod pipeline;
pub mod resample;
pub mod seed;
pub mod synth;
pub mod tabular;
pub mod volume;

pub use error::{Error, Result};
