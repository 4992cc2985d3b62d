//! Introspective deep metric learning at desk scale.
//!
//! Samples are embedded as a semantic vector plus an uncertainty vector.
//! Distances between semantic vectors are weakened in proportion to the
//! pair's combined uncertainty, which lets ambiguous training samples pull
//! less on the embedding. The crate provides the metric and its gradients,
//! seven losses built on it, negative mining, feature-level mixup with
//! set-valued labels, a small MLP encoder trained with AdamW, and retrieval
//! evaluation (Recall@K, NMI, R-Precision, MAP@R).

pub mod benchmark;
pub mod commands;
pub mod config;
pub mod data;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod loss;
pub mod metric;
pub mod mixer;
pub mod sampler;
pub mod train;

pub use error::{Error, Result};
