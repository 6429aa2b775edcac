//! Exemplar-free class-incremental learning on frozen feature embeddings.
//!
//! Each incremental task contributes class means to a persistent pool. A
//! simplex equiangular tight frame (ETF) classifier grows one anchor per
//! learned class, and a small residual MLP (the alignment layer) is trained
//! per task to map pooled class means and current-task features onto their
//! anchors with a pull-and-push loss plus cosine cross-entropy. Prediction is
//! the anchor with the highest cosine similarity.
//!
//! The crate also provides the neural-collapse diagnostics (NC1, NC2, NC3), a
//! binary embedding file format, stream manifests, and a seeded synthetic
//! drift benchmark.

pub mod alignment;
pub mod data_io;
pub mod engine;
pub mod error;
pub mod etf;
pub mod linalg;
pub mod losses;
pub mod ncmetrics;

/// Identifier of a class label as stored in embedding files.
pub type ClassId = u32;

pub use error::{Error, Result};
