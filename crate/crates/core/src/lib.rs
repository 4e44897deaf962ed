//! Noisy-label correction with deep k-nearest-neighbor voting.
//!
//! The engine alternates between training a small classifier on the current
//! labels, extracting its hidden-layer embeddings, and re-inferring labels by
//! KNN voting over those embeddings. Two correction modes are provided:
//! whole-dataset voting ([`knn::correct_iterknn`]) and voting restricted to a
//! per-class low-loss reference subset ([`knn::correct_selknn`]).
//!
//! All numeric code is generic over [`Scalar`]; the aliases below fix the
//! scalar type for the common cases.

pub mod embedstore;
pub mod error;
pub mod knn;
pub mod noise;
pub mod pipeline;
mod rng;
pub mod scalar;
pub mod trainer;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Class identifier as stored on disk.
pub type ClassId = u32;

pub type EmbeddingSetF32 = embedstore::EmbeddingSet<f32>;
pub type EmbeddingSetF64 = embedstore::EmbeddingSet<f64>;
pub type LabeledDatasetF32 = embedstore::LabeledDataset<f32>;
pub type LabeledDatasetF64 = embedstore::LabeledDataset<f64>;
pub type ClassifierF32 = trainer::Classifier<f32>;
pub type ClassifierF64 = trainer::Classifier<f64>;
