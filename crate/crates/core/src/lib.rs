//! Make text unlearnable: error-minimizing word substitutions found by a
//! bi-level min-min search, plus the synthetic shortcut patterns that
//! reproduce the same effect directly.
//!
//! The crate is organized around a small set of contracts:
//!
//! * [`corpus`] — tokenization, vocabularies, datasets, synthetic corpora.
//! * [`embedding`] — embedding tables and the cosine neighborhood that
//!   constrains substitutions.
//! * [`models`] — micro text models (bag-of-words and recurrent classifiers,
//!   a recurrent span extractor) with hand-derived gradients.
//! * [`search`] — the first-order substitution search and its exact oracle.
//! * [`minmin`] — the alternating optimize/regenerate driver that emits
//!   per-milestone noise sets.
//! * [`analysis`] — statistics over noise sets (per-class substitute
//!   distributions, positions, answer-boundary distances).
//! * [`hints`] — synthetic label/answer hint injection.
//! * [`trainer`], [`trace`], [`checkpoint`], [`config`] — plumbing shared by
//!   experiments and the CLI.
//!
//! All numeric code is generic over [`scalar::Real`]; the aliases below pin
//! the concrete types used by the CLI and checkpoints.

pub mod analysis;
pub mod checkpoint;
pub mod config;
pub mod corpus;
pub mod embedding;
pub mod error;
pub mod hints;
pub mod minmin;
pub mod models;
pub mod scalar;
pub mod search;
pub mod trace;
pub mod trainer;

pub use error::{Error, Result};
pub use scalar::{as_f64, real, Real};

/// Scalar type used by the CLI pipeline and by checkpoints on disk.
pub type Scalar = f64;

/// Embedding table in the pipeline scalar type.
pub type Embedding = embedding::EmbeddingMatrix<Scalar>;
/// Classification model in the pipeline scalar type.
pub type Classifier = models::classifier::ClassifierModel<Scalar>;
/// Span-extraction model in the pipeline scalar type.
pub type SpanExtractor = models::span::SpanModel<Scalar>;

/// Single-precision variants for memory-constrained runs.
pub type Embedding32 = embedding::EmbeddingMatrix<f32>;
pub type Classifier32 = models::classifier::ClassifierModel<f32>;
pub type SpanExtractor32 = models::span::SpanModel<f32>;
