//! Unsupervised knowledge-graph extraction from literary text.
//!
//! The crate follows the extraction workflow stage by stage:
//!
//! 1. [`corpus`] loads novels and segments them into sentences.
//! 2. [`entities`] detects person mentions, clusters aliases with a
//!    Levenshtein-based DBSCAN and rewrites the text with `CHARn` ids.
//! 3. [`relations`] keeps sentences mentioning exactly two characters and
//!    expands symmetric ones into two directed instances.
//! 4. [`embeddings`] turns relational sentences into vectors, either with the
//!    built-in feature-hashing embedder or an external [`provider`].
//! 5. [`clustering`] groups the vectors into relation types (k-means or DBSCAN).
//! 6. [`labeling`] summarizes every cluster and derives a verb label.
//! 7. [`kg`] assembles `(subject, relation, object)` triplets into a graph.
//!
//! [`pipeline`] wires the stages together and persists every intermediate
//! artifact. Numerical code is generic over [`Scalar`]; the aliases below fix
//! it to `f64`, which is what the pipeline uses.

pub mod clustering;
pub mod corpus;
pub mod embeddings;
pub mod entities;
pub mod jsonl;
pub mod kg;
pub mod labeling;
pub mod pipeline;
pub mod provider;
pub mod relations;
mod scalar;
pub mod synthetic;
pub(crate) mod text;

pub use scalar::Scalar;

/// Embedding vector used by the pipeline.
pub type Embedding = embeddings::Vector<f64>;
/// Single-precision embedding, for memory-bound callers.
pub type EmbeddingF32 = embeddings::Vector<f32>;
/// Relation cluster with `f64` centroid.
pub type Cluster = clustering::RelationCluster<f64>;
/// Embedded relational sentence with `f64` values.
pub type Embedded = embeddings::EmbeddedSentence<f64>;
