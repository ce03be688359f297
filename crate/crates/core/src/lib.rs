//! Reasoning-path mining and scoring for knowledge graph relation prediction.
//!
//! A candidate triplet `(h, r, t)` is scored by verbalizing the relation
//! paths that connect `h` to `t`, embedding those sentences and the triplet,
//! and taking the best cosine similarity. Paths are found by a bounded
//! breadth-first search and can be filtered by how often their relation
//! sequence co-occurs with the queried relation.
//!
//! Modules, roughly in pipeline order:
//!
//! - [`graph`]: triplet storage, vocabularies, inverse edges.
//! - [`paths`]: path extraction and walk counting.
//! - [`metrics`]: support, coverage and confidence of relation paths.
//! - [`verbalize`]: sentences for triplets and paths.
//! - [`embed`]: hashing and projection embedders, the embedding service
//!   client, loss and training.
//! - [`eval`]: negative sampling and MRR / Hit@1 ranking.
//! - [`explain`]: clustering and 2-D projection of scored paths.
//! - [`pipeline`]: the staged, cached command layer used by the CLI.
//!
//! Numeric code is generic over [`scalar::Real`]; the aliases below fix the
//! precision.

pub mod config;
pub mod embed;
pub mod eval;
pub mod explain;
pub mod graph;
pub mod metrics;
pub mod paths;
pub mod pipeline;
pub mod scalar;
pub mod synthetic;
pub mod verbalize;

pub type Embedding64 = embed::Embedding<f64>;
pub type Embedding32 = embed::Embedding<f32>;
pub type ScoredTriplet64 = embed::ScoredTriplet<f64>;
pub type ScoredTriplet32 = embed::ScoredTriplet<f32>;
pub type ProjectionEmbedder64 = embed::ProjectionEmbedder<f64>;
pub type ProjectionEmbedder32 = embed::ProjectionEmbedder<f32>;
pub type ExplanationReport64 = explain::ExplanationReport<f64>;
