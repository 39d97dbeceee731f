//! Knowledge-based entity prediction (KEP) framed as knowledge-graph completion.
//!
//! A scene knowledge graph links scenes to entity instances (`includes`) and
//! instances to their types (`type`). Collapsing that path into a direct
//! `includesType` relation turns "which entity types are missing from this
//! scene?" into a ranking problem over type nodes. Three interchangeable
//! solvers produce those rankings:
//!
//! - [`kge`]: link prediction with TransE, HolE or ConvKB embeddings,
//! - [`arm`]: Apriori association rules applied through an antecedent mask,
//! - [`cc`]: iterative collective classification over co-occurrence counts.
//!
//! [`eval`] scores any of them with ranking metrics (MRR, Hits@K) and KEP
//! performance metrics (accuracy, micro/macro F1), and [`syngen`] generates
//! planted scene data together with its Bayes-optimal predictor.
//!
//! Numerical code in [`kge`] is generic over the scalar type; the aliases
//! below name the two instantiations in use.

pub mod arm;
pub mod cc;
mod error;
pub mod eval;
pub mod graph;
pub mod ingest;
pub mod kge;
pub mod pipeline;
pub mod scalar;
pub mod syngen;

pub use error::{Error, Result};
pub use graph::{KnowledgeGraph, NodeId, RelationId, SceneRecord, Triple};
pub use scalar::Scalar;

/// Exact non-negative rational used for support and confidence.
pub type Fraction = num_rational::Ratio<u64>;

/// Single-precision embedding model; the storage precision of model archives.
pub type EmbeddingModelF32 = kge::EmbeddingModel<f32>;
/// Double-precision embedding model, used for gradient checking.
pub type EmbeddingModelF64 = kge::EmbeddingModel<f64>;
/// Single-precision training configuration.
pub type TrainConfigF32 = kge::TrainConfig<f32>;
/// Double-precision training configuration.
pub type TrainConfigF64 = kge::TrainConfig<f64>;
