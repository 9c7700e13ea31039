//! Training-free exemplar selection for multimodal in-context learning.
//!
//! Pipeline for one query:
//!
//! 1. [`retrieval::retrieve`] keeps the top-k₁ knowledge-base samples by
//!    cosine similarity in the visual, textual or joint space.
//! 2. [`graph`] builds a kNN graph over those candidates in each space,
//!    fuses them with per-modality weights, attaches the query node and
//!    row-normalizes the result into a random-walk operator.
//! 3. [`gstas::score`] walks from the query, gates each step by how well the
//!    walk's averaged embedding aligns with the query, and ranks candidates.
//! 4. [`prompt::build_prompt`] renders the top-k₂ exemplars into a chat
//!    prompt, and [`harness`] scores the answers of an [`lvlm_client::Oracle`].
//!
//! The numeric modules are generic over [`Scalar`] (`f32` or `f64`). The
//! aliases below fix the scalar to `f64`, which is what file loading and the
//! command-line tool use.

pub mod error;
pub mod graph;
pub mod gstas;
pub mod harness;
pub mod kb;
pub mod lvlm_client;
pub mod metrics;
pub mod pipeline;
pub mod prompt;
pub mod retrieval;
pub mod scalar;
pub mod synth;

#[cfg(test)]
mod test_support;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type KnowledgeBase = kb::KnowledgeBase<f64>;
pub type KnowledgeBase32 = kb::KnowledgeBase<f32>;
pub type EmbeddingRecord = kb::EmbeddingRecord<f64>;
pub type CandidateSet = retrieval::CandidateSet<f64>;
pub type ModalityGraph = graph::ModalityGraph<f64>;
pub type FusedGraph = graph::FusedGraph<f64>;
pub type PropagationOperator = graph::PropagationOperator<f64>;
pub type PropagationState = gstas::PropagationState<f64>;
pub type ScoredExemplars = gstas::ScoredExemplars<f64>;
pub type Selection = pipeline::Selection<f64>;
