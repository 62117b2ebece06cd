//! Guidance for reusing a trained phenotype-mention NLP model on a new task.
//!
//! The pipeline learns embeddings for words and `CUI_CONTEXT` mark-up tokens
//! from the model's labelled source data, represents each mention found in a
//! new corpus by the mean embedding of its context window, clusters those
//! vectors into language patterns and compares every pattern with a
//! reference phenotype vector. Patterns close to the reference are
//! *p-known*: the reused model can be trusted on them without validation.
//! The rest are *p-unknown* groups, each with a handful of representatives
//! to validate.
//!
//! Modules follow the pipeline: [`corpus`] and [`ontology`] for inputs,
//! [`embedding`] for CBOW training, [`mention_space`] for vectorizing and
//! clustering, [`guidance`] for the partition, [`metrics`] for waste and
//! accuracy figures, [`synth`] for planted-pattern corpora and [`pipeline`]
//! for the command-line workflows.

pub mod corpus;
pub mod embedding;
pub mod guidance;
pub mod mention_space;
pub mod metrics;
pub mod ontology;
pub mod pipeline;
pub mod seed;
pub mod synth;

pub use corpus::{Context, Document, MentionAnnotation, TokenSequence};
pub use embedding::{EmbeddingModel, TrainConfig, TrainMode};
pub use guidance::{GuidancePartition, ReferenceStrategy};
pub use mention_space::{ClusterSet, MentionVector};
pub use ontology::{ConceptId, ConceptTree};
