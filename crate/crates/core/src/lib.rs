//! Tracing how a masked-language-model encoder comes to encode gender.
//!
//! The crate trains a small transformer encoder from scratch, fits linear
//! gender directions on contextual embeddings of gendered anchor words at
//! every checkpoint, and scores profession words in controlled
//! "[TARGET] is een [ATTRIBUTE]" sentences against those directions.

pub mod corpus;
pub mod embed;
pub mod model;
pub mod pipeline;
pub mod report;
pub mod stats;
pub mod subspace;
pub mod templates;
