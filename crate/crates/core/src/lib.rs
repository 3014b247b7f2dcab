//! Semi-supervised detection of machine-generated text through tensor
//! decomposition of human-written co-occurrence structure.
//!
//! The pipeline tokenizes a corpus, builds a per-document term co-occurrence
//! tensor from human documents only, factorizes it with CP-ALS, and scores any
//! document by how poorly its own co-occurrence slice is reconstructed from
//! the human term factors. A one-dimensional anomaly detector then turns those
//! errors into a decision.

pub mod error;
pub mod numerics;
pub mod corpus;
pub mod cooc;
pub mod cpd;
pub mod oodscore;
pub mod model;
pub mod detect;
pub mod audit;
pub mod config;
pub mod eval;
pub mod baseline;
pub mod synth;
pub mod cli;

pub use error::{Error, Result};
