//! Aspect mining for entity-centric queries: candidates from a query log,
//! class-level propagation through a knowledge base, retrieval-based
//! deduplication, vertical grouping and diversity-aware ranking.

// `!(x > 0.0)` rejects NaN along with nonpositive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod candidates;
pub mod config;
pub mod dedup;
pub mod error;
pub mod eval;
pub mod grouping;
pub mod kb;
pub mod logmodel;
pub mod pipeline;
pub mod propagation;
pub mod retrieval;
pub mod selection;
pub mod synthgen;

pub use config::Config;
pub use error::{Error, Result};
