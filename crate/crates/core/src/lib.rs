//! Long-context multi-hop QA toolkit: corpus ingestion, sparse and dense
//! retrieval, graph-based reranking, haystack construction, metrics and an
//! evaluation harness for static and dynamic prompting.

mod binio;
pub mod client;
pub mod config;
pub mod corpus;
pub mod engine;
pub mod error;
pub mod harness;
pub mod haystack;
pub mod metrics;
pub mod report;
pub mod rerank;
pub mod runner;
pub mod retrieval;
pub mod tokenize;

pub use error::{Error, Result};

use sha2::{Digest, Sha256};

/// Lowercase hex SHA-256 of `bytes`.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
