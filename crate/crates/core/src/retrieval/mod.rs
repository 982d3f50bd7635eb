//! Sparse, dense and fused document ranking.

mod dense;
mod fusion;
mod sparse;

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use dense::{load_embeddings, read_embedding_file, score_dense, write_embedding_file, EmbeddingStore};
pub use fusion::{fuse_rrf, DEFAULT_RRF_K};
pub use sparse::{analyze, score_bm25, Bm25Params, Posting, SparseIndex};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedEntry {
    pub doc_id: String,
    pub score: f64,
    pub rank: usize,
}

/// Scored, strictly ordered document ids for one query.
///
/// Ranks are contiguous from 1, scores never increase down the list and a
/// document appears at most once.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedList {
    pub query_id: String,
    pub strategy: String,
    entries: Vec<RankedEntry>,
}

impl RankedList {
    /// Sorts by score descending, ties by doc id ascending, then keeps the
    /// first `top_n` (all when `None`).
    pub fn from_scores(
        query_id: impl Into<String>,
        strategy: impl Into<String>,
        mut scored: Vec<(String, f64)>,
        top_n: Option<usize>,
    ) -> Result<RankedList> {
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        if let Some(n) = top_n {
            scored.truncate(n);
        }
        RankedList::from_ordered(query_id, strategy, scored)
    }

    /// Takes entries in the given order and assigns ranks 1..; fails if the
    /// order violates the list invariants.
    pub fn from_ordered(
        query_id: impl Into<String>,
        strategy: impl Into<String>,
        ordered: Vec<(String, f64)>,
    ) -> Result<RankedList> {
        let strategy = strategy.into();
        let mut seen = HashSet::with_capacity(ordered.len());
        let mut prev = f64::INFINITY;
        let mut entries = Vec::with_capacity(ordered.len());
        for (i, (doc_id, score)) in ordered.into_iter().enumerate() {
            if score.is_nan() {
                return Err(Error::InvalidRanking(format!("NaN score for `{doc_id}`")));
            }
            if score > prev {
                return Err(Error::InvalidRanking(format!(
                    "score increases at rank {} (`{doc_id}`)",
                    i + 1
                )));
            }
            if !seen.insert(doc_id.clone()) {
                return Err(Error::DuplicateRankedDoc { strategy, doc_id });
            }
            prev = score;
            entries.push(RankedEntry {
                doc_id,
                score,
                rank: i + 1,
            });
        }
        Ok(RankedList {
            query_id: query_id.into(),
            strategy,
            entries,
        })
    }

    pub fn entries(&self) -> &[RankedEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn doc_ids(&self) -> impl Iterator<Item = &str> + '_ {
        self.entries.iter().map(|e| e.doc_id.as_str())
    }

    pub fn rank_map(&self) -> HashMap<&str, usize> {
        self.entries
            .iter()
            .map(|e| (e.doc_id.as_str(), e.rank))
            .collect()
    }

    /// Re-checks every invariant; used on lists read from disk.
    pub fn validate(&self) -> Result<()> {
        let mut prev = f64::INFINITY;
        let mut seen = HashSet::new();
        for (i, e) in self.entries.iter().enumerate() {
            if e.rank != i + 1 {
                return Err(Error::InvalidRanking(format!(
                    "rank {} at position {}",
                    e.rank,
                    i + 1
                )));
            }
            if e.score.is_nan() || e.score > prev {
                return Err(Error::InvalidRanking(format!("score order broken at rank {}", e.rank)));
            }
            if !seen.insert(e.doc_id.as_str()) {
                return Err(Error::DuplicateRankedDoc {
                    strategy: self.strategy.clone(),
                    doc_id: e.doc_id.clone(),
                });
            }
            prev = e.score;
        }
        Ok(())
    }
}
