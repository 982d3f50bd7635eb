use std::collections::{HashMap, HashSet};

use super::RankedList;
use crate::error::{Error, Result};

pub const DEFAULT_RRF_K: u32 = 60;

/// Reciprocal rank fusion: `score(d) = sum over lists of 1 / (k + rank(d))`.
pub fn fuse_rrf(lists: &[&RankedList], rrf_k: u32, strategy: &str) -> Result<RankedList> {
    if lists.is_empty() {
        return Err(Error::InvalidRanking("no lists to fuse".into()));
    }
    if rrf_k == 0 {
        return Err(Error::Config("rrf_k must be at least 1".into()));
    }
    let mut fused: HashMap<&str, f64> = HashMap::new();
    for list in lists {
        let mut seen = HashSet::new();
        for e in list.entries() {
            if !seen.insert(e.doc_id.as_str()) {
                return Err(Error::DuplicateRankedDoc {
                    strategy: list.strategy.clone(),
                    doc_id: e.doc_id.clone(),
                });
            }
            *fused.entry(&e.doc_id).or_insert(0.0) += 1.0 / (rrf_k as f64 + e.rank as f64);
        }
    }
    let scored = fused.into_iter().map(|(d, s)| (d.to_string(), s)).collect();
    RankedList::from_scores(lists[0].query_id.clone(), strategy, scored, None)
}
