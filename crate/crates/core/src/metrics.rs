//! Retrieval metrics and answer F1.

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::retrieval::RankedList;

pub const DEFAULT_CUTOFFS: [usize; 5] = [10, 20, 40, 80, 160];

/// `|needles ∩ top-n| / |needles|`; 0 for an empty needle set.
pub fn recall_at_n<S: AsRef<str>>(ranked: &RankedList, needles: &[S], n: usize) -> f64 {
    let set: HashSet<&str> = needles.iter().map(AsRef::as_ref).collect();
    if set.is_empty() {
        return 0.0;
    }
    let hits = ranked.doc_ids().take(n).filter(|d| set.contains(d)).count();
    hits as f64 / set.len() as f64
}

/// Binary-gain NDCG with `1 / log2(i + 1)` discounts.
pub fn ndcg_at_n<S: AsRef<str>>(ranked: &RankedList, needles: &[S], n: usize) -> f64 {
    let set: HashSet<&str> = needles.iter().map(AsRef::as_ref).collect();
    if set.is_empty() || n == 0 {
        return 0.0;
    }
    let discount = |pos: usize| 1.0 / ((pos + 1) as f64).log2();
    let dcg: f64 = ranked
        .doc_ids()
        .take(n)
        .enumerate()
        .filter(|(_, d)| set.contains(d))
        .map(|(i, _)| discount(i + 1))
        .sum();
    let ideal: f64 = (1..=set.len().min(n)).map(discount).sum();
    dcg / ideal
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CutoffScores {
    pub recall: f64,
    pub ndcg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalReport {
    pub retriever: String,
    pub samples: usize,
    pub at: BTreeMap<usize, CutoffScores>,
    pub per_hop: BTreeMap<u8, HopReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HopReport {
    pub samples: usize,
    pub at: BTreeMap<usize, CutoffScores>,
}

#[derive(Default)]
struct Accumulator {
    samples: usize,
    sums: BTreeMap<usize, (f64, f64)>,
}

impl Accumulator {
    fn add(&mut self, scores: &BTreeMap<usize, CutoffScores>) {
        self.samples += 1;
        for (&n, s) in scores {
            let e = self.sums.entry(n).or_insert((0.0, 0.0));
            e.0 += s.recall;
            e.1 += s.ndcg;
        }
    }

    fn means(&self) -> BTreeMap<usize, CutoffScores> {
        self.sums
            .iter()
            .map(|(&n, &(r, g))| {
                let k = self.samples.max(1) as f64;
                (
                    n,
                    CutoffScores {
                        recall: r / k,
                        ndcg: g / k,
                    },
                )
            })
            .collect()
    }
}

/// Mean Recall@N / NDCG@N over `(ranking, needles, hops)` triples.
pub fn retrieval_report<'a, S: AsRef<str> + 'a>(
    retriever: &str,
    runs: impl IntoIterator<Item = (&'a RankedList, &'a [S], u8)>,
    cutoffs: &[usize],
) -> RetrievalReport {
    let mut cutoffs = cutoffs.to_vec();
    cutoffs.sort_unstable();
    cutoffs.dedup();
    let mut all = Accumulator::default();
    let mut hops: BTreeMap<u8, Accumulator> = BTreeMap::new();
    for (ranked, needles, hop) in runs {
        let scores: BTreeMap<usize, CutoffScores> = cutoffs
            .iter()
            .map(|&n| {
                (
                    n,
                    CutoffScores {
                        recall: recall_at_n(ranked, needles, n),
                        ndcg: ndcg_at_n(ranked, needles, n),
                    },
                )
            })
            .collect();
        all.add(&scores);
        hops.entry(hop).or_default().add(&scores);
    }
    RetrievalReport {
        retriever: retriever.to_string(),
        samples: all.samples,
        at: all.means(),
        per_hop: hops
            .into_iter()
            .map(|(h, acc)| {
                (
                    h,
                    HopReport {
                        samples: acc.samples,
                        at: acc.means(),
                    },
                )
            })
            .collect(),
    }
}

/// Lowercase, strip ASCII punctuation, drop the articles a/an/the, collapse
/// whitespace.
pub fn normalize_answer(text: &str) -> String {
    let lowered = text.to_lowercase();
    let no_punct: String = lowered.chars().filter(|c| !c.is_ascii_punctuation()).collect();
    no_punct
        .split_whitespace()
        .filter(|w| !matches!(*w, "a" | "an" | "the"))
        .collect::<Vec<_>>()
        .join(" ")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct F1Score {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl F1Score {
    pub const ZERO: F1Score = F1Score {
        precision: 0.0,
        recall: 0.0,
        f1: 0.0,
    };
}

fn token_f1(prediction: &str, gold: &str) -> F1Score {
    let pred = normalize_answer(prediction);
    let gold = normalize_answer(gold);
    let p: Vec<&str> = pred.split_whitespace().collect();
    let g: Vec<&str> = gold.split_whitespace().collect();
    if p.is_empty() || g.is_empty() {
        let same = p.is_empty() && g.is_empty();
        let v = if same { 1.0 } else { 0.0 };
        return F1Score {
            precision: v,
            recall: v,
            f1: v,
        };
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for t in &g {
        *counts.entry(t).or_insert(0) += 1;
    }
    let mut common = 0usize;
    for t in &p {
        if let Some(c) = counts.get_mut(t) {
            if *c > 0 {
                *c -= 1;
                common += 1;
            }
        }
    }
    if common == 0 {
        return F1Score::ZERO;
    }
    let precision = common as f64 / p.len() as f64;
    let recall = common as f64 / g.len() as f64;
    F1Score {
        precision,
        recall,
        f1: 2.0 * precision * recall / (precision + recall),
    }
}

/// Token-bag F1 against the gold answer and each alias; the best candidate
/// wins.
pub fn answer_f1<S: AsRef<str>>(prediction: &str, gold: &str, aliases: &[S]) -> F1Score {
    std::iter::once(gold)
        .chain(aliases.iter().map(AsRef::as_ref))
        .map(|g| token_f1(prediction, g))
        .fold(F1Score::ZERO, |best, s| if s.f1 > best.f1 { s } else { best })
}
