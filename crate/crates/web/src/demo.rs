//! Demo logic over a small built-in corpus. Everything returns plain data so
//! it can be exercised natively as well as from the browser.

use haykit::corpus::{Corpus, QaSample};
use haykit::haystack::{assemble_haystack, order_haystack, BudgetSpec, OrderingPolicy};
use haykit::rerank::{rerank_ppr, PprConfig};
use haykit::retrieval::{score_bm25, Bm25Params, RankedList, SparseIndex};
use haykit::tokenize::ReferenceTokenizer;
use haykit::Result;
use serde::{Deserialize, Serialize};

const CORPUS: &str = include_str!("../data/corpus.jsonl");
const QA: &str = include_str!("../data/qa.jsonl");

#[derive(Deserialize)]
struct Raw {
    id: String,
    title: String,
    text: String,
    #[serde(default)]
    links: Vec<String>,
}

pub struct Demo {
    corpus: Corpus,
    index: SparseIndex,
    samples: Vec<QaSample>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankRow {
    pub rank: usize,
    pub doc_id: String,
    pub title: String,
    pub score: f64,
    pub is_needle: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    pub question: String,
    pub bm25: Vec<RankRow>,
    pub reranked: Vec<RankRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MemberRow {
    pub doc_id: String,
    pub title: String,
    pub tokens: usize,
    pub is_needle: bool,
    pub truncated: bool,
    pub preview: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HaystackView {
    pub budget: usize,
    pub total_tokens: usize,
    pub members: Vec<MemberRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SampleInfo {
    pub id: String,
    pub question: String,
    pub answer: String,
    pub needles: Vec<String>,
    pub needle_tokens: usize,
}

impl Demo {
    pub fn new() -> Result<Demo> {
        let records = CORPUS
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| serde_json::from_str::<Raw>(l).map(|r| (r.id, r.title, r.text, r.links, false)))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let (corpus, _) = Corpus::from_records(records, &ReferenceTokenizer)?;
        let samples = QA
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect::<std::result::Result<Vec<QaSample>, _>>()?;
        haykit::corpus::validate_samples(&samples, &corpus)?;
        let index = SparseIndex::build(&corpus);
        Ok(Demo { corpus, index, samples })
    }

    pub fn samples(&self) -> Vec<SampleInfo> {
        self.samples
            .iter()
            .map(|s| SampleInfo {
                id: s.id.clone(),
                question: s.question.clone(),
                answer: s.answer.clone(),
                needles: s.needles.clone(),
                needle_tokens: haykit::haystack::needle_tokens(s, &self.corpus).unwrap_or(0),
            })
            .collect()
    }

    fn sample(&self, index: usize) -> Result<&QaSample> {
        self.samples
            .get(index)
            .ok_or_else(|| haykit::Error::Config(format!("no sample #{index}")))
    }

    fn rows(&self, list: &RankedList, sample: &QaSample, top: usize) -> Vec<RankRow> {
        list.entries()
            .iter()
            .take(top)
            .map(|e| RankRow {
                rank: e.rank,
                doc_id: e.doc_id.clone(),
                title: self.corpus.get(&e.doc_id).map_or_else(String::new, |d| d.title.clone()),
                score: e.score,
                is_needle: sample.needles.contains(&e.doc_id),
            })
            .collect()
    }

    fn bm25(&self, sample: &QaSample) -> Result<RankedList> {
        score_bm25(&self.index, &sample.id, &sample.question, usize::MAX, Bm25Params::default())
    }

    /// BM25 next to BM25 reranked by personalized PageRank.
    pub fn compare(&self, sample_index: usize, num_seeds: usize, damping: f64, top: usize) -> Result<Comparison> {
        let sample = self.sample(sample_index)?;
        let base = self.bm25(sample)?;
        let config = PprConfig {
            num_seeds,
            damping,
            ..PprConfig::for_retriever("bm25")
        };
        let reranked = rerank_ppr(&base, self.corpus.graph(), &config)?;
        Ok(Comparison {
            question: sample.question.clone(),
            bm25: self.rows(&base, sample, top),
            reranked: self.rows(&reranked, sample, top),
        })
    }

    /// Haystack for a sample at a token budget; `seed` selects a random
    /// permutation, `None` keeps retriever order.
    pub fn haystack(&self, sample_index: usize, ppr: bool, budget: usize, seed: Option<u64>) -> Result<HaystackView> {
        let sample = self.sample(sample_index)?;
        let mut ranked = self.bm25(sample)?;
        if ppr {
            ranked = rerank_ppr(&ranked, self.corpus.graph(), &PprConfig::for_retriever("bm25"))?;
        }
        let haystack = assemble_haystack(sample, &ranked, &self.corpus, BudgetSpec::from_tokens(budget), &ReferenceTokenizer)?;
        let policy = seed.map_or(OrderingPolicy::RetrieverRanked, |seed| OrderingPolicy::Random { seed });
        let members = order_haystack(&haystack, policy)
            .into_iter()
            .map(|m| MemberRow {
                preview: m.text.chars().take(80).collect(),
                doc_id: m.doc_id,
                title: m.title,
                tokens: m.tokens,
                is_needle: m.is_needle,
                truncated: m.truncated,
            })
            .collect();
        Ok(HaystackView {
            budget,
            total_tokens: haystack.total_tokens(),
            members,
        })
    }
}
