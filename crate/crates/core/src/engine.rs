//! Resolves a retriever tag (`bm25`, `dense`, `hybrid`, each optionally
//! `+ppr`) to a ranking over the corpus.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, HyperlinkGraph};
use crate::error::{Error, Result};
use crate::rerank::{rerank_ppr, PprConfig};
use crate::retrieval::{
    fuse_rrf, read_embedding_file, score_bm25, score_dense, Bm25Params, EmbeddingStore, RankedList, SparseIndex,
    DEFAULT_RRF_K,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaseRetriever {
    Bm25,
    Dense,
    Hybrid,
}

impl BaseRetriever {
    pub fn tag(self) -> &'static str {
        match self {
            BaseRetriever::Bm25 => "bm25",
            BaseRetriever::Dense => "dense",
            BaseRetriever::Hybrid => "hybrid",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct RetrieverSpec {
    pub base: BaseRetriever,
    pub ppr: bool,
}

impl RetrieverSpec {
    pub const BM25: RetrieverSpec = RetrieverSpec {
        base: BaseRetriever::Bm25,
        ppr: false,
    };
}

impl fmt::Display for RetrieverSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.base.tag())?;
        if self.ppr {
            f.write_str("+ppr")?;
        }
        Ok(())
    }
}

impl FromStr for RetrieverSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (base, ppr) = match s.strip_suffix("+ppr") {
            Some(b) => (b, true),
            None => (s, false),
        };
        let base = match base {
            "bm25" => BaseRetriever::Bm25,
            "dense" => BaseRetriever::Dense,
            "hybrid" => BaseRetriever::Hybrid,
            _ => return Err(Error::Config(format!("unknown retriever `{s}`"))),
        };
        Ok(RetrieverSpec { base, ppr })
    }
}

impl TryFrom<String> for RetrieverSpec {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<RetrieverSpec> for String {
    fn from(r: RetrieverSpec) -> String {
        r.to_string()
    }
}

/// Source of query vectors for dense retrieval.
pub trait QueryEmbedder: Send + Sync {
    fn embed(&self, query_id: &str, text: &str) -> Result<Vec<f32>>;
}

/// Query vectors read from an `HCEMB1` file keyed by query (sample) id.
/// Refined queries have no precomputed vector.
#[derive(Debug, Clone, Default)]
pub struct PrecomputedQueries {
    by_id: HashMap<String, Vec<f32>>,
}

impl PrecomputedQueries {
    pub fn new(by_id: HashMap<String, Vec<f32>>) -> Self {
        PrecomputedQueries { by_id }
    }

    pub fn load(vectors: &Path, ids: &Path) -> Result<Self> {
        let (count, data, dim) = read_embedding_file(vectors)?;
        let id_text = std::fs::read_to_string(ids).map_err(|e| Error::io(ids, e))?;
        let ids: Vec<&str> = id_text.lines().map(str::trim).filter(|l| !l.is_empty()).collect();
        if ids.len() != count {
            return Err(Error::Embedding(format!("{count} query vectors but {} ids", ids.len())));
        }
        let by_id = ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.to_string(), data[i * dim..(i + 1) * dim].to_vec()))
            .collect();
        Ok(PrecomputedQueries { by_id })
    }
}

impl QueryEmbedder for PrecomputedQueries {
    fn embed(&self, query_id: &str, _text: &str) -> Result<Vec<f32>> {
        self.by_id.get(query_id).cloned().ok_or_else(|| {
            Error::Embedding(format!(
                "no query vector for `{query_id}`; refined queries need an embedding endpoint"
            ))
        })
    }
}

/// `POST /embed {"texts": [...]}` → `{"vectors": [[...]]}`.
#[cfg(feature = "http")]
pub struct HttpEmbedder {
    url: String,
    agent: ureq::Agent,
}

#[cfg(feature = "http")]
impl HttpEmbedder {
    pub fn new(base_url: &str) -> Self {
        let url = format!("{}/embed", base_url.trim_end_matches('/'));
        HttpEmbedder {
            url,
            agent: ureq::Agent::new_with_defaults(),
        }
    }
}

#[cfg(feature = "http")]
impl QueryEmbedder for HttpEmbedder {
    fn embed(&self, _query_id: &str, text: &str) -> Result<Vec<f32>> {
        #[derive(Deserialize)]
        struct Reply {
            vectors: Vec<Vec<f32>>,
        }
        let reply: Reply = self
            .agent
            .post(&self.url)
            .send_json(serde_json::json!({ "texts": [text] }))
            .and_then(|mut r| r.body_mut().read_json())
            .map_err(|e| Error::Embedding(format!("{}: {e}", self.url)))?;
        reply
            .vectors
            .into_iter()
            .next()
            .ok_or_else(|| Error::Embedding("embedding endpoint returned no vectors".into()))
    }
}

/// Tries precomputed vectors first, then falls back to a second embedder.
pub struct ChainedEmbedder<A, B>(pub A, pub B);

impl<A: QueryEmbedder, B: QueryEmbedder> QueryEmbedder for ChainedEmbedder<A, B> {
    fn embed(&self, query_id: &str, text: &str) -> Result<Vec<f32>> {
        self.0.embed(query_id, text).or_else(|_| self.1.embed(query_id, text))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PprSettings {
    pub bm25: PprConfig,
    pub dense: PprConfig,
    pub hybrid: PprConfig,
}

impl Default for PprSettings {
    fn default() -> Self {
        PprSettings {
            bm25: PprConfig::for_retriever("bm25"),
            dense: PprConfig::for_retriever("dense"),
            hybrid: PprConfig::for_retriever("hybrid"),
        }
    }
}

impl PprSettings {
    pub fn for_base(&self, base: BaseRetriever) -> &PprConfig {
        match base {
            BaseRetriever::Bm25 => &self.bm25,
            BaseRetriever::Dense => &self.dense,
            BaseRetriever::Hybrid => &self.hybrid,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EngineParams {
    pub bm25: Bm25Params,
    pub rrf_k: u32,
    /// Length of base rankings; `None` ranks every scored document.
    pub top_n: Option<usize>,
    pub ppr: PprSettings,
}

impl Default for EngineParams {
    fn default() -> Self {
        EngineParams {
            bm25: Bm25Params::default(),
            rrf_k: DEFAULT_RRF_K,
            top_n: None,
            ppr: PprSettings::default(),
        }
    }
}

pub struct RetrievalEngine {
    corpus: Corpus,
    sparse: SparseIndex,
    dense: Option<EmbeddingStore>,
    embedder: Option<Box<dyn QueryEmbedder>>,
    symmetric: Option<HyperlinkGraph>,
    params: EngineParams,
}

impl RetrievalEngine {
    pub fn new(corpus: Corpus, sparse: SparseIndex, params: EngineParams) -> Self {
        let needs_sym = [&params.ppr.bm25, &params.ppr.dense, &params.ppr.hybrid]
            .iter()
            .any(|c| c.symmetrize);
        let symmetric = needs_sym.then(|| corpus.graph().symmetrized());
        RetrievalEngine {
            corpus,
            sparse,
            dense: None,
            embedder: None,
            symmetric,
            params,
        }
    }

    pub fn with_dense(mut self, store: EmbeddingStore, embedder: Box<dyn QueryEmbedder>) -> Self {
        self.dense = Some(store);
        self.embedder = Some(embedder);
        self
    }

    pub fn corpus(&self) -> &Corpus {
        &self.corpus
    }

    pub fn sparse(&self) -> &SparseIndex {
        &self.sparse
    }

    pub fn params(&self) -> &EngineParams {
        &self.params
    }

    pub fn rank_bm25(&self, query_id: &str, query: &str) -> Result<RankedList> {
        let n = self.params.top_n.unwrap_or(usize::MAX);
        match score_bm25(&self.sparse, query_id, query, n, self.params.bm25) {
            // nothing to match on: an empty ranking, haystack falls back to id order
            Err(Error::EmptyQuery) => RankedList::from_ordered(query_id, "bm25", Vec::new()),
            other => other,
        }
    }

    pub fn rank_dense(&self, query_id: &str, query: &str) -> Result<RankedList> {
        let (store, embedder) = match (&self.dense, &self.embedder) {
            (Some(s), Some(e)) => (s, e),
            _ => return Err(Error::Config("dense retrieval needs document and query embeddings".into())),
        };
        let vector = embedder.embed(query_id, query)?;
        score_dense(store, query_id, &vector, self.params.top_n.unwrap_or(usize::MAX))
    }

    pub fn rank_base(&self, base: BaseRetriever, query_id: &str, query: &str) -> Result<RankedList> {
        match base {
            BaseRetriever::Bm25 => self.rank_bm25(query_id, query),
            BaseRetriever::Dense => self.rank_dense(query_id, query),
            BaseRetriever::Hybrid => {
                let sparse = self.rank_bm25(query_id, query)?;
                let dense = self.rank_dense(query_id, query)?;
                fuse_rrf(&[&sparse, &dense], self.params.rrf_k, "hybrid")
            }
        }
    }

    pub fn rank(&self, spec: RetrieverSpec, query_id: &str, query: &str) -> Result<RankedList> {
        let base = self.rank_base(spec.base, query_id, query)?;
        if !spec.ppr {
            return Ok(base);
        }
        let config = self.params.ppr.for_base(spec.base);
        if base.is_empty() {
            return RankedList::from_ordered(query_id, spec.to_string(), Vec::new());
        }
        let graph = match (&self.symmetric, config.symmetrize) {
            (Some(g), true) => g,
            _ => self.corpus.graph(),
        };
        // the graph is already symmetrized here when requested
        let config = PprConfig {
            symmetrize: false,
            ..*config
        };
        rerank_ppr(&base, graph, &config)
    }
}
