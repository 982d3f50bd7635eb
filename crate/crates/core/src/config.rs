//! Declarative run configuration, read from TOML.
//!
//! ```toml
//! tokenizer = "reference"          # or "external(127.0.0.1:7070)"
//!
//! [paths]
//! corpus = "data/corpus.jsonl"
//! qa = "data/qa.jsonl"
//! index_dir = "index"
//! out = "out"
//!
//! [retrieval]
//! k1 = 1.2
//! b = 0.75
//! rrf_k = 60
//!
//! [ppr]                            # applies to every base retriever
//! tolerance = 1e-8
//! [ppr.hybrid]                     # per-retriever override
//! damping = 0.85
//!
//! [eval]
//! retrievers = ["bm25", "bm25+ppr"]
//! budgets = [0, 8192, 16384]
//! ordering = "ranked"
//! mode = "static"
//!
//! [client]
//! kind = "http"
//! endpoint = "http://localhost:8000/v1/chat/completions"
//! model = "my-model"
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::client::{RetryPolicy, SamplingParams};
use crate::engine::{EngineParams, PprSettings, RetrieverSpec};
use crate::error::{Error, Result};
use crate::harness::DynamicMode;
use crate::haystack::{BudgetSpec, OrderingPolicy};
use crate::rerank::PprConfig;
use crate::retrieval::{Bm25Params, DEFAULT_RRF_K};
use crate::tokenize::TokenizerSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub tokenizer: TokenizerSpec,
    pub paths: Paths,
    pub retrieval: RetrievalSection,
    pub ppr: PprSection,
    pub eval: EvalSection,
    pub client: ClientSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub corpus: Option<PathBuf>,
    pub qa: Option<PathBuf>,
    pub doc_embeddings: Option<PathBuf>,
    pub doc_embedding_ids: Option<PathBuf>,
    pub query_embeddings: Option<PathBuf>,
    pub query_embedding_ids: Option<PathBuf>,
    pub index_dir: PathBuf,
    pub out: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            corpus: None,
            qa: None,
            doc_embeddings: None,
            doc_embedding_ids: None,
            query_embeddings: None,
            query_embedding_ids: None,
            index_dir: PathBuf::from("index"),
            out: PathBuf::from("out"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetrievalSection {
    pub k1: f64,
    pub b: f64,
    pub rrf_k: u32,
    pub top_n: Option<usize>,
    /// Base URL of an embedding service exposing `POST /embed`.
    pub embed_endpoint: Option<String>,
}

impl Default for RetrievalSection {
    fn default() -> Self {
        let bm25 = Bm25Params::default();
        RetrievalSection {
            k1: bm25.k1,
            b: bm25.b,
            rrf_k: DEFAULT_RRF_K,
            top_n: None,
            embed_endpoint: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PprOverride {
    pub seeds: Option<usize>,
    pub damping: Option<f64>,
    pub tolerance: Option<f64>,
    pub max_iter: Option<usize>,
    pub symmetrize: Option<bool>,
}

impl PprOverride {
    fn apply(&self, cfg: &mut PprConfig) {
        if let Some(v) = self.seeds {
            cfg.num_seeds = v;
        }
        if let Some(v) = self.damping {
            cfg.damping = v;
        }
        if let Some(v) = self.tolerance {
            cfg.tolerance = v;
        }
        if let Some(v) = self.max_iter {
            cfg.max_iterations = v;
        }
        if let Some(v) = self.symmetrize {
            cfg.symmetrize = v;
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PprSection {
    #[serde(flatten)]
    pub all: PprOverride,
    pub bm25: PprOverride,
    pub dense: PprOverride,
    pub hybrid: PprOverride,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OrderingKind {
    #[default]
    Ranked,
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    #[default]
    Static,
    NoContext,
    Enforced,
    Variable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub retrievers: Vec<RetrieverSpec>,
    /// Token budgets; 0 means needles only.
    pub budgets: Vec<usize>,
    pub ordering: OrderingKind,
    pub seeds: Vec<u64>,
    pub mode: EvalMode,
    pub rounds: usize,
    pub max_rounds: usize,
    pub final_uses_original: bool,
    pub strict_answer: bool,
    pub concurrency: usize,
    /// Restrict to these sample ids (all when empty).
    pub samples: Vec<String>,
    pub cutoffs: Vec<usize>,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            retrievers: vec![RetrieverSpec::BM25],
            budgets: vec![8192],
            ordering: OrderingKind::Ranked,
            seeds: vec![0, 1, 2],
            mode: EvalMode::Static,
            rounds: 3,
            max_rounds: 3,
            final_uses_original: false,
            strict_answer: false,
            concurrency: 4,
            samples: Vec::new(),
            cutoffs: crate::metrics::DEFAULT_CUTOFFS.to_vec(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ClientKind {
    #[default]
    Http,
    Oracle,
    Scripted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClientSection {
    pub kind: ClientKind,
    pub endpoint: String,
    pub model: String,
    #[serde(flatten)]
    pub sampling: SamplingParams,
    #[serde(flatten)]
    pub retry: RetryPolicy,
    /// Needle-aware oracle: needles must sit within this many leading
    /// documents.
    pub oracle_window: usize,
    /// Scripted client: JSON file `{"default": [...], "samples": {id: [...]}}`.
    pub script: Option<PathBuf>,
}

impl Default for ClientSection {
    fn default() -> Self {
        ClientSection {
            kind: ClientKind::Http,
            endpoint: "http://127.0.0.1:8000/v1/chat/completions".into(),
            model: "default".into(),
            sampling: SamplingParams::default(),
            retry: RetryPolicy::default(),
            oracle_window: 5,
            script: None,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<RunConfig> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = RunConfig::from_toml(&text)?;
        cfg.resolve_relative_to(path.parent().unwrap_or(Path::new(".")));
        Ok(cfg)
    }

    /// Makes relative paths relative to the config file's directory.
    pub fn resolve_relative_to(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        let paths = &mut self.paths;
        for p in [
            &mut paths.corpus,
            &mut paths.qa,
            &mut paths.doc_embeddings,
            &mut paths.doc_embedding_ids,
            &mut paths.query_embeddings,
            &mut paths.query_embedding_ids,
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
        fix(&mut paths.index_dir);
        fix(&mut paths.out);
        if let Some(p) = &mut self.client.script {
            fix(p);
        }
    }

    pub fn engine_params(&self) -> Result<EngineParams> {
        let mut ppr = PprSettings::default();
        for (cfg, over) in [
            (&mut ppr.bm25, &self.ppr.bm25),
            (&mut ppr.dense, &self.ppr.dense),
            (&mut ppr.hybrid, &self.ppr.hybrid),
        ] {
            self.ppr.all.apply(cfg);
            over.apply(cfg);
            cfg.validate()?;
        }
        if self.retrieval.rrf_k == 0 {
            return Err(Error::Config("retrieval.rrf_k must be at least 1".into()));
        }
        Ok(EngineParams {
            bm25: Bm25Params {
                k1: self.retrieval.k1,
                b: self.retrieval.b,
            },
            rrf_k: self.retrieval.rrf_k,
            top_n: self.retrieval.top_n,
            ppr,
        })
    }

    pub fn budgets(&self) -> Vec<BudgetSpec> {
        self.eval.budgets.iter().map(|&b| BudgetSpec::from_tokens(b)).collect()
    }

    pub fn orderings(&self) -> Result<Vec<OrderingPolicy>> {
        match self.eval.ordering {
            OrderingKind::Ranked => Ok(vec![OrderingPolicy::RetrieverRanked]),
            OrderingKind::Random if self.eval.seeds.is_empty() => {
                Err(Error::Config("random ordering needs explicit eval.seeds".into()))
            }
            OrderingKind::Random => Ok(self
                .eval
                .seeds
                .iter()
                .map(|&seed| OrderingPolicy::Random { seed })
                .collect()),
        }
    }

    pub fn dynamic_mode(&self) -> Option<DynamicMode> {
        match self.eval.mode {
            EvalMode::Enforced => Some(DynamicMode::Enforced {
                rounds: self.eval.rounds,
            }),
            EvalMode::Variable => Some(DynamicMode::Variable {
                max_rounds: self.eval.max_rounds,
            }),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.engine_params()?;
        self.orderings()?;
        if self.eval.retrievers.is_empty() {
            return Err(Error::Config("eval.retrievers is empty".into()));
        }
        if self.eval.budgets.is_empty() {
            return Err(Error::Config("eval.budgets is empty".into()));
        }
        if self.eval.concurrency == 0 {
            return Err(Error::Config("eval.concurrency must be at least 1".into()));
        }
        if let Some(mode) = self.dynamic_mode() {
            mode.validate()?;
        }
        if self.client.retry.max_attempts == 0 {
            return Err(Error::Config("client.max_attempts must be at least 1".into()));
        }
        Ok(())
    }
}
