//! Experiment orchestration: loading a workspace from a [`RunConfig`],
//! running sample × retriever × budget × ordering grids with bounded
//! concurrency, and writing results, traces and a reproducibility manifest.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;

use serde::{Deserialize, Serialize};

use crate::client::{ModelClient, NeedleOracleClient, OracleEntry, ScriptedClient};
use crate::config::{ClientKind, EvalMode, RunConfig};
use crate::corpus::{load_qa_samples, Corpus, IngestStats, QaSample};
use crate::engine::{PrecomputedQueries, QueryEmbedder, RetrievalEngine, RetrieverSpec};
use crate::error::{Error, Result};
use crate::harness::{ContextMode, DynamicTrace, EvalResult, EvalSettings, Evaluator, Termination};
use crate::haystack::{BudgetSpec, OrderingPolicy};
use crate::metrics::{retrieval_report, RetrievalReport};
use crate::retrieval::{load_embeddings, RankedList, SparseIndex};
use crate::sha256_hex;
use crate::tokenize::Tokenizer;

pub const CORPUS_SNAPSHOT: &str = "corpus.bin";
pub const SPARSE_SNAPSHOT: &str = "sparse.bin";
pub const INGEST_INFO: &str = "ingest.json";
pub const RESULTS_FILE: &str = "results.jsonl";
pub const TRACES_FILE: &str = "traces.jsonl";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const RETRIEVAL_REPORT_FILE: &str = "retrieval_report.json";

/// Written next to the corpus snapshot so later commands can tell whether
/// the snapshot still matches the source file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestInfo {
    pub corpus_hash: String,
    pub tokenizer: String,
    pub stats: IngestStats,
}

fn file_hash(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

fn require_path<'a>(path: &'a Option<PathBuf>, key: &str) -> Result<&'a Path> {
    let p = path
        .as_deref()
        .ok_or_else(|| Error::Config(format!("paths.{key} is not set")))?;
    if !p.exists() {
        return Err(Error::Config(format!("paths.{key} does not exist: {}", p.display())));
    }
    Ok(p)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Parses the corpus file and stores a binary snapshot in the index dir.
pub fn ingest(config: &RunConfig, tokenizer: &dyn Tokenizer) -> Result<IngestInfo> {
    let source = require_path(&config.paths.corpus, "corpus")?;
    let (corpus, stats) = Corpus::load(source, tokenizer)?;
    let dir = &config.paths.index_dir;
    create_dir(dir)?;
    corpus.save(&dir.join(CORPUS_SNAPSHOT))?;
    let info = IngestInfo {
        corpus_hash: file_hash(source)?,
        tokenizer: tokenizer.id(),
        stats,
    };
    write_json(&dir.join(INGEST_INFO), &info)?;
    Ok(info)
}

/// Uses the snapshot when it was built from the current corpus file with
/// the active tokenizer, otherwise parses the corpus file again.
pub fn load_corpus(config: &RunConfig, tokenizer: &dyn Tokenizer) -> Result<(Corpus, String)> {
    let source = require_path(&config.paths.corpus, "corpus")?;
    let hash = file_hash(source)?;
    let dir = &config.paths.index_dir;
    let info: Option<IngestInfo> = fs::read_to_string(dir.join(INGEST_INFO))
        .ok()
        .and_then(|t| serde_json::from_str(&t).ok());
    let snapshot = dir.join(CORPUS_SNAPSHOT);
    if let Some(info) = info {
        if info.corpus_hash == hash && info.tokenizer == tokenizer.id() && snapshot.exists() {
            return Ok((Corpus::open(&snapshot)?, hash));
        }
    }
    let (corpus, _) = Corpus::load(source, tokenizer)?;
    Ok((corpus, hash))
}

/// Builds the sparse index and stores it in the index dir.
pub fn build_index(config: &RunConfig, corpus: &Corpus) -> Result<SparseIndex> {
    let index = SparseIndex::build(corpus);
    create_dir(&config.paths.index_dir)?;
    index.save(&config.paths.index_dir.join(SPARSE_SNAPSHOT))?;
    Ok(index)
}

fn load_sparse(config: &RunConfig, corpus: &Corpus) -> Result<SparseIndex> {
    let path = config.paths.index_dir.join(SPARSE_SNAPSHOT);
    if path.exists() {
        let index = SparseIndex::open(&path)?;
        let same_docs = index.doc_count() == corpus.len()
            && index.doc_ids().iter().zip(corpus.documents()).all(|(a, d)| *a == d.id);
        if same_docs {
            return Ok(index);
        }
    }
    Ok(SparseIndex::build(corpus))
}

fn query_embedder(config: &RunConfig) -> Result<Option<Box<dyn QueryEmbedder>>> {
    let paths = &config.paths;
    let precomputed = match (&paths.query_embeddings, &paths.query_embedding_ids) {
        (Some(v), Some(i)) => Some(PrecomputedQueries::load(v, i)?),
        (None, None) => None,
        _ => {
            return Err(Error::Config(
                "paths.query_embeddings and paths.query_embedding_ids go together".into(),
            ))
        }
    };
    #[cfg(feature = "http")]
    if let Some(url) = &config.retrieval.embed_endpoint {
        let http = crate::engine::HttpEmbedder::new(url);
        return Ok(Some(match precomputed {
            Some(p) => Box::new(crate::engine::ChainedEmbedder(p, http)),
            None => Box::new(http),
        }));
    }
    #[cfg(not(feature = "http"))]
    if config.retrieval.embed_endpoint.is_some() {
        return Err(Error::Config("built without HTTP support; embed_endpoint unavailable".into()));
    }
    Ok(precomputed.map(|p| Box::new(p) as Box<dyn QueryEmbedder>))
}

/// Everything an evaluation needs, loaded once.
pub struct Workspace {
    pub config: RunConfig,
    pub tokenizer: Box<dyn Tokenizer>,
    pub engine: RetrievalEngine,
    pub samples: Vec<QaSample>,
    pub corpus_hash: String,
    pub qa_hash: String,
}

impl Workspace {
    pub fn open(config: RunConfig) -> Result<Workspace> {
        config.validate()?;
        let tokenizer = config.tokenizer.build()?;
        let (corpus, corpus_hash) = load_corpus(&config, tokenizer.as_ref())?;
        corpus.check_tokenizer(tokenizer.as_ref())?;
        let qa_path = require_path(&config.paths.qa, "qa")?;
        let mut samples = load_qa_samples(qa_path, &corpus)?;
        let qa_hash = file_hash(qa_path)?;
        if !config.eval.samples.is_empty() {
            let by_id: HashMap<&str, &QaSample> = samples.iter().map(|s| (s.id.as_str(), s)).collect();
            let mut chosen = Vec::new();
            for id in &config.eval.samples {
                let s = by_id
                    .get(id.as_str())
                    .ok_or_else(|| Error::Config(format!("unknown sample id `{id}`")))?;
                chosen.push((*s).clone());
            }
            samples = chosen;
        }
        let sparse = load_sparse(&config, &corpus)?;
        let mut engine = RetrievalEngine::new(corpus, sparse, config.engine_params()?);
        if let Some(vectors) = &config.paths.doc_embeddings {
            let ids = require_path(&config.paths.doc_embedding_ids, "doc_embedding_ids")?;
            let store = load_embeddings(vectors, ids)?;
            if let Some(embedder) = query_embedder(&config)? {
                engine = engine.with_dense(store, embedder);
            }
        }
        Ok(Workspace {
            config,
            tokenizer,
            engine,
            samples,
            corpus_hash,
            qa_hash,
        })
    }

    pub fn sample(&self, id: &str) -> Result<&QaSample> {
        self.samples
            .iter()
            .find(|s| s.id == id)
            .ok_or_else(|| Error::Config(format!("unknown sample id `{id}`")))
    }

    /// The client named by the config's `[client]` section.
    pub fn client(&self) -> Result<Box<dyn ModelClient>> {
        let section = &self.config.client;
        match section.kind {
            #[cfg(feature = "http")]
            ClientKind::Http => Ok(Box::new(crate::client::ChatClient::new(
                &section.endpoint,
                &section.model,
                section.sampling.clone(),
                section.retry.clone(),
            )?)),
            #[cfg(not(feature = "http"))]
            ClientKind::Http => Err(Error::Config("built without HTTP support".into())),
            ClientKind::Oracle => Ok(Box::new(self.oracle_client(section.oracle_window)?)),
            ClientKind::Scripted => {
                let path = require_path(&section.script, "client.script")?;
                Ok(Box::new(load_script(path)?))
            }
        }
    }

    /// Needle-aware oracle built from the loaded samples.
    pub fn oracle_client(&self, window: usize) -> Result<NeedleOracleClient> {
        let corpus = self.engine.corpus();
        let mut entries = HashMap::new();
        for s in &self.samples {
            let needle_titles = s
                .needles
                .iter()
                .map(|n| corpus.require(n).map(|d| d.title.clone()))
                .collect::<Result<Vec<_>>>()?;
            entries.insert(
                s.id.clone(),
                OracleEntry {
                    needle_titles,
                    answer: s.answer.clone(),
                },
            );
        }
        Ok(NeedleOracleClient::new(entries, window))
    }
}

#[derive(Deserialize)]
struct Script {
    #[serde(default)]
    default: Vec<String>,
    #[serde(default)]
    samples: HashMap<String, Vec<String>>,
}

/// Reads `{"default": [...], "samples": {"<id>": [...]}}`.
pub fn load_script(path: &Path) -> Result<ScriptedClient> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let script: Script = serde_json::from_str(&text)?;
    let mut samples: Vec<_> = script.samples.into_iter().collect();
    samples.sort();
    Ok(samples
        .into_iter()
        .fold(ScriptedClient::new(script.default), |c, (id, r)| c.with_sample(&id, r)))
}

/// Applies `f` to every item on up to `workers` threads and returns the
/// outputs in input order.
pub fn parallel_map<T, R, F>(items: &[T], workers: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync,
{
    let workers = workers.clamp(1, items.len().max(1));
    if workers == 1 {
        return items.iter().map(f).collect();
    }
    let next = AtomicUsize::new(0);
    let (tx, rx) = mpsc::channel();
    std::thread::scope(|scope| {
        for _ in 0..workers {
            let tx = tx.clone();
            let (next, f) = (&next, &f);
            scope.spawn(move || loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(item) = items.get(i) else { break };
                if tx.send((i, f(item))).is_err() {
                    break;
                }
            });
        }
        drop(tx);
    });
    let mut slots: Vec<Option<R>> = (0..items.len()).map(|_| None).collect();
    for (i, r) in rx {
        slots[i] = Some(r);
    }
    slots.into_iter().map(|r| r.expect("worker finished every item")).collect()
}

/// One cell of the experiment grid.
#[derive(Debug, Clone, Copy)]
pub struct Job<'a> {
    pub sample: &'a QaSample,
    pub retriever: RetrieverSpec,
    pub budget: BudgetSpec,
    pub ordering: OrderingPolicy,
}

/// Grid in deterministic order: retriever, budget, ordering, then sample.
/// A no-context run ignores the haystack axes and uses the first retriever.
pub fn jobs(ws: &Workspace) -> Result<Vec<Job<'_>>> {
    let cfg = &ws.config;
    let (retrievers, budgets, orderings) = if cfg.eval.mode == EvalMode::NoContext {
        (
            vec![cfg.eval.retrievers[0]],
            vec![BudgetSpec::NeedlesOnly],
            vec![OrderingPolicy::RetrieverRanked],
        )
    } else {
        (cfg.eval.retrievers.clone(), cfg.budgets(), cfg.orderings()?)
    };
    let mut out = Vec::new();
    for &retriever in &retrievers {
        for &budget in &budgets {
            for &ordering in &orderings {
                for sample in &ws.samples {
                    out.push(Job {
                        sample,
                        retriever,
                        budget,
                        ordering,
                    });
                }
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunOutput {
    pub results: Vec<EvalResult>,
    pub traces: Vec<DynamicTrace>,
}

fn errored(evaluator: &Evaluator<'_>, job: &Job<'_>, mode: String, err: &Error) -> EvalResult {
    EvalResult {
        sample_id: job.sample.id.clone(),
        hops: job.sample.hops,
        retriever: evaluator.settings.retriever.to_string(),
        budget: evaluator.settings.budget.as_tokens(),
        ordering: evaluator.settings.ordering.to_string(),
        mode,
        rounds_used: 0,
        predicted: String::new(),
        answered: false,
        f1: None,
        error: Some(err.to_string()),
    }
}

fn run_job(ws: &Workspace, client: &dyn ModelClient, job: &Job<'_>) -> (EvalResult, Option<DynamicTrace>) {
    let cfg = &ws.config;
    let mut settings = EvalSettings::new(job.retriever, job.budget, job.ordering);
    settings.strict_answer = cfg.eval.strict_answer;
    settings.final_uses_original = cfg.eval.final_uses_original;
    if cfg.eval.mode == EvalMode::NoContext {
        settings.context = ContextMode::NoContext;
    }
    let evaluator = Evaluator {
        engine: &ws.engine,
        tokenizer: ws.tokenizer.as_ref(),
        client,
        settings,
    };
    match cfg.dynamic_mode() {
        None => match evaluator.run_static(job.sample) {
            Ok(r) => (r, None),
            Err(e) => {
                let mode = if settings.context == ContextMode::NoContext { "no_context" } else { "static" };
                (errored(&evaluator, job, mode.into(), &e), None)
            }
        },
        Some(mode) => match evaluator.run_dynamic(job.sample, mode) {
            Ok((r, t)) => (r, Some(t)),
            Err(e) => {
                let r = errored(&evaluator, job, mode.to_string(), &e);
                let t = DynamicTrace {
                    sample_id: r.sample_id.clone(),
                    retriever: r.retriever.clone(),
                    budget: r.budget,
                    ordering: r.ordering.clone(),
                    mode: r.mode.clone(),
                    rounds: Vec::new(),
                    analyses: Vec::new(),
                    termination: Termination::Errored,
                };
                (r, Some(t))
            }
        },
    }
}

/// Runs the configured grid. Output order follows [`jobs`] regardless of
/// how work was scheduled.
pub fn run_eval(ws: &Workspace, client: &dyn ModelClient) -> Result<RunOutput> {
    let jobs = jobs(ws)?;
    let outputs = parallel_map(&jobs, ws.config.eval.concurrency, |job| run_job(ws, client, job));
    let mut out = RunOutput::default();
    for (r, t) in outputs {
        out.results.push(r);
        out.traces.extend(t);
    }
    Ok(out)
}

/// Ranks every sample's question with every configured retriever.
pub fn rank_all(ws: &Workspace) -> Result<Vec<(RetrieverSpec, Vec<RankedList>)>> {
    ws.config
        .eval
        .retrievers
        .iter()
        .map(|&spec| {
            let lists = parallel_map(&ws.samples, ws.config.eval.concurrency, |s| {
                ws.engine.rank(spec, &s.id, &s.question)
            });
            Ok((spec, lists.into_iter().collect::<Result<Vec<_>>>()?))
        })
        .collect()
}

pub fn eval_retrieval(ws: &Workspace) -> Result<Vec<RetrievalReport>> {
    Ok(rank_all(ws)?
        .into_iter()
        .map(|(spec, lists)| {
            retrieval_report(
                &spec.to_string(),
                lists
                    .iter()
                    .zip(&ws.samples)
                    .map(|(l, s)| (l, s.needles.as_slice(), s.hops)),
                &ws.config.eval.cutoffs,
            )
        })
        .collect())
}

/// Reproducibility record written with every run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub command: String,
    pub config_hash: String,
    pub corpus_hash: String,
    pub qa_hash: String,
    pub seeds: Vec<u64>,
    pub results_hash: String,
    pub traces_hash: String,
    pub config: RunConfig,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Manifest> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Fails when the corpus or QA file changed since the manifest was
    /// written.
    pub fn check_inputs(&self, ws: &Workspace) -> Result<()> {
        if self.corpus_hash != ws.corpus_hash {
            return Err(Error::Config("corpus file differs from the manifest".into()));
        }
        if self.qa_hash != ws.qa_hash {
            return Err(Error::Config("QA file differs from the manifest".into()));
        }
        Ok(())
    }
}

pub fn config_hash(config: &RunConfig) -> Result<String> {
    Ok(sha256_hex(serde_json::to_string(config)?.as_bytes()))
}

fn jsonl<T: Serialize>(rows: &[T]) -> Result<String> {
    let mut out = String::new();
    for r in rows {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    Ok(out)
}

/// Writes results, traces and manifest under `out_dir`.
pub fn write_run(ws: &Workspace, command: &str, output: &RunOutput, out_dir: &Path) -> Result<Manifest> {
    create_dir(out_dir)?;
    let results = jsonl(&output.results)?;
    let traces = jsonl(&output.traces)?;
    for (name, body) in [(RESULTS_FILE, &results), (TRACES_FILE, &traces)] {
        let path = out_dir.join(name);
        let mut f = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        f.write_all(body.as_bytes()).map_err(|e| Error::io(&path, e))?;
    }
    let seeds = ws
        .config
        .orderings()?
        .into_iter()
        .filter_map(|o| match o {
            OrderingPolicy::Random { seed } => Some(seed),
            OrderingPolicy::RetrieverRanked => None,
        })
        .collect();
    let manifest = Manifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        command: command.to_string(),
        config_hash: config_hash(&ws.config)?,
        corpus_hash: ws.corpus_hash.clone(),
        qa_hash: ws.qa_hash.clone(),
        seeds,
        results_hash: sha256_hex(results.as_bytes()),
        traces_hash: sha256_hex(traces.as_bytes()),
        config: ws.config.clone(),
    };
    write_json(&out_dir.join(MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}

pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}
