use std::io::{BufRead, BufReader, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use haykit::config::{ClientKind, EvalMode, OrderingKind, RunConfig};
use haykit::engine::RetrieverSpec;
use haykit::haystack::{assemble_haystack, order_haystack, BudgetSpec, HaystackRecord, OrderingPolicy};
use haykit::harness::DynamicMode;
use haykit::rerank::rerank_ppr;
use haykit::report::aggregate_report;
use haykit::retrieval::RankedList;
use haykit::runner::{self, Manifest, Workspace};
use haykit::tokenize::{serve_reference_line, TokenizerSpec};

/// Retriever-dependent haystacks and static/dynamic long-context QA
/// evaluation.
///
/// Exit codes: 0 success, 1 validation or runtime failure, 2 usage error.
#[derive(Parser)]
#[command(name = "haykit", version)]
struct Cli {
    #[command(flatten)]
    global: GlobalOpts,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct GlobalOpts {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Re-run from a manifest written by an earlier evaluation.
    #[arg(long, global = true, conflicts_with = "config")]
    manifest: Option<PathBuf>,
    /// Output directory for every artifact.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    corpus: Option<PathBuf>,
    #[arg(long, global = true)]
    qa: Option<PathBuf>,
    #[arg(long, global = true)]
    index_dir: Option<PathBuf>,
    /// `reference` or `external(<host:port>)`.
    #[arg(long, global = true)]
    tokenizer: Option<TokenizerSpec>,
    /// Maximum samples in flight.
    #[arg(long, global = true)]
    concurrency: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Parse the corpus, build the hyperlink graph and store a snapshot.
    Ingest,
    /// Build the BM25 index.
    Index,
    /// Rank documents for a query or a sample's question.
    Retrieve {
        #[command(flatten)]
        query: QueryArgs,
        #[arg(long, default_value = "bm25")]
        retriever: RetrieverSpec,
        #[arg(long, default_value_t = 10)]
        top: usize,
    },
    /// Rerank a base retriever's ranking with personalized PageRank.
    Rerank {
        #[command(flatten)]
        query: QueryArgs,
        #[arg(long, default_value = "bm25")]
        base: RetrieverSpec,
        /// Number of top-ranked documents used as seeds.
        #[arg(long)]
        seeds: Option<usize>,
        #[arg(long)]
        damping: Option<f64>,
        #[arg(long)]
        symmetrize: bool,
        #[arg(long, default_value_t = 10)]
        top: usize,
    },
    /// Assemble and order one sample's haystack.
    BuildHaystack {
        #[arg(long)]
        sample: String,
        #[arg(long, default_value = "bm25")]
        retriever: RetrieverSpec,
        /// Token budget; 0 keeps only the needles.
        #[arg(long)]
        budget: usize,
        #[arg(long, value_enum, default_value = "ranked")]
        order: OrderArg,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Recall@N and NDCG@N of every configured retriever.
    EvalRetrieval {
        #[arg(long = "retriever")]
        retrievers: Vec<RetrieverSpec>,
        #[arg(long = "cutoff")]
        cutoffs: Vec<usize>,
        #[arg(long = "sample")]
        samples: Vec<String>,
    },
    /// Single-prompt evaluation.
    EvalStatic {
        #[command(flatten)]
        eval: EvalArgs,
        /// Show no documents at all.
        #[arg(long)]
        no_context: bool,
    },
    /// Multi-round evaluation with query refinement.
    EvalDynamic {
        #[command(flatten)]
        eval: EvalArgs,
        #[arg(long, value_enum, default_value = "enforced")]
        mode: ModeArg,
        /// Rounds (enforced) or round cap (variable).
        #[arg(long)]
        rounds: Option<usize>,
        /// Ask the original question in the final round.
        #[arg(long)]
        final_uses_original: bool,
    },
    /// Aggregate a results file into an F1 table.
    Report {
        /// Defaults to `<out>/results.jsonl`.
        #[arg(long)]
        results: Option<PathBuf>,
    },
    /// Serve the reference tokenizer over the external tokenizer protocol.
    TokenizerServer {
        #[arg(long, default_value = "127.0.0.1:7070")]
        listen: String,
    },
}

#[derive(Args)]
#[group(required = true, multiple = false)]
struct QueryArgs {
    #[arg(long)]
    query: Option<String>,
    /// Use this sample's question.
    #[arg(long)]
    sample: Option<String>,
}

#[derive(Clone, Copy, ValueEnum)]
enum OrderArg {
    Ranked,
    Random,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Enforced,
    Variable,
}

#[derive(Clone, Copy, ValueEnum)]
enum ClientArg {
    Http,
    Oracle,
    Scripted,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long = "retriever")]
    retrievers: Vec<RetrieverSpec>,
    /// Token budget (repeatable); 0 keeps only the needles.
    #[arg(long = "budget")]
    budgets: Vec<usize>,
    /// Same as `--budget 0`.
    #[arg(long, conflicts_with = "budgets")]
    no_distractors: bool,
    #[arg(long, value_enum)]
    order: Option<OrderArg>,
    /// Permutation seed for random ordering (repeatable).
    #[arg(long = "seed")]
    seeds: Vec<u64>,
    #[arg(long = "sample")]
    samples: Vec<String>,
    #[arg(long, value_enum)]
    client: Option<ClientArg>,
    /// Response script for the scripted client.
    #[arg(long)]
    script: Option<PathBuf>,
    #[arg(long)]
    oracle_window: Option<usize>,
    #[arg(long)]
    endpoint: Option<String>,
    #[arg(long)]
    model: Option<String>,
    /// Score 0 when no answer marker is present.
    #[arg(long)]
    strict_answer: bool,
}

impl EvalArgs {
    fn apply(&self, cfg: &mut RunConfig) {
        let eval = &mut cfg.eval;
        if !self.retrievers.is_empty() {
            eval.retrievers = self.retrievers.clone();
        }
        if self.no_distractors {
            eval.budgets = vec![0];
        } else if !self.budgets.is_empty() {
            eval.budgets = self.budgets.clone();
        }
        match self.order {
            Some(OrderArg::Ranked) => eval.ordering = OrderingKind::Ranked,
            Some(OrderArg::Random) => eval.ordering = OrderingKind::Random,
            None => {}
        }
        if !self.seeds.is_empty() {
            eval.seeds = self.seeds.clone();
        }
        if !self.samples.is_empty() {
            eval.samples = self.samples.clone();
        }
        eval.strict_answer |= self.strict_answer;
        let client = &mut cfg.client;
        if let Some(kind) = self.client {
            client.kind = match kind {
                ClientArg::Http => ClientKind::Http,
                ClientArg::Oracle => ClientKind::Oracle,
                ClientArg::Scripted => ClientKind::Scripted,
            };
        }
        if let Some(p) = &self.script {
            client.script = Some(p.clone());
        }
        if let Some(w) = self.oracle_window {
            client.oracle_window = w;
        }
        if let Some(e) = &self.endpoint {
            client.endpoint = e.clone();
        }
        if let Some(m) = &self.model {
            client.model = m.clone();
        }
    }
}

struct Loaded {
    config: RunConfig,
    manifest: Option<Manifest>,
}

fn load_config(g: &GlobalOpts) -> Result<Loaded> {
    let (mut config, manifest) = match (&g.config, &g.manifest) {
        (Some(path), _) => (
            RunConfig::load(path).with_context(|| format!("reading {}", path.display()))?,
            None,
        ),
        (None, Some(path)) => {
            let m = Manifest::load(path).with_context(|| format!("reading {}", path.display()))?;
            (m.config.clone(), Some(m))
        }
        (None, None) => (RunConfig::default(), None),
    };
    let p = &mut config.paths;
    if let Some(v) = &g.corpus {
        p.corpus = Some(v.clone());
    }
    if let Some(v) = &g.qa {
        p.qa = Some(v.clone());
    }
    if let Some(v) = &g.index_dir {
        p.index_dir = v.clone();
    }
    if let Some(v) = &g.out {
        p.out = v.clone();
    }
    if let Some(t) = &g.tokenizer {
        config.tokenizer = t.clone();
    }
    if let Some(c) = g.concurrency {
        config.eval.concurrency = c;
    }
    Ok(Loaded { config, manifest })
}

fn open_workspace(loaded: Loaded) -> Result<Workspace> {
    let ws = Workspace::open(loaded.config)?;
    if let Some(m) = &loaded.manifest {
        m.check_inputs(&ws)?;
    }
    Ok(ws)
}

fn query_of<'a>(ws: &'a Workspace, q: &'a QueryArgs) -> Result<(&'a str, &'a str)> {
    match (&q.query, &q.sample) {
        (Some(text), _) => Ok(("query", text.as_str())),
        (None, Some(id)) => {
            let s = ws.sample(id)?;
            Ok((s.id.as_str(), s.question.as_str()))
        }
        (None, None) => bail!("pass --query or --sample"),
    }
}

/// Writes to stdout; a closed pipe (`| head`) is not an error.
fn emit(text: &str) -> Result<()> {
    let mut stdout = std::io::stdout().lock();
    match writeln!(stdout, "{text}").and_then(|_| stdout.flush()) {
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
        other => Ok(other?),
    }
}

fn print_ranking(list: &RankedList, top: usize) -> Result<()> {
    let entries: Vec<_> = list.entries().iter().take(top).collect();
    let value = serde_json::json!({
        "query_id": list.query_id,
        "strategy": list.strategy,
        "total": list.len(),
        "entries": entries,
    });
    emit(&serde_json::to_string_pretty(&value)?)
}

fn write_pretty(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, serde_json::to_string_pretty(value)? + "\n")
        .with_context(|| format!("writing {}", path.display()))
}

fn serve_tokenizer(listen: &str) -> Result<()> {
    let listener = TcpListener::bind(listen).with_context(|| format!("binding {listen}"))?;
    eprintln!("tokenizer server listening on {}", listener.local_addr()?);
    for stream in listener.incoming() {
        let stream = stream?;
        std::thread::spawn(move || {
            let mut writer = match stream.try_clone() {
                Ok(w) => w,
                Err(_) => return,
            };
            for line in BufReader::new(stream).lines() {
                let Ok(line) = line else { break };
                let reply = serve_reference_line(&line)
                    .unwrap_or_else(|e| serde_json::json!({ "error": e.to_string() }).to_string());
                if writeln!(writer, "{reply}").and_then(|_| writer.flush()).is_err() {
                    break;
                }
            }
        });
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let loaded = load_config(&cli.global)?;
    match cli.command {
        Command::Ingest => {
            let config = loaded.config;
            let tokenizer = config.tokenizer.build()?;
            let info = runner::ingest(&config, tokenizer.as_ref())?;
            let s = &info.stats;
            println!(
                "ingested {} of {} records ({} empty, {} redirects dropped; {} self, {} dangling, {} duplicate links removed); {} edges",
                s.kept, s.records, s.dropped_empty, s.dropped_redirect, s.self_links_removed,
                s.dangling_links_removed, s.duplicate_links_removed, s.edges
            );
        }
        Command::Index => {
            let config = loaded.config;
            let tokenizer = config.tokenizer.build()?;
            let (corpus, _) = runner::load_corpus(&config, tokenizer.as_ref())?;
            let index = runner::build_index(&config, &corpus)?;
            println!(
                "indexed {} documents, {} terms, average length {:.1}",
                index.doc_count(),
                index.terms().count(),
                index.avg_len()
            );
        }
        Command::Retrieve { query, retriever, top } => {
            let ws = open_workspace(loaded)?;
            let (qid, text) = query_of(&ws, &query)?;
            print_ranking(&ws.engine.rank(retriever, qid, text)?, top)?;
        }
        Command::Rerank {
            query,
            base,
            seeds,
            damping,
            symmetrize,
            top,
        } => {
            if base.ppr {
                bail!("--base takes a base retriever (bm25, dense or hybrid)");
            }
            let ws = open_workspace(loaded)?;
            let (qid, text) = query_of(&ws, &query)?;
            let mut cfg = *ws.engine.params().ppr.for_base(base.base);
            if let Some(s) = seeds {
                cfg.num_seeds = s;
            }
            if let Some(d) = damping {
                cfg.damping = d;
            }
            cfg.symmetrize |= symmetrize;
            cfg.validate()?;
            let ranked = ws.engine.rank_base(base.base, qid, text)?;
            if ranked.is_empty() {
                bail!("base ranking is empty; nothing to seed from");
            }
            print_ranking(&rerank_ppr(&ranked, ws.engine.corpus().graph(), &cfg)?, top)?;
        }
        Command::BuildHaystack {
            sample,
            retriever,
            budget,
            order,
            seed,
        } => {
            let ws = open_workspace(loaded)?;
            let s = ws.sample(&sample)?;
            let ranked = ws.engine.rank(retriever, &s.id, &s.question)?;
            let haystack = assemble_haystack(
                s,
                &ranked,
                ws.engine.corpus(),
                BudgetSpec::from_tokens(budget),
                ws.tokenizer.as_ref(),
            )?;
            let policy = match order {
                OrderArg::Ranked => OrderingPolicy::RetrieverRanked,
                OrderArg::Random => OrderingPolicy::Random { seed },
            };
            let ordered = order_haystack(&haystack, policy);
            emit(&serde_json::to_string_pretty(&HaystackRecord::new(&haystack, &ordered, policy))?)?;
        }
        Command::EvalRetrieval {
            retrievers,
            cutoffs,
            samples,
        } => {
            let mut loaded = loaded;
            let eval = &mut loaded.config.eval;
            if !retrievers.is_empty() {
                eval.retrievers = retrievers;
            }
            if !cutoffs.is_empty() {
                eval.cutoffs = cutoffs;
            }
            if !samples.is_empty() {
                eval.samples = samples;
            }
            let ws = open_workspace(loaded)?;
            let reports = runner::eval_retrieval(&ws)?;
            let path = ws.config.paths.out.join(runner::RETRIEVAL_REPORT_FILE);
            write_pretty(&path, &reports)?;
            let summary: Vec<String> = reports
                .iter()
                .map(|r| {
                    let (n, s) = r.at.iter().next().map(|(n, s)| (*n, s.recall)).unwrap_or((0, 0.0));
                    format!("{} R@{n}={s:.4}", r.retriever)
                })
                .collect();
            println!(
                "evaluated {} samples: {}; wrote {}",
                ws.samples.len(),
                summary.join(", "),
                path.display()
            );
        }
        Command::EvalStatic { eval, no_context } => {
            let mut loaded = loaded;
            eval.apply(&mut loaded.config);
            if no_context {
                loaded.config.eval.mode = EvalMode::NoContext;
            } else if loaded.config.dynamic_mode().is_some() {
                loaded.config.eval.mode = EvalMode::Static;
            }
            evaluate(loaded, "eval-static")?;
        }
        Command::EvalDynamic {
            eval,
            mode,
            rounds,
            final_uses_original,
        } => {
            let mut loaded = loaded;
            eval.apply(&mut loaded.config);
            let cfg = &mut loaded.config.eval;
            match mode {
                ModeArg::Enforced => {
                    cfg.mode = EvalMode::Enforced;
                    if let Some(r) = rounds {
                        cfg.rounds = r;
                    }
                }
                ModeArg::Variable => {
                    cfg.mode = EvalMode::Variable;
                    if let Some(r) = rounds {
                        cfg.max_rounds = r;
                    }
                }
            }
            cfg.final_uses_original |= final_uses_original;
            if let Some(m) = loaded.config.dynamic_mode() {
                m.validate()?;
            }
            evaluate(loaded, "eval-dynamic")?;
        }
        Command::Report { results } => {
            let out = loaded.config.paths.out.clone();
            let path = results.unwrap_or_else(|| out.join(runner::RESULTS_FILE));
            let rows = runner::read_jsonl(&path).with_context(|| format!("reading {}", path.display()))?;
            let report = aggregate_report(&rows);
            for w in &report.warnings {
                eprintln!("warning: {w}");
            }
            emit(report.to_table().trim_end())?;
            let json_path = out.join("report.json");
            write_pretty(&json_path, &report)?;
            println!("{} rows from {} results; wrote {}", report.rows.len(), rows.len(), json_path.display());
        }
        Command::TokenizerServer { listen } => serve_tokenizer(&listen)?,
    }
    Ok(())
}

fn evaluate(loaded: Loaded, command: &str) -> Result<()> {
    let ws = open_workspace(loaded)?;
    let client = ws.client()?;
    let output = runner::run_eval(&ws, client.as_ref())?;
    let out = ws.config.paths.out.clone();
    let manifest = runner::write_run(&ws, command, &output, &out)?;
    let scored: Vec<f64> = output.results.iter().filter_map(|r| r.f1.map(|f| f.f1)).collect();
    let errored = output.results.iter().filter(|r| r.error.is_some()).count();
    let mean = if scored.is_empty() {
        0.0
    } else {
        scored.iter().sum::<f64>() / scored.len() as f64
    };
    let mode = ws
        .config
        .dynamic_mode()
        .map_or_else(|| format!("{:?}", ws.config.eval.mode).to_lowercase(), |m: DynamicMode| m.to_string());
    println!(
        "{command} [{mode}]: {} results, {errored} errored, mean F1 {mean:.4}; config {}; wrote {}",
        output.results.len(),
        &manifest.config_hash[..12],
        out.display()
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
