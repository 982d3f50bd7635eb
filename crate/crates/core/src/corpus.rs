//! Corpus ingest: JSON-lines documents and QA samples, the hyperlink graph,
//! and a binary snapshot for reuse across runs.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::binio::{Decoder, Encoder};
use crate::error::{Error, Result};
use crate::tokenize::Tokenizer;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Document {
    pub id: String,
    pub title: String,
    pub body: String,
    /// Cleaned outgoing links: existing targets only, no self-reference.
    pub out_links: BTreeSet<String>,
    pub token_count: usize,
}

/// Directed link graph over the corpus. Node `i` is the `i`-th document id
/// in ascending order.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct HyperlinkGraph {
    ids: Vec<String>,
    index: HashMap<String, usize>,
    out_adj: Vec<Vec<usize>>,
    in_adj: Vec<Vec<usize>>,
    edge_count: usize,
}

impl HyperlinkGraph {
    /// Builds the graph from `(id, targets)` pairs. Targets that are not
    /// nodes and self-links are dropped; duplicates collapse.
    pub fn from_adjacency<'a, I, L>(nodes: I) -> Self
    where
        I: IntoIterator<Item = (&'a str, L)>,
        L: IntoIterator<Item = &'a str>,
    {
        let mut pairs: Vec<(&str, Vec<&str>)> = nodes
            .into_iter()
            .map(|(id, links)| (id, links.into_iter().collect()))
            .collect();
        pairs.sort_by(|a, b| a.0.cmp(b.0));
        pairs.dedup_by(|a, b| a.0 == b.0);
        let ids: Vec<String> = pairs.iter().map(|(id, _)| id.to_string()).collect();
        let index: HashMap<String, usize> =
            ids.iter().enumerate().map(|(i, id)| (id.clone(), i)).collect();
        let n = ids.len();
        let mut out_adj = vec![Vec::new(); n];
        let mut in_adj = vec![Vec::new(); n];
        let mut edge_count = 0;
        for (src, (_, links)) in pairs.iter().enumerate() {
            let mut targets: Vec<usize> = links
                .iter()
                .filter_map(|t| index.get(*t).copied())
                .filter(|&t| t != src)
                .collect();
            targets.sort_unstable();
            targets.dedup();
            for &t in &targets {
                in_adj[t].push(src);
            }
            edge_count += targets.len();
            out_adj[src] = targets;
        }
        HyperlinkGraph {
            ids,
            index,
            out_adj,
            in_adj,
            edge_count,
        }
    }

    pub fn node_count(&self) -> usize {
        self.ids.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edge_count
    }

    pub fn node_index(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn node_id(&self, node: usize) -> &str {
        &self.ids[node]
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn out_neighbors(&self, node: usize) -> &[usize] {
        &self.out_adj[node]
    }

    /// Sources linking into `node`, ascending.
    pub fn in_neighbors(&self, node: usize) -> &[usize] {
        &self.in_adj[node]
    }

    pub fn out_degree(&self, node: usize) -> usize {
        self.out_adj[node].len()
    }

    pub fn edges(&self) -> impl Iterator<Item = (&str, &str)> + '_ {
        self.out_adj.iter().enumerate().flat_map(move |(s, ts)| {
            ts.iter()
                .map(move |&t| (self.ids[s].as_str(), self.ids[t].as_str()))
        })
    }

    /// Undirected view: every edge is mirrored, duplicates collapse.
    pub fn symmetrized(&self) -> HyperlinkGraph {
        let mut links: Vec<BTreeSet<&str>> = vec![BTreeSet::new(); self.ids.len()];
        for (s, ts) in self.out_adj.iter().enumerate() {
            for &t in ts {
                links[s].insert(&self.ids[t]);
                links[t].insert(&self.ids[s]);
            }
        }
        HyperlinkGraph::from_adjacency(
            self.ids
                .iter()
                .zip(links)
                .map(|(id, l)| (id.as_str(), l.into_iter().collect::<Vec<_>>())),
        )
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestStats {
    pub records: usize,
    pub kept: usize,
    pub dropped_empty: usize,
    pub dropped_redirect: usize,
    pub self_links_removed: usize,
    pub dangling_links_removed: usize,
    pub duplicate_links_removed: usize,
    pub edges: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    documents: BTreeMap<String, Document>,
    graph: HyperlinkGraph,
    tokenizer_id: String,
}

#[derive(Deserialize)]
struct RawDocument {
    id: String,
    #[serde(default)]
    title: String,
    #[serde(default)]
    text: String,
    #[serde(default)]
    links: Vec<String>,
    #[serde(default)]
    redirect: bool,
}

/// One corpus record as it appears in the JSON-lines file.
#[derive(Debug, Clone, Serialize)]
pub struct CorpusRecord<'a> {
    pub id: &'a str,
    pub title: &'a str,
    pub text: &'a str,
    pub links: Vec<&'a str>,
    pub redirect: bool,
}

impl Corpus {
    pub fn load(path: &Path, tokenizer: &dyn Tokenizer) -> Result<(Corpus, IngestStats)> {
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut raws = Vec::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let raw: RawDocument = serde_json::from_str(&line).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })?;
            raws.push(raw);
        }
        Corpus::from_records(
            raws.into_iter()
                .map(|r| (r.id, r.title, r.text, r.links, r.redirect)),
            tokenizer,
        )
    }

    /// Ingests `(id, title, text, links, redirect)` records.
    pub fn from_records<I>(records: I, tokenizer: &dyn Tokenizer) -> Result<(Corpus, IngestStats)>
    where
        I: IntoIterator<Item = (String, String, String, Vec<String>, bool)>,
    {
        let mut stats = IngestStats::default();
        let mut seen = BTreeSet::new();
        let mut kept: BTreeMap<String, (String, String, Vec<String>)> = BTreeMap::new();
        for (id, title, text, links, redirect) in records {
            stats.records += 1;
            if !seen.insert(id.clone()) {
                return Err(Error::DuplicateDocument(id));
            }
            if redirect {
                stats.dropped_redirect += 1;
            } else if text.trim().is_empty() {
                stats.dropped_empty += 1;
            } else {
                kept.insert(id, (title, text, links));
            }
        }
        stats.kept = kept.len();

        let mut documents = BTreeMap::new();
        for (id, (title, body, links)) in &kept {
            let mut out_links = BTreeSet::new();
            for target in links {
                if target == id {
                    stats.self_links_removed += 1;
                } else if !kept.contains_key(target) {
                    stats.dangling_links_removed += 1;
                } else if !out_links.insert(target.clone()) {
                    stats.duplicate_links_removed += 1;
                }
            }
            let token_count = tokenizer.count(body)?;
            documents.insert(
                id.clone(),
                Document {
                    id: id.clone(),
                    title: title.clone(),
                    body: body.clone(),
                    out_links,
                    token_count,
                },
            );
        }
        let graph = build_graph(&documents);
        stats.edges = graph.edge_count();
        Ok((
            Corpus {
                documents,
                graph,
                tokenizer_id: tokenizer.id(),
            },
            stats,
        ))
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Document> {
        self.documents.get(id)
    }

    pub fn require(&self, id: &str) -> Result<&Document> {
        self.get(id).ok_or_else(|| Error::UnknownDocument(id.to_string()))
    }

    /// Documents in ascending id order.
    pub fn documents(&self) -> impl ExactSizeIterator<Item = &Document> + '_ {
        self.documents.values()
    }

    pub fn graph(&self) -> &HyperlinkGraph {
        &self.graph
    }

    pub fn tokenizer_id(&self) -> &str {
        &self.tokenizer_id
    }

    pub fn check_tokenizer(&self, tokenizer: &dyn Tokenizer) -> Result<()> {
        let active = tokenizer.id();
        if active != self.tokenizer_id {
            return Err(Error::TokenizerMismatch {
                corpus: self.tokenizer_id.clone(),
                active,
            });
        }
        Ok(())
    }

    const MAGIC: &'static [u8; 6] = b"HCCORP";
    const VERSION: u32 = 1;

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut enc = Encoder::new(BufWriter::new(file));
        enc.header(Self::MAGIC, Self::VERSION);
        enc.str(&self.tokenizer_id);
        enc.u64(self.documents.len() as u64);
        for doc in self.documents.values() {
            enc.str(&doc.id);
            enc.str(&doc.title);
            enc.str(&doc.body);
            enc.u64(doc.token_count as u64);
            enc.u64(doc.out_links.len() as u64);
            for l in &doc.out_links {
                enc.str(l);
            }
        }
        let mut w = enc.finish().map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn open(path: &Path) -> Result<Corpus> {
        let mut bytes = Vec::new();
        fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        let mut dec = Decoder::new(&bytes);
        dec.header(Self::MAGIC, Self::VERSION)?;
        let tokenizer_id = dec.string()?;
        let n = dec.count()?;
        let mut documents = BTreeMap::new();
        for _ in 0..n {
            let id = dec.string()?;
            let title = dec.string()?;
            let body = dec.string()?;
            let token_count = dec.u64()? as usize;
            let k = dec.count()?;
            let mut out_links = BTreeSet::new();
            for _ in 0..k {
                out_links.insert(dec.string()?);
            }
            documents.insert(
                id.clone(),
                Document {
                    id,
                    title,
                    body,
                    out_links,
                    token_count,
                },
            );
        }
        dec.finish()?;
        for doc in documents.values() {
            if let Some(bad) = doc
                .out_links
                .iter()
                .find(|l| !documents.contains_key(*l) || **l == doc.id)
            {
                return Err(Error::Format(format!(
                    "document `{}` links to invalid target `{bad}`",
                    doc.id
                )));
            }
        }
        let graph = build_graph(&documents);
        Ok(Corpus {
            documents,
            graph,
            tokenizer_id,
        })
    }
}

/// Materializes the hyperlink graph from cleaned documents, nodes sorted by id.
pub fn build_graph(documents: &BTreeMap<String, Document>) -> HyperlinkGraph {
    HyperlinkGraph::from_adjacency(
        documents
            .values()
            .map(|d| (d.id.as_str(), d.out_links.iter().map(String::as_str))),
    )
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaSample {
    pub id: String,
    pub question: String,
    pub answer: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub aliases: Vec<String>,
    pub needles: Vec<String>,
    pub hops: u8,
}

impl QaSample {
    fn validate(&self, corpus: &Corpus) -> Result<()> {
        let invalid = |reason: &str| Error::InvalidSample {
            sample_id: self.id.clone(),
            reason: reason.to_string(),
        };
        if self.needles.is_empty() {
            return Err(invalid("needle set is empty"));
        }
        if !(1..=4).contains(&self.hops) {
            return Err(invalid("hop count must be in 1..=4"));
        }
        if self.answer.trim().is_empty() {
            return Err(invalid("gold answer is empty"));
        }
        let unique: BTreeSet<&String> = self.needles.iter().collect();
        if unique.len() != self.needles.len() {
            return Err(invalid("duplicate needle id"));
        }
        for needle in &self.needles {
            if corpus.get(needle).is_none() {
                return Err(Error::UnknownNeedle {
                    sample_id: self.id.clone(),
                    doc_id: needle.clone(),
                });
            }
        }
        Ok(())
    }
}

pub fn load_qa_samples(path: &Path, corpus: &Corpus) -> Result<Vec<QaSample>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut samples = Vec::new();
    let mut ids = BTreeSet::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let sample: QaSample = serde_json::from_str(line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        if !ids.insert(sample.id.clone()) {
            return Err(Error::InvalidSample {
                sample_id: sample.id,
                reason: "duplicate sample id".into(),
            });
        }
        samples.push(sample);
    }
    validate_samples(&samples, corpus)?;
    Ok(samples)
}

pub fn validate_samples(samples: &[QaSample], corpus: &Corpus) -> Result<()> {
    samples.iter().try_for_each(|s| s.validate(corpus))
}

pub fn hop_histogram(samples: &[QaSample]) -> BTreeMap<u8, usize> {
    let mut hist = BTreeMap::new();
    for s in samples {
        *hist.entry(s.hops).or_insert(0) += 1;
    }
    hist
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokenize::ReferenceTokenizer;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rec(id: &str, text: &str, links: &[&str]) -> (String, String, String, Vec<String>, bool) {
        (
            id.into(),
            id.to_uppercase(),
            text.into(),
            links.iter().map(|s| s.to_string()).collect(),
            false,
        )
    }

    fn write_lines(lines: &[String]) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        for l in lines {
            writeln!(f, "{l}").unwrap();
        }
        f
    }

    #[test]
    fn drops_empty_body() {
        let f = write_lines(&[
            r#"{"id":"a","title":"A","text":"alpha","links":["b"],"redirect":false}"#.into(),
            r#"{"id":"b","title":"B","text":"","links":[],"redirect":false}"#.into(),
            r#"{"id":"c","title":"C","text":"gamma","links":["a","b"],"redirect":false}"#.into(),
        ]);
        let (corpus, stats) = Corpus::load(f.path(), &ReferenceTokenizer).unwrap();
        assert_eq!(corpus.len(), 2);
        assert_eq!(stats.dropped_empty, 1);
        assert_eq!(stats.records, 3);
        assert_eq!(stats.dangling_links_removed, 2);
        assert_eq!(corpus.graph().edge_count(), 1);
    }

    #[test]
    fn drops_redirects() {
        let records = vec![rec("a", "x", &[]), ("r".into(), "R".into(), "#REDIRECT a".into(), vec![], true)];
        let (corpus, stats) = Corpus::from_records(records, &ReferenceTokenizer).unwrap();
        assert_eq!(corpus.len(), 1);
        assert_eq!(stats.dropped_redirect, 1);
        assert_eq!(stats.records, stats.kept + stats.dropped_empty + stats.dropped_redirect);
    }

    #[test]
    fn removes_self_loop() {
        let (corpus, stats) =
            Corpus::from_records(vec![rec("a", "x", &["a", "x"]), rec("x", "y", &[])], &ReferenceTokenizer)
                .unwrap();
        let edges: Vec<_> = corpus.graph().edges().collect();
        assert_eq!(edges, vec![("a", "x")]);
        assert_eq!(stats.self_links_removed, 1);
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let f = write_lines(&[
            r#"{"id":"a","title":"A","text":"alpha","links":[],"redirect":false}"#.into(),
            "{not json".into(),
        ]);
        match Corpus::load(f.path(), &ReferenceTokenizer) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn duplicate_id_is_an_error() {
        let err = Corpus::from_records(vec![rec("a", "x", &[]), rec("a", "y", &[])], &ReferenceTokenizer)
            .unwrap_err();
        assert!(matches!(err, Error::DuplicateDocument(id) if id == "a"));
    }

    #[test]
    fn empty_and_mutual_graphs() {
        let (c, _) = Corpus::from_records(Vec::new(), &ReferenceTokenizer).unwrap();
        assert_eq!(c.graph().node_count(), 0);
        assert_eq!(c.graph().edge_count(), 0);
        let (c, _) =
            Corpus::from_records(vec![rec("a", "x", &["b"]), rec("b", "y", &["a"])], &ReferenceTokenizer)
                .unwrap();
        assert_eq!(c.graph().node_count(), 2);
        assert_eq!(c.graph().edge_count(), 2);
    }

    fn random_records(rng: &mut ChaCha8Rng, docs: usize, mentions: usize) -> Vec<(String, String, String, Vec<String>, bool)> {
        let mut recs: Vec<_> = (0..docs)
            .map(|i| rec(&format!("d{i:04}"), "body text", &[]))
            .collect();
        for _ in 0..mentions {
            let s = rng.random_range(0..docs);
            // ~10% dangling targets
            let t = if rng.random_bool(0.1) {
                format!("missing{}", rng.random_range(0..50))
            } else {
                format!("d{:04}", rng.random_range(0..docs))
            };
            recs[s].3.push(t);
        }
        recs
    }

    /// Naive dictionary-of-sets construction over the raw links.
    fn oracle_edges(recs: &[(String, String, String, Vec<String>, bool)]) -> BTreeSet<(String, String)> {
        let ids: BTreeSet<&String> = recs.iter().map(|r| &r.0).collect();
        let mut set = BTreeSet::new();
        for r in recs {
            for t in &r.3 {
                if t != &r.0 && ids.contains(t) {
                    set.insert((r.0.clone(), t.clone()));
                }
            }
        }
        set
    }

    #[test]
    fn thousand_doc_graph_matches_set_dedup_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut recs = random_records(&mut rng, 1000, 4500);
        // plant 500 exact duplicate mentions
        for _ in 0..500 {
            let s = rng.random_range(0..1000);
            if let Some(t) = recs[s].3.first().cloned() {
                recs[s].3.push(t);
            } else {
                recs[s].3.push("d0000".into());
                recs[s].3.push("d0000".into());
            }
        }
        let expected = oracle_edges(&recs);
        let (corpus, stats) = Corpus::from_records(recs.clone(), &ReferenceTokenizer).unwrap();
        let got: BTreeSet<(String, String)> = corpus
            .graph()
            .edges()
            .map(|(a, b)| (a.to_string(), b.to_string()))
            .collect();
        assert_eq!(got, expected);
        assert_eq!(corpus.graph().edge_count(), expected.len());
        let raw_mentions: usize = recs.iter().map(|r| r.3.len()).sum();
        assert_eq!(
            raw_mentions,
            stats.edges + stats.self_links_removed + stats.dangling_links_removed + stats.duplicate_links_removed
        );
    }

    #[test]
    fn fifty_doc_adjacency_matches_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let recs = random_records(&mut rng, 50, 200);
        let expected = oracle_edges(&recs);
        let (corpus, _) = Corpus::from_records(recs, &ReferenceTokenizer).unwrap();
        let g = corpus.graph();
        for (s, t) in &expected {
            let si = g.node_index(s).unwrap();
            let ti = g.node_index(t).unwrap();
            assert!(g.out_neighbors(si).contains(&ti));
            assert!(g.in_neighbors(ti).contains(&si));
        }
        let out_total: usize = (0..g.node_count()).map(|i| g.out_degree(i)).sum();
        assert_eq!(out_total, expected.len());
        let ids: Vec<&String> = g.ids().iter().collect();
        let mut sorted = ids.clone();
        sorted.sort();
        assert_eq!(ids, sorted);
    }

    #[test]
    fn symmetrize_mirrors_edges() {
        let (c, _) = Corpus::from_records(
            vec![rec("a", "x", &["b"]), rec("b", "y", &[]), rec("c", "z", &["b"])],
            &ReferenceTokenizer,
        )
        .unwrap();
        let sym = c.graph().symmetrized();
        assert_eq!(sym.edge_count(), 4);
        let b = sym.node_index("b").unwrap();
        assert_eq!(sym.out_degree(b), 2);
    }

    fn qa_line(id: &str, needles: &[&str], hops: u8) -> String {
        serde_json::json!({"id": id, "question": "q?", "answer": "ans", "needles": needles, "hops": hops})
            .to_string()
    }

    #[test]
    fn qa_unknown_needle_names_sample() {
        let (corpus, _) = Corpus::from_records(vec![rec("a", "x", &[])], &ReferenceTokenizer).unwrap();
        let f = write_lines(&[qa_line("s1", &["a"], 1), qa_line("s2", &["zzz"], 1)]);
        match load_qa_samples(f.path(), &corpus) {
            Err(Error::UnknownNeedle { sample_id, doc_id }) => {
                assert_eq!(sample_id, "s2");
                assert_eq!(doc_id, "zzz");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn qa_hop_histogram() {
        let (corpus, _) = Corpus::from_records(
            ["a", "b", "c", "d"].iter().map(|i| rec(i, "x", &[])).collect::<Vec<_>>(),
            &ReferenceTokenizer,
        )
        .unwrap();
        let f = write_lines(&[
            qa_line("s1", &["a"], 1),
            qa_line("s2", &["a", "b"], 2),
            qa_line("s3", &["a", "b", "c"], 3),
            qa_line("s4", &["a", "b", "c", "d"], 4),
        ]);
        let samples = load_qa_samples(f.path(), &corpus).unwrap();
        let hist = hop_histogram(&samples);
        assert_eq!(hist, BTreeMap::from([(1, 1), (2, 1), (3, 1), (4, 1)]));
    }

    #[test]
    fn qa_histogram_at_reported_proportions() {
        let (corpus, _) = Corpus::from_records(
            ["a", "b", "c", "d"].iter().map(|i| rec(i, "x", &[])).collect::<Vec<_>>(),
            &ReferenceTokenizer,
        )
        .unwrap();
        let all = ["a", "b", "c", "d"];
        let mut lines = Vec::new();
        // 20% / 58% / 15.6% / 6.4% of 500
        for (hops, count) in [(1u8, 100usize), (2, 290), (3, 78), (4, 32)] {
            for i in 0..count {
                lines.push(qa_line(&format!("h{hops}-{i}"), &all[..hops as usize], hops));
            }
        }
        let f = write_lines(&lines);
        let samples = load_qa_samples(f.path(), &corpus).unwrap();
        assert_eq!(samples.len(), 500);
        assert_eq!(
            hop_histogram(&samples),
            BTreeMap::from([(1, 100), (2, 290), (3, 78), (4, 32)])
        );
    }

    #[test]
    fn qa_rejects_bad_hops() {
        let (corpus, _) = Corpus::from_records(vec![rec("a", "x", &[])], &ReferenceTokenizer).unwrap();
        let f = write_lines(&[qa_line("s1", &["a"], 5)]);
        assert!(matches!(load_qa_samples(f.path(), &corpus), Err(Error::InvalidSample { .. })));
    }

    #[test]
    fn snapshot_rejects_wrong_magic() {
        let f = write_lines(&["garbage".into()]);
        assert!(matches!(Corpus::open(f.path()), Err(Error::Format(_))));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn persist_round_trip(seed in 0u64..1000, docs in 0usize..40) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut recs = random_records(&mut rng, docs.max(1), docs * 3);
            for (i, r) in recs.iter_mut().enumerate() {
                r.2 = format!("body {i} with ünïcode, and punctuation!");
            }
            let (corpus, _) = Corpus::from_records(recs, &ReferenceTokenizer).unwrap();
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("corpus.bin");
            corpus.save(&path).unwrap();
            let reloaded = Corpus::open(&path).unwrap();
            prop_assert_eq!(&reloaded, &corpus);
            let a: Vec<_> = corpus.documents().map(|d| d.id.clone()).collect();
            let b: Vec<_> = reloaded.documents().map(|d| d.id.clone()).collect();
            prop_assert_eq!(a, b);
        }
    }
}
