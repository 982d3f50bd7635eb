use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::RankedList;
use crate::binio::{Decoder, Encoder};
use crate::corpus::Corpus;
use crate::error::{Error, Result};

/// Lowercases and splits on anything that is not alphanumeric.
pub fn analyze(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Posting {
    /// Position of the document in [`SparseIndex::doc_ids`].
    pub doc: u32,
    pub tf: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Bm25Params { k1: 1.2, b: 0.75 }
    }
}

/// Inverted index over the corpus bodies.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseIndex {
    doc_ids: Vec<String>,
    doc_lens: Vec<u32>,
    avg_len: f64,
    postings: BTreeMap<String, Vec<Posting>>,
}

impl SparseIndex {
    pub fn build(corpus: &Corpus) -> SparseIndex {
        SparseIndex::from_texts(corpus.documents().map(|d| (d.id.as_str(), d.body.as_str())))
    }

    /// Documents must arrive in ascending id order for postings to be
    /// sorted by doc id.
    pub fn from_texts<'a>(docs: impl IntoIterator<Item = (&'a str, &'a str)>) -> SparseIndex {
        let mut doc_ids = Vec::new();
        let mut doc_lens = Vec::new();
        let mut postings: BTreeMap<String, Vec<Posting>> = BTreeMap::new();
        for (i, (id, text)) in docs.into_iter().enumerate() {
            let mut counts: BTreeMap<String, u32> = BTreeMap::new();
            let mut len = 0u32;
            for term in analyze(text) {
                *counts.entry(term).or_insert(0) += 1;
                len += 1;
            }
            for (term, tf) in counts {
                postings.entry(term).or_default().push(Posting { doc: i as u32, tf });
            }
            doc_ids.push(id.to_string());
            doc_lens.push(len);
        }
        let avg_len = if doc_ids.is_empty() {
            0.0
        } else {
            doc_lens.iter().map(|&l| l as f64).sum::<f64>() / doc_ids.len() as f64
        };
        SparseIndex {
            doc_ids,
            doc_lens,
            avg_len,
            postings,
        }
    }

    pub fn doc_count(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn avg_len(&self) -> f64 {
        self.avg_len
    }

    pub fn doc_ids(&self) -> &[String] {
        &self.doc_ids
    }

    pub fn doc_len(&self, doc: usize) -> u32 {
        self.doc_lens[doc]
    }

    pub fn postings(&self, term: &str) -> &[Posting] {
        self.postings.get(term).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn terms(&self) -> impl Iterator<Item = &str> + '_ {
        self.postings.keys().map(String::as_str)
    }

    const MAGIC: &'static [u8; 6] = b"HCSPIX";
    const VERSION: u32 = 1;

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut enc = Encoder::new(BufWriter::new(file));
        enc.header(Self::MAGIC, Self::VERSION);
        enc.u64(self.doc_ids.len() as u64);
        for (id, len) in self.doc_ids.iter().zip(&self.doc_lens) {
            enc.str(id);
            enc.u32(*len);
        }
        enc.f64(self.avg_len);
        enc.u64(self.postings.len() as u64);
        for (term, list) in &self.postings {
            enc.str(term);
            enc.u64(list.len() as u64);
            for p in list {
                enc.u32(p.doc);
                enc.u32(p.tf);
            }
        }
        let mut w = enc.finish().map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn open(path: &Path) -> Result<SparseIndex> {
        let mut bytes = Vec::new();
        fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        let mut dec = Decoder::new(&bytes);
        dec.header(Self::MAGIC, Self::VERSION)?;
        let n = dec.count()?;
        let mut doc_ids = Vec::with_capacity(n);
        let mut doc_lens = Vec::with_capacity(n);
        for _ in 0..n {
            doc_ids.push(dec.string()?);
            doc_lens.push(dec.u32()?);
        }
        let avg_len = dec.f64()?;
        let t = dec.count()?;
        let mut postings = BTreeMap::new();
        for _ in 0..t {
            let term = dec.string()?;
            let k = dec.count()?;
            let mut list = Vec::with_capacity(k);
            for _ in 0..k {
                let doc = dec.u32()?;
                let tf = dec.u32()?;
                if doc as usize >= n {
                    return Err(Error::Format(format!("posting for `{term}` out of range")));
                }
                list.push(Posting { doc, tf });
            }
            postings.insert(term, list);
        }
        dec.finish()?;
        Ok(SparseIndex {
            doc_ids,
            doc_lens,
            avg_len,
            postings,
        })
    }
}

/// Okapi BM25 with `idf = ln(1 + (N - df + 0.5) / (df + 0.5))`. Each
/// distinct query term contributes once. Documents scoring 0 are omitted.
pub fn score_bm25(
    index: &SparseIndex,
    query_id: &str,
    query: &str,
    top_n: usize,
    params: Bm25Params,
) -> Result<RankedList> {
    let terms: BTreeSet<String> = analyze(query).into_iter().collect();
    if terms.is_empty() {
        return Err(Error::EmptyQuery);
    }
    let n = index.doc_count() as f64;
    let mut scores = vec![0.0f64; index.doc_count()];
    let mut touched = Vec::new();
    for term in &terms {
        let postings = index.postings(term);
        if postings.is_empty() {
            continue;
        }
        let df = postings.len() as f64;
        let idf = (1.0 + (n - df + 0.5) / (df + 0.5)).ln();
        for p in postings {
            let tf = p.tf as f64;
            let len_norm = 1.0 - params.b + params.b * index.doc_lens[p.doc as usize] as f64 / index.avg_len;
            let s = &mut scores[p.doc as usize];
            if *s == 0.0 {
                touched.push(p.doc as usize);
            }
            *s += idf * tf * (params.k1 + 1.0) / (tf + params.k1 * len_norm);
        }
    }
    let scored = touched
        .into_iter()
        .filter(|&d| scores[d] > 0.0)
        .map(|d| (index.doc_ids[d].clone(), scores[d]))
        .collect();
    RankedList::from_scores(query_id, "bm25", scored, Some(top_n))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::collections::HashMap;

    #[test]
    fn analyzer_rules() {
        assert_eq!(analyze("Hello, World! e-mail  x"), ["hello", "world", "e", "mail", "x"]);
        assert!(analyze(" ,.; ").is_empty());
    }

    #[test]
    fn empty_index() {
        let idx = SparseIndex::from_texts(std::iter::empty());
        assert_eq!(idx.doc_count(), 0);
        assert_eq!(idx.avg_len(), 0.0);
        let l = score_bm25(&idx, "q", "anything", 10, Bm25Params::default()).unwrap();
        assert!(l.is_empty());
    }

    #[test]
    fn two_doc_counting() {
        let idx = SparseIndex::from_texts([("d1", "a b"), ("d2", "b b")]);
        assert_eq!(idx.postings("b"), [Posting { doc: 0, tf: 1 }, Posting { doc: 1, tf: 2 }]);
        assert_eq!(idx.postings("a"), [Posting { doc: 0, tf: 1 }]);
        assert_eq!(idx.avg_len(), 2.0);
    }

    #[test]
    fn fifty_doc_postings_match_count_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let vocab = ["red", "green", "blue", "cyan", "Magenta", "yellow"];
        let texts: Vec<(String, String)> = (0..50)
            .map(|i| {
                let len = rng.random_range(1..20);
                let words: Vec<&str> = (0..len).map(|_| vocab[rng.random_range(0..vocab.len())]).collect();
                (format!("d{i:02}"), words.join(" "))
            })
            .collect();
        let idx = SparseIndex::from_texts(texts.iter().map(|(a, b)| (a.as_str(), b.as_str())));
        let mut oracle: HashMap<String, Vec<(usize, u32)>> = HashMap::new();
        for (d, (_, text)) in texts.iter().enumerate() {
            let mut c: HashMap<String, u32> = HashMap::new();
            for w in text.split(' ') {
                *c.entry(w.to_lowercase()).or_default() += 1;
            }
            for (w, tf) in c {
                oracle.entry(w).or_default().push((d, tf));
            }
        }
        assert_eq!(idx.terms().count(), oracle.len());
        for (term, mut list) in oracle {
            list.sort();
            let got: Vec<(usize, u32)> = idx.postings(&term).iter().map(|p| (p.doc as usize, p.tf)).collect();
            assert_eq!(got, list, "term {term}");
        }
        for d in 0..50 {
            let total: u32 = idx.terms().flat_map(|t| idx.postings(t)).filter(|p| p.doc as usize == d).map(|p| p.tf).sum();
            assert_eq!(total, idx.doc_len(d));
        }
    }

    #[test]
    fn unknown_term_gives_empty_list() {
        let idx = SparseIndex::from_texts([("a", "x y"), ("b", "y z")]);
        assert!(score_bm25(&idx, "q", "nothing", 5, Bm25Params::default()).unwrap().is_empty());
    }

    #[test]
    fn empty_query_is_error() {
        let idx = SparseIndex::from_texts([("a", "x")]);
        assert!(matches!(score_bm25(&idx, "q", "?!", 5, Bm25Params::default()), Err(Error::EmptyQuery)));
    }

    #[test]
    fn single_doc_single_term() {
        let idx = SparseIndex::from_texts([("only", "zebra")]);
        let l = score_bm25(&idx, "q", "zebra", 5, Bm25Params::default()).unwrap();
        assert_eq!(l.len(), 1);
        assert_eq!(l.entries()[0].doc_id, "only");
        assert!(l.entries()[0].score > 0.0);
    }

    /// Per-term formula evaluated directly from raw texts.
    fn naive_bm25(texts: &[(&str, &str)], query: &str, k1: f64, b: f64) -> Vec<(String, f64)> {
        let docs: Vec<Vec<String>> = texts.iter().map(|(_, t)| analyze(t)).collect();
        let n = docs.len() as f64;
        let avg = docs.iter().map(|d| d.len() as f64).sum::<f64>() / n;
        let mut q: Vec<String> = analyze(query);
        q.sort();
        q.dedup();
        let mut out = Vec::new();
        for (i, d) in docs.iter().enumerate() {
            let mut s = 0.0;
            for t in &q {
                let df = docs.iter().filter(|d| d.contains(t)).count() as f64;
                let tf = d.iter().filter(|w| *w == t).count() as f64;
                if tf == 0.0 {
                    continue;
                }
                let idf = (1.0 + (n - df + 0.5) / (df + 0.5)).ln();
                s += idf * tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * d.len() as f64 / avg));
            }
            if s > 0.0 {
                out.push((texts[i].0.to_string(), s));
            }
        }
        out.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        out
    }

    #[test]
    fn five_doc_fixture_matches_formula() {
        let texts = [
            ("d1", "the quick brown fox"),
            ("d2", "the lazy dog sleeps all day"),
            ("d3", "quick quick fox jumps"),
            ("d4", "brown dog"),
            ("d5", "nothing relevant here at all really"),
        ];
        let idx = SparseIndex::from_texts(texts);
        let got = score_bm25(&idx, "q", "quick brown dog", 10, Bm25Params { k1: 1.2, b: 0.75 }).unwrap();
        let want = naive_bm25(&texts, "quick brown dog", 1.2, 0.75);
        assert_eq!(got.len(), want.len());
        for (e, (id, s)) in got.entries().iter().zip(&want) {
            assert_eq!(&e.doc_id, id);
            assert!((e.score - s).abs() < 1e-12);
        }
        assert_eq!(got.len(), 4);
    }

    #[test]
    fn snapshot_round_trip() {
        let idx = SparseIndex::from_texts([("a", "x y y"), ("b", "y z")]);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sparse.bin");
        idx.save(&p).unwrap();
        assert_eq!(SparseIndex::open(&p).unwrap(), idx);
    }
}
