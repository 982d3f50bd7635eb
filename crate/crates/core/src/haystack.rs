//! Token-budgeted haystack assembly, linearization and prompt rendering.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, QaSample};
use crate::error::{Error, Result};
use crate::retrieval::RankedList;
use crate::tokenize::Tokenizer;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HaystackMember {
    pub doc_id: String,
    pub title: String,
    pub text: String,
    pub tokens: usize,
    pub is_needle: bool,
    pub truncated: bool,
    /// Position in the ranking the haystack was filled from.
    pub rank: Option<usize>,
}

/// Needles plus admitted distractors, in admission order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Haystack {
    pub query_id: String,
    pub budget: usize,
    pub members: Vec<HaystackMember>,
}

impl Haystack {
    pub fn total_tokens(&self) -> usize {
        self.members.iter().map(|m| m.tokens).sum()
    }

    pub fn distractors(&self) -> impl Iterator<Item = &HaystackMember> + '_ {
        self.members.iter().filter(|m| !m.is_needle)
    }
}

/// Token budget for one haystack. `NeedlesOnly` is the no-distractor
/// setting: the budget equals the needles' own token total.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum BudgetSpec {
    NeedlesOnly,
    Tokens(usize),
}

impl BudgetSpec {
    /// `0` maps to the needles-only setting.
    pub fn from_tokens(tokens: usize) -> BudgetSpec {
        if tokens == 0 {
            BudgetSpec::NeedlesOnly
        } else {
            BudgetSpec::Tokens(tokens)
        }
    }

    /// Value recorded in results: 0 for needles-only.
    pub fn as_tokens(self) -> usize {
        match self {
            BudgetSpec::NeedlesOnly => 0,
            BudgetSpec::Tokens(n) => n,
        }
    }
}

pub fn needle_tokens(sample: &QaSample, corpus: &Corpus) -> Result<usize> {
    sample
        .needles
        .iter()
        .map(|id| corpus.require(id).map(|d| d.token_count))
        .sum()
}

/// Forces all needles in, then fills with distractors in ranked order,
/// skipping needles, until the first one that does not fit; that one is
/// truncated to the residual budget. Unranked documents follow the ranking
/// in id order.
pub fn assemble_haystack(
    sample: &QaSample,
    ranked: &RankedList,
    corpus: &Corpus,
    budget: BudgetSpec,
    tokenizer: &dyn Tokenizer,
) -> Result<Haystack> {
    corpus.check_tokenizer(tokenizer)?;
    let needed = needle_tokens(sample, corpus)?;
    let budget = match budget {
        BudgetSpec::NeedlesOnly => needed,
        BudgetSpec::Tokens(b) => b,
    };
    if needed > budget {
        return Err(Error::BudgetTooSmall {
            sample_id: sample.id.clone(),
            needed,
            budget,
        });
    }
    let ranks = ranked.rank_map();
    let needle_set: HashSet<&str> = sample.needles.iter().map(String::as_str).collect();
    let mut members = Vec::new();
    for id in &sample.needles {
        let doc = corpus.require(id)?;
        members.push(HaystackMember {
            doc_id: doc.id.clone(),
            title: doc.title.clone(),
            text: doc.body.clone(),
            tokens: doc.token_count,
            is_needle: true,
            truncated: false,
            rank: ranks.get(id.as_str()).copied(),
        });
    }

    let mut residual = budget - needed;
    let ranked_ids = ranked.doc_ids();
    let unranked = corpus
        .documents()
        .map(|d| d.id.as_str())
        .filter(|id| !ranks.contains_key(id));
    for id in ranked_ids.chain(unranked) {
        if residual == 0 {
            break;
        }
        if needle_set.contains(id) {
            continue;
        }
        let doc = corpus.require(id)?;
        let rank = ranks.get(id).copied();
        if doc.token_count <= residual {
            residual -= doc.token_count;
            members.push(HaystackMember {
                doc_id: doc.id.clone(),
                title: doc.title.clone(),
                text: doc.body.clone(),
                tokens: doc.token_count,
                is_needle: false,
                truncated: false,
                rank,
            });
        } else {
            let text = tokenizer.truncate(&doc.body, residual)?;
            let tokens = tokenizer.count(&text)?;
            if tokens > 0 {
                members.push(HaystackMember {
                    doc_id: doc.id.clone(),
                    title: doc.title.clone(),
                    text,
                    tokens,
                    is_needle: false,
                    truncated: true,
                    rank,
                });
            }
            break;
        }
    }
    Ok(Haystack {
        query_id: ranked.query_id.clone(),
        budget,
        members,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum OrderingPolicy {
    RetrieverRanked,
    Random { seed: u64 },
}

impl fmt::Display for OrderingPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OrderingPolicy::RetrieverRanked => f.write_str("ranked"),
            OrderingPolicy::Random { seed } => write!(f, "random:{seed}"),
        }
    }
}

impl FromStr for OrderingPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ranked" => Ok(OrderingPolicy::RetrieverRanked),
            _ => s
                .strip_prefix("random:")
                .and_then(|n| n.parse().ok())
                .map(|seed| OrderingPolicy::Random { seed })
                .ok_or_else(|| Error::Config(format!("unknown ordering `{s}` (ranked | random:<seed>)"))),
        }
    }
}

/// Linearizes a haystack. Ranked order puts members by their retrieval rank
/// (needles included at their own ranks), unranked members last by id.
pub fn order_haystack(haystack: &Haystack, policy: OrderingPolicy) -> Vec<HaystackMember> {
    let mut members = haystack.members.clone();
    match policy {
        OrderingPolicy::RetrieverRanked => {
            members.sort_by(|a, b| match (a.rank, b.rank) {
                (Some(x), Some(y)) => x.cmp(&y),
                (Some(_), None) => std::cmp::Ordering::Less,
                (None, Some(_)) => std::cmp::Ordering::Greater,
                (None, None) => a.doc_id.cmp(&b.doc_id),
            });
        }
        OrderingPolicy::Random { seed } => {
            // canonical starting order so the permutation depends on the seed alone
            members.sort_by(|a, b| a.doc_id.cmp(&b.doc_id));
            members.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        }
    }
    members
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PromptTemplate {
    Static,
    DynamicIntermediate,
    DynamicFinal,
    Variable,
}

const STATIC_HEAD: &str = "Read the following articles and answer the question below.";
const ANALYZE_HEAD: &str = "Read your previous analyses and the following articles. Analyze the question below.";
const FINAL_HEAD: &str = "Read your previous analyses and the following articles, and answer the question below.";
const ANSWER_FORMAT: &str = "Format your response as follows: \"The correct answer is (insert answer here)\".";
const SUMMARY_LINE: &str = "Summary: (Summarize what you found in the articles that relates to the question, including any partial answers, relevant context, or gaps in information.)";
const REFINED_LINE: &str = "Refined Question: (Copy the original question or replace it with a more specific question based on your findings.)";

pub fn render_haystack(members: &[HaystackMember]) -> String {
    members
        .iter()
        .map(|m| format!("Title: {}\n{}", m.title, m.text))
        .collect::<Vec<_>>()
        .join("\n\n")
}

pub fn render_analyses(analyses: &[String]) -> String {
    if analyses.is_empty() {
        "(none)".to_string()
    } else {
        analyses.join("\n\n")
    }
}

/// Instantiates one of the four prompt templates. The final-round template
/// with no prior analyses renders as the static prompt, so a one-round
/// dynamic run is the static evaluation.
pub fn render_prompt(
    members: &[HaystackMember],
    question: &str,
    template: PromptTemplate,
    analyses: &[String],
) -> String {
    let haystack = render_haystack(members);
    let analyses_text = render_analyses(analyses);
    match template {
        PromptTemplate::Static => static_prompt(&haystack, question),
        PromptTemplate::DynamicFinal if analyses.is_empty() => static_prompt(&haystack, question),
        PromptTemplate::DynamicFinal => format!(
            "{FINAL_HEAD}\n\nPrevious Analyses: {analyses_text}\n\nArticles: {haystack}\n\n\
             What is the correct answer to this question: {question}\n\n{ANSWER_FORMAT}\n"
        ),
        PromptTemplate::DynamicIntermediate => format!(
            "{ANALYZE_HEAD}\n\nPrevious Analyses: {analyses_text}\n\nArticles: {haystack}\n\n\
             Question: {question}\n\n\
             Based on your previous analyses and the potentially new articles provided, summarize your findings related to the question and refine the question.\n\n\
             Format your response as follows:\n\n{SUMMARY_LINE}\n\n{REFINED_LINE}\n"
        ),
        PromptTemplate::Variable => format!(
            "{ANALYZE_HEAD}\n\nPrevious Analyses: {analyses_text}\n\nArticles: {haystack}\n\n\
             Question: {question}\n\n\
             Based on your previous analyses and the potentially new articles provided, decide if you are confident in answering the question or if you need additional information.\n\n\
             If you have complete information to fully answer the question, format your response as follows: \"The correct answer is (insert answer here)\".\n\n\
             If you need more information, format your response as follows:\n{SUMMARY_LINE}\n\n{REFINED_LINE}\n"
        ),
    }
}

fn static_prompt(haystack: &str, question: &str) -> String {
    format!(
        "{STATIC_HEAD}\n\n{haystack}\n\nWhat is the correct answer to this question: {question}\n\n{ANSWER_FORMAT}\n"
    )
}

/// Per-member summary emitted by `build-haystack`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemberRecord {
    pub id: String,
    pub is_needle: bool,
    pub truncated: bool,
    pub tokens: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HaystackRecord {
    pub query_id: String,
    pub budget: usize,
    pub members: Vec<MemberRecord>,
    pub order: String,
}

impl HaystackRecord {
    pub fn new(haystack: &Haystack, ordered: &[HaystackMember], policy: OrderingPolicy) -> Self {
        HaystackRecord {
            query_id: haystack.query_id.clone(),
            budget: haystack.budget,
            members: ordered
                .iter()
                .map(|m| MemberRecord {
                    id: m.doc_id.clone(),
                    is_needle: m.is_needle,
                    truncated: m.truncated,
                    tokens: m.tokens,
                })
                .collect(),
            order: policy.to_string(),
        }
    }
}

/// Stable digest of a member sequence (ids and truncation flags).
pub fn haystack_digest(members: &[HaystackMember]) -> String {
    let joined: Vec<String> = members
        .iter()
        .map(|m| format!("{}{}", m.doc_id, if m.truncated { "~" } else { "" }))
        .collect();
    crate::sha256_hex(joined.join("\n").as_bytes())
}

/// Rank positions of needles within an ordered member list (1-based).
pub fn needle_positions(members: &[HaystackMember]) -> HashMap<&str, usize> {
    members
        .iter()
        .enumerate()
        .filter(|(_, m)| m.is_needle)
        .map(|(i, m)| (m.doc_id.as_str(), i + 1))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokenize::ReferenceTokenizer;

    fn corpus(docs: &[(&str, usize)]) -> Corpus {
        let recs = docs.iter().map(|(id, n)| {
            let body = (0..*n).map(|i| format!("w{i}")).collect::<Vec<_>>().join(" ");
            (id.to_string(), format!("T {id}"), body, Vec::new(), false)
        });
        Corpus::from_records(recs, &ReferenceTokenizer).unwrap().0
    }

    fn sample(needles: &[&str]) -> QaSample {
        QaSample {
            id: "s".into(),
            question: "q?".into(),
            answer: "a".into(),
            aliases: vec![],
            needles: needles.iter().map(|s| s.to_string()).collect(),
            hops: needles.len() as u8,
        }
    }

    fn ranked(ids: &[&str]) -> RankedList {
        RankedList::from_ordered(
            "s",
            "bm25",
            ids.iter().enumerate().map(|(i, d)| (d.to_string(), 100.0 - i as f64)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn exact_needle_budget_has_no_distractors() {
        let c = corpus(&[("n1", 5), ("n2", 7), ("x", 3)]);
        let h = assemble_haystack(&sample(&["n1", "n2"]), &ranked(&["x", "n1"]), &c, BudgetSpec::Tokens(12), &ReferenceTokenizer).unwrap();
        assert_eq!(h.members.len(), 2);
        assert!(h.members.iter().all(|m| m.is_needle));
        let h0 = assemble_haystack(&sample(&["n1", "n2"]), &ranked(&["x"]), &c, BudgetSpec::NeedlesOnly, &ReferenceTokenizer).unwrap();
        assert_eq!(h0.budget, 12);
        assert_eq!(h0.members.len(), 2);
    }

    #[test]
    fn large_budget_includes_all_ranked() {
        let c = corpus(&[("n", 2), ("a", 3), ("b", 4), ("z", 50)]);
        let h = assemble_haystack(&sample(&["n"]), &ranked(&["a", "b"]), &c, BudgetSpec::Tokens(9), &ReferenceTokenizer).unwrap();
        assert_eq!(h.members.len(), 3);
        assert!(h.members.iter().all(|m| !m.truncated));
    }

    #[test]
    fn needles_over_budget_is_error() {
        let c = corpus(&[("n", 10)]);
        let err = assemble_haystack(&sample(&["n"]), &ranked(&[]), &c, BudgetSpec::Tokens(5), &ReferenceTokenizer).unwrap_err();
        assert!(matches!(err, Error::BudgetTooSmall { ref sample_id, needed: 10, budget: 5 } if sample_id == "s"));
    }

    /// Greedy fill simulated by hand from the token table.
    #[test]
    fn mid_document_cut_matches_greedy_simulation() {
        let sizes = [("d0", 4), ("d1", 6), ("d2", 3), ("d3", 8), ("d4", 5), ("d5", 2), ("d6", 7), ("d7", 1), ("n1", 5), ("n2", 4)];
        let c = corpus(&sizes);
        let order = ["d3", "n1", "d0", "d6", "d1", "d2", "d4", "d5", "d7"];
        let budget = 30;
        // needles 9 -> residual 21; d3 (8) -> 13; d0 (4) -> 9; d6 (7) -> 2; d1 (6) cut to 2
        let h = assemble_haystack(&sample(&["n1", "n2"]), &ranked(&order), &c, BudgetSpec::Tokens(budget), &ReferenceTokenizer).unwrap();
        let ids: Vec<&str> = h.members.iter().map(|m| m.doc_id.as_str()).collect();
        assert_eq!(ids, ["n1", "n2", "d3", "d0", "d6", "d1"]);
        let last = h.members.last().unwrap();
        assert!(last.truncated);
        assert_eq!(last.tokens, 2);
        assert_eq!(last.text, "w0 w1");
        assert_eq!(h.total_tokens(), budget);
    }

    #[test]
    fn zero_residual_adds_no_stub() {
        let c = corpus(&[("n", 3), ("a", 2), ("b", 5)]);
        let h = assemble_haystack(&sample(&["n"]), &ranked(&["a", "b"]), &c, BudgetSpec::Tokens(5), &ReferenceTokenizer).unwrap();
        assert_eq!(h.members.len(), 2);
        assert!(h.members.iter().all(|m| !m.truncated));
    }

    #[test]
    fn unranked_docs_fill_after_ranking_in_id_order() {
        let c = corpus(&[("n", 1), ("a", 1), ("c", 1), ("b", 1)]);
        let h = assemble_haystack(&sample(&["n"]), &ranked(&["c"]), &c, BudgetSpec::Tokens(10), &ReferenceTokenizer).unwrap();
        let ids: Vec<&str> = h.members.iter().map(|m| m.doc_id.as_str()).collect();
        assert_eq!(ids, ["n", "c", "a", "b"]);
    }

    #[test]
    fn tokenizer_mismatch_rejected() {
        struct Other;
        impl Tokenizer for Other {
            fn id(&self) -> String {
                "other".into()
            }
            fn count(&self, t: &str) -> Result<usize> {
                Ok(t.len())
            }
            fn truncate(&self, t: &str, _: usize) -> Result<String> {
                Ok(t.into())
            }
        }
        let c = corpus(&[("n", 1)]);
        assert!(matches!(
            assemble_haystack(&sample(&["n"]), &ranked(&[]), &c, BudgetSpec::Tokens(5), &Other),
            Err(Error::TokenizerMismatch { .. })
        ));
    }

    #[test]
    fn ranked_order_interleaves_needles_by_rank() {
        let c = corpus(&[("a", 1), ("b", 1), ("c", 1), ("n1", 1), ("n2", 1), ("n3", 1)]);
        let r = ranked(&["a", "n2", "b", "n1", "c"]);
        let h = assemble_haystack(&sample(&["n1", "n2", "n3"]), &r, &c, BudgetSpec::Tokens(100), &ReferenceTokenizer).unwrap();
        let ordered = order_haystack(&h, OrderingPolicy::RetrieverRanked);
        let ids: Vec<&str> = ordered.iter().map(|m| m.doc_id.as_str()).collect();
        // sort-by-rank oracle: ranked members by rank, then unranked by id
        let mut oracle: Vec<(usize, &str)> = h
            .members
            .iter()
            .map(|m| (m.rank.unwrap_or(usize::MAX), m.doc_id.as_str()))
            .collect();
        oracle.sort();
        assert_eq!(ids, oracle.iter().map(|(_, d)| *d).collect::<Vec<_>>());
        assert_eq!(ids, ["a", "n2", "b", "n1", "c", "n3"]);
    }

    #[test]
    fn needles_lead_when_they_outrank() {
        let c = corpus(&[("a", 1), ("b", 1), ("n1", 1), ("n2", 1)]);
        let h = assemble_haystack(&sample(&["n2", "n1"]), &ranked(&["n1", "n2", "a", "b"]), &c, BudgetSpec::Tokens(100), &ReferenceTokenizer).unwrap();
        let ordered = order_haystack(&h, OrderingPolicy::RetrieverRanked);
        assert_eq!(ordered[0].doc_id, "n1");
        assert_eq!(ordered[1].doc_id, "n2");
    }

    #[test]
    fn random_order_is_seed_deterministic() {
        let c = corpus(&[("a", 1), ("b", 1), ("c", 1), ("d", 1), ("e", 1), ("n", 1)]);
        let h = assemble_haystack(&sample(&["n"]), &ranked(&["a", "b", "c", "d", "e"]), &c, BudgetSpec::Tokens(100), &ReferenceTokenizer).unwrap();
        let p = OrderingPolicy::Random { seed: 7 };
        assert_eq!(order_haystack(&h, p), order_haystack(&h, p));
        let mut ids: Vec<String> = order_haystack(&h, p).into_iter().map(|m| m.doc_id).collect();
        ids.sort();
        assert_eq!(ids, ["a", "b", "c", "d", "e", "n"]);
    }

    #[test]
    fn ordering_policy_parsing() {
        assert_eq!("ranked".parse::<OrderingPolicy>().unwrap(), OrderingPolicy::RetrieverRanked);
        assert_eq!("random:3".parse::<OrderingPolicy>().unwrap(), OrderingPolicy::Random { seed: 3 });
        assert!("random".parse::<OrderingPolicy>().is_err());
    }

    #[test]
    fn empty_static_prompt_keeps_question_and_instruction() {
        let p = render_prompt(&[], "Who?", PromptTemplate::Static, &[]);
        assert_eq!(
            p,
            "Read the following articles and answer the question below.\n\n\n\nWhat is the correct answer to this question: Who?\n\nFormat your response as follows: \"The correct answer is (insert answer here)\".\n"
        );
    }

    #[test]
    fn intermediate_prompt_lists_analyses() {
        let p = render_prompt(&[], "Q", PromptTemplate::DynamicIntermediate, &["A1".into()]);
        assert!(p.contains("Previous Analyses: A1\n\nArticles: "));
        let none = render_prompt(&[], "Q", PromptTemplate::DynamicIntermediate, &[]);
        assert!(none.contains("Previous Analyses: (none)\n"));
    }

    #[test]
    fn final_prompt_without_analyses_is_static() {
        let c = corpus(&[("a", 3)]);
        let m = c.get("a").map(|d| HaystackMember {
            doc_id: d.id.clone(),
            title: d.title.clone(),
            text: d.body.clone(),
            tokens: d.token_count,
            is_needle: true,
            truncated: false,
            rank: None,
        });
        let ms: Vec<_> = m.into_iter().collect();
        assert_eq!(
            render_prompt(&ms, "Q", PromptTemplate::DynamicFinal, &[]),
            render_prompt(&ms, "Q", PromptTemplate::Static, &[])
        );
        assert_ne!(
            render_prompt(&ms, "Q", PromptTemplate::DynamicFinal, &["x".into()]),
            render_prompt(&ms, "Q", PromptTemplate::Static, &[])
        );
    }
}
