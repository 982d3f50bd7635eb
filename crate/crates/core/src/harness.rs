//! Static single-round and dynamic multi-round evaluation of one sample.
//!
//! A dynamic run keeps the sample's original needle set in every round but
//! ranks distractors with the model's latest refined query, so query drift
//! shows up directly in the context of the next round.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::client::{ModelClient, ModelRequest};
use crate::corpus::QaSample;
use crate::engine::{RetrievalEngine, RetrieverSpec};
use crate::error::{Error, Result};
use crate::haystack::{
    assemble_haystack, haystack_digest, order_haystack, render_prompt, BudgetSpec, HaystackMember, OrderingPolicy,
    PromptTemplate,
};
use crate::metrics::{answer_f1, F1Score};
use crate::tokenize::Tokenizer;

const ANSWER_MARKER: &str = "the correct answer is";

/// Text after the last "the correct answer is" (any case), up to the end
/// of that line, with quotes, brackets and a terminal period removed.
pub fn extract_answer(response: &str) -> Option<String> {
    let lower = response.to_ascii_lowercase();
    let at = lower.rfind(ANSWER_MARKER)?;
    let rest = &response[at + ANSWER_MARKER.len()..];
    let line = rest.lines().next().unwrap_or("");
    let mut s = line.trim().trim_start_matches(':').trim();
    loop {
        let before = s;
        s = s.trim_end_matches('.').trim();
        s = s
            .trim_matches(|c: char| matches!(c, '"' | '\'' | '“' | '”' | '(' | ')' | '[' | ']' | '*' | '`'))
            .trim();
        if s == before {
            break;
        }
    }
    (!s.is_empty()).then(|| s.to_string())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Intermediate {
    pub summary: String,
    pub refined_question: String,
}

fn marker_line(line: &str, marker: &str) -> Option<usize> {
    let stripped = line.trim_start_matches(|c: char| c.is_whitespace() || c == '*' || c == '#');
    let offset = line.len() - stripped.len();
    let head = stripped.get(..marker.len())?;
    head.eq_ignore_ascii_case(marker).then_some(offset + marker.len())
}

/// Splits an intermediate-round reply into its summary and refined
/// question. Markers must start a line; the last "Refined Question:" wins.
pub fn parse_intermediate(response: &str) -> Option<Intermediate> {
    let mut summary_at: Option<(usize, usize)> = None;
    let mut refined_at: Option<(usize, usize)> = None;
    let mut offset = 0;
    for line in response.split_inclusive('\n') {
        if let Some(end) = marker_line(line, "refined question:") {
            refined_at = Some((offset, offset + end));
        } else if let Some(end) = marker_line(line, "summary:") {
            summary_at = Some((offset, offset + end));
        }
        offset += line.len();
    }
    let (refined_start, refined_body) = refined_at?;
    // the summary must precede the refined question
    let summary_at = summary_at.filter(|s| s.0 < refined_start).or_else(|| {
        let mut best = None;
        let mut offset = 0;
        for line in response[..refined_start].split_inclusive('\n') {
            if let Some(end) = marker_line(line, "summary:") {
                best = Some((offset, offset + end));
            }
            offset += line.len();
        }
        best
    })?;
    let summary = response[summary_at.1..refined_start].trim();
    let refined = response[refined_body..]
        .trim()
        .trim_matches(|c: char| c == '*')
        .trim();
    if refined.is_empty() {
        return None;
    }
    Some(Intermediate {
        summary: summary.trim_matches('*').trim().to_string(),
        refined_question: refined.to_string(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum DynamicMode {
    Enforced { rounds: usize },
    Variable { max_rounds: usize },
}

impl DynamicMode {
    pub fn validate(self) -> Result<()> {
        match self {
            DynamicMode::Enforced { rounds: 0 } | DynamicMode::Variable { max_rounds: 0 } => {
                Err(Error::Config("dynamic mode needs at least one round".into()))
            }
            _ => Ok(()),
        }
    }
}

impl fmt::Display for DynamicMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DynamicMode::Enforced { rounds } => write!(f, "enforced:{rounds}"),
            DynamicMode::Variable { max_rounds } => write!(f, "variable:{max_rounds}"),
        }
    }
}

/// What the model is shown besides the question.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContextMode {
    #[default]
    Haystack,
    /// Empty context: measures what the model answers from memory alone.
    NoContext,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalSettings {
    pub retriever: RetrieverSpec,
    pub budget: BudgetSpec,
    pub ordering: OrderingPolicy,
    pub context: ContextMode,
    /// Score 0 instead of scoring the raw response when no answer marker
    /// is found.
    pub strict_answer: bool,
    /// Show the original question (not the latest refinement) in the final
    /// round.
    pub final_uses_original: bool,
}

impl EvalSettings {
    pub fn new(retriever: RetrieverSpec, budget: BudgetSpec, ordering: OrderingPolicy) -> Self {
        EvalSettings {
            retriever,
            budget,
            ordering,
            context: ContextMode::Haystack,
            strict_answer: false,
            final_uses_original: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub sample_id: String,
    pub hops: u8,
    pub retriever: String,
    /// Token budget, 0 for the needles-only setting.
    pub budget: usize,
    pub ordering: String,
    pub mode: String,
    pub rounds_used: usize,
    pub predicted: String,
    pub answered: bool,
    pub f1: Option<F1Score>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Answered,
    RoundsExhausted,
    ParseFallback,
    Errored,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub query: String,
    pub template: PromptTemplate,
    pub haystack_digest: String,
    pub prompt_hash: String,
    pub response: String,
    pub summary: Option<String>,
    pub refined_question: Option<String>,
    pub final_answer: bool,
    pub parse_fallback: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DynamicTrace {
    pub sample_id: String,
    pub retriever: String,
    pub budget: usize,
    pub ordering: String,
    pub mode: String,
    pub rounds: Vec<RoundRecord>,
    pub analyses: Vec<String>,
    pub termination: Termination,
}

/// Borrowed pieces needed to evaluate samples.
pub struct Evaluator<'a> {
    pub engine: &'a RetrievalEngine,
    pub tokenizer: &'a dyn Tokenizer,
    pub client: &'a dyn ModelClient,
    pub settings: EvalSettings,
}

impl Evaluator<'_> {
    /// Ranks with `query`, fills the haystack around the sample's needles
    /// and linearizes it.
    pub fn context_for(&self, sample: &QaSample, query_id: &str, query: &str) -> Result<Vec<HaystackMember>> {
        if self.settings.context == ContextMode::NoContext {
            return Ok(Vec::new());
        }
        let ranked = self.engine.rank(self.settings.retriever, query_id, query)?;
        let haystack = assemble_haystack(sample, &ranked, self.engine.corpus(), self.settings.budget, self.tokenizer)?;
        Ok(order_haystack(&haystack, self.settings.ordering))
    }

    fn result(&self, sample: &QaSample, mode: String) -> EvalResult {
        EvalResult {
            sample_id: sample.id.clone(),
            hops: sample.hops,
            retriever: self.settings.retriever.to_string(),
            budget: self.settings.budget.as_tokens(),
            ordering: self.settings.ordering.to_string(),
            mode,
            rounds_used: 0,
            predicted: String::new(),
            answered: false,
            f1: None,
            error: None,
        }
    }

    fn score(&self, sample: &QaSample, response: &str) -> (String, bool, F1Score) {
        match extract_answer(response) {
            Some(answer) => {
                let f1 = answer_f1(&answer, &sample.answer, &sample.aliases);
                (answer, true, f1)
            }
            None if self.settings.strict_answer => (response.to_string(), false, F1Score::ZERO),
            None => (
                response.to_string(),
                false,
                answer_f1(response, &sample.answer, &sample.aliases),
            ),
        }
    }

    fn static_mode(&self) -> String {
        match self.settings.context {
            ContextMode::Haystack => "static".into(),
            ContextMode::NoContext => "no_context".into(),
        }
    }

    /// Builds the static prompt for a sample (what `run_static` sends).
    pub fn static_prompt(&self, sample: &QaSample) -> Result<String> {
        let members = self.context_for(sample, &sample.id, &sample.question)?;
        Ok(render_prompt(&members, &sample.question, PromptTemplate::Static, &[]))
    }

    pub fn run_static(&self, sample: &QaSample) -> Result<EvalResult> {
        let mut result = self.result(sample, self.static_mode());
        let prompt = self.static_prompt(sample)?;
        result.rounds_used = 1;
        match self.client.complete(&ModelRequest {
            sample_id: &sample.id,
            round: 1,
            prompt: &prompt,
        }) {
            Ok(response) => {
                let (predicted, answered, f1) = self.score(sample, &response);
                result.predicted = predicted;
                result.answered = answered;
                result.f1 = Some(f1);
            }
            Err(Error::Client(msg)) => result.error = Some(msg),
            Err(e) => return Err(e),
        }
        Ok(result)
    }

    pub fn run_dynamic(&self, sample: &QaSample, mode: DynamicMode) -> Result<(EvalResult, DynamicTrace)> {
        mode.validate()?;
        let mut result = self.result(sample, mode.to_string());
        let mut trace = DynamicTrace {
            sample_id: sample.id.clone(),
            retriever: result.retriever.clone(),
            budget: result.budget,
            ordering: result.ordering.clone(),
            mode: result.mode.clone(),
            rounds: Vec::new(),
            analyses: Vec::new(),
            termination: Termination::Answered,
        };
        let last_round = match mode {
            DynamicMode::Enforced { rounds } => rounds,
            DynamicMode::Variable { max_rounds } => max_rounds,
        };
        let mut query = sample.question.clone();

        for round in 1..=last_round {
            let is_last = round == last_round;
            let template = match (mode, is_last) {
                (_, true) => PromptTemplate::DynamicFinal,
                (DynamicMode::Enforced { .. }, false) => PromptTemplate::DynamicIntermediate,
                (DynamicMode::Variable { .. }, false) => PromptTemplate::Variable,
            };
            let query_id = if round == 1 {
                sample.id.clone()
            } else {
                format!("{}#r{round}", sample.id)
            };
            let members = self.context_for(sample, &query_id, &query)?;
            let shown = if is_last && self.settings.final_uses_original {
                sample.question.as_str()
            } else {
                query.as_str()
            };
            let prompt = render_prompt(&members, shown, template, &trace.analyses);
            let response = match self.client.complete(&ModelRequest {
                sample_id: &sample.id,
                round,
                prompt: &prompt,
            }) {
                Ok(r) => r,
                Err(Error::Client(msg)) => {
                    result.error = Some(msg);
                    result.rounds_used = round;
                    trace.termination = Termination::Errored;
                    return Ok((result, trace));
                }
                Err(e) => return Err(e),
            };
            let mut record = RoundRecord {
                round,
                query: query.clone(),
                template,
                haystack_digest: haystack_digest(&members),
                prompt_hash: crate::sha256_hex(prompt.as_bytes()),
                response: response.clone(),
                summary: None,
                refined_question: None,
                final_answer: false,
                parse_fallback: false,
            };

            let early_answer = template == PromptTemplate::Variable && extract_answer(&response).is_some();
            if is_last || early_answer {
                let (predicted, answered, f1) = self.score(sample, &response);
                record.final_answer = true;
                record.parse_fallback = !answered;
                trace.termination = if !answered {
                    Termination::ParseFallback
                } else if is_last && matches!(mode, DynamicMode::Variable { .. }) {
                    Termination::RoundsExhausted
                } else {
                    Termination::Answered
                };
                trace.rounds.push(record);
                result.rounds_used = round;
                result.predicted = predicted;
                result.answered = answered;
                result.f1 = Some(f1);
                break;
            }

            match parse_intermediate(&response) {
                Some(parsed) => {
                    trace.analyses.push(parsed.summary.clone());
                    query = parsed.refined_question.clone();
                    record.summary = Some(parsed.summary);
                    record.refined_question = Some(parsed.refined_question);
                }
                None => {
                    trace.analyses.push(response.trim().to_string());
                    record.parse_fallback = true;
                }
            }
            trace.rounds.push(record);
        }
        Ok((result, trace))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn extract_answer_cases() {
        assert_eq!(
            extract_answer("The correct answer is the Firth of Forth.").as_deref(),
            Some("the Firth of Forth")
        );
        assert_eq!(extract_answer("I do not know."), None);
        assert_eq!(
            extract_answer("I think the correct answer is X. The correct answer is Y").as_deref(),
            Some("Y")
        );
        assert_eq!(
            extract_answer("So THE CORRECT ANSWER IS \"Paris\".\nBecause...").as_deref(),
            Some("Paris")
        );
        assert_eq!(extract_answer("The correct answer is (1889).").as_deref(), Some("1889"));
        assert_eq!(extract_answer("The correct answer is ."), None);
    }

    #[test]
    fn extract_answer_handles_multibyte_prefix() {
        assert_eq!(extract_answer("Ünïcödé! The correct answer is Zürich.").as_deref(), Some("Zürich"));
    }

    #[test]
    fn parse_well_formed() {
        let r = "Summary: Luahoko is in Tonga.\n\nRefined Question: What continent is Tonga located in?";
        let p = parse_intermediate(r).unwrap();
        assert_eq!(p.summary, "Luahoko is in Tonga.");
        assert_eq!(p.refined_question, "What continent is Tonga located in?");
    }

    #[test]
    fn parse_prose_fails() {
        assert_eq!(parse_intermediate("I looked at the articles and found nothing."), None);
        assert_eq!(parse_intermediate("Summary: only a summary"), None);
    }

    #[test]
    fn parse_empty_refined_fails() {
        assert_eq!(parse_intermediate("Summary: x\nRefined Question:   \n"), None);
    }

    #[test]
    fn parse_is_line_anchored_and_uses_last_refined() {
        let r = "My summary: nope\nSUMMARY: real one\nspans lines\nRefined Question: first\nRefined question: second";
        let p = parse_intermediate(r).unwrap();
        assert_eq!(p.summary, "real one\nspans lines\nRefined Question: first");
        assert_eq!(p.refined_question, "second");
        let md = "**Summary:** found it\n**Refined Question:** What next?";
        let p = parse_intermediate(md).unwrap();
        assert_eq!(p.summary, "found it");
        assert_eq!(p.refined_question, "What next?");
    }

    #[test]
    fn mode_display_and_validation() {
        assert_eq!(DynamicMode::Enforced { rounds: 3 }.to_string(), "enforced:3");
        assert!(DynamicMode::Variable { max_rounds: 0 }.validate().is_err());
    }
}
