//! Language-model endpoints: a chat-completions HTTP client plus two
//! offline mocks used for testing the harness end to end.

use std::collections::HashMap;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One model call.
#[derive(Debug, Clone, Copy)]
pub struct ModelRequest<'a> {
    pub sample_id: &'a str,
    /// 1-based round within the sample.
    pub round: usize,
    pub prompt: &'a str,
}

pub trait ModelClient: Send + Sync {
    fn complete(&self, request: &ModelRequest<'_>) -> Result<String>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplingParams {
    pub temperature: f64,
    pub top_p: f64,
    pub max_tokens: u32,
}

impl Default for SamplingParams {
    fn default() -> Self {
        SamplingParams {
            temperature: 0.0,
            top_p: 1.0,
            max_tokens: 1024,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub initial_backoff_ms: u64,
    pub max_backoff_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 4,
            initial_backoff_ms: 500,
            max_backoff_ms: 30_000,
        }
    }
}

impl RetryPolicy {
    /// Delay before retry number `attempt` (1-based), doubling each time.
    pub fn backoff_ms(&self, attempt: u32) -> u64 {
        let factor = 1u64 << attempt.saturating_sub(1).min(20);
        self.initial_backoff_ms.saturating_mul(factor).min(self.max_backoff_ms)
    }
}

pub const API_KEY_ENV: &str = "HC_API_KEY";

#[cfg(feature = "http")]
pub use http::ChatClient;

#[cfg(feature = "http")]
mod http {
    use std::time::Duration;

    use serde_json::json;

    use super::*;

    /// Chat-completions client. Retries 429, 5xx and transport failures with
    /// exponential backoff.
    pub struct ChatClient {
        endpoint: String,
        model: String,
        sampling: SamplingParams,
        retry: RetryPolicy,
        api_key: Option<String>,
        agent: ureq::Agent,
    }

    impl ChatClient {
        pub fn new(endpoint: &str, model: &str, sampling: SamplingParams, retry: RetryPolicy) -> Result<Self> {
            if retry.max_attempts == 0 {
                return Err(Error::Config("retry max_attempts must be at least 1".into()));
            }
            let agent: ureq::Agent = ureq::Agent::config_builder()
                .http_status_as_error(false)
                .timeout_global(Some(Duration::from_secs(600)))
                .build()
                .into();
            Ok(ChatClient {
                endpoint: endpoint.to_string(),
                model: model.to_string(),
                sampling,
                retry,
                api_key: std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty()),
                agent,
            })
        }

        fn attempt(&self, prompt: &str) -> std::result::Result<String, (bool, String)> {
            let body = json!({
                "model": self.model,
                "messages": [{"role": "user", "content": prompt}],
                "temperature": self.sampling.temperature,
                "top_p": self.sampling.top_p,
                "max_tokens": self.sampling.max_tokens,
            });
            let mut req = self.agent.post(&self.endpoint);
            if let Some(key) = &self.api_key {
                req = req.header("Authorization", &format!("Bearer {key}"));
            }
            let mut resp = req.send_json(&body).map_err(|e| (true, e.to_string()))?;
            let status = resp.status().as_u16();
            if status == 429 || status >= 500 {
                return Err((true, format!("HTTP {status}")));
            }
            if status >= 400 {
                let text = resp.body_mut().read_to_string().unwrap_or_default();
                return Err((false, format!("HTTP {status}: {text}")));
            }
            let value: serde_json::Value = resp
                .body_mut()
                .read_json()
                .map_err(|e| (false, format!("bad response body: {e}")))?;
            value["choices"][0]["message"]["content"]
                .as_str()
                .map(String::from)
                .ok_or_else(|| (false, "response lacks choices[0].message.content".to_string()))
        }
    }

    impl ModelClient for ChatClient {
        fn complete(&self, request: &ModelRequest<'_>) -> Result<String> {
            let mut last = String::new();
            for attempt in 1..=self.retry.max_attempts {
                match self.attempt(request.prompt) {
                    Ok(text) => return Ok(text),
                    Err((retryable, msg)) => {
                        last = msg;
                        if !retryable {
                            break;
                        }
                        if attempt < self.retry.max_attempts {
                            std::thread::sleep(Duration::from_millis(self.retry.backoff_ms(attempt)));
                        }
                    }
                }
            }
            Err(Error::Client(format!(
                "{} (sample {}, round {}): {last}",
                self.endpoint, request.sample_id, request.round
            )))
        }
    }
}

/// Replays fixed responses. Round `r` gets the `r`-th response of the
/// sample's script (or of the default script); the last one repeats.
#[derive(Debug, Clone, Default)]
pub struct ScriptedClient {
    per_sample: HashMap<String, Vec<String>>,
    default: Vec<String>,
}

impl ScriptedClient {
    pub fn new(default: Vec<String>) -> Self {
        ScriptedClient {
            per_sample: HashMap::new(),
            default,
        }
    }

    pub fn with_sample(mut self, sample_id: &str, responses: Vec<String>) -> Self {
        self.per_sample.insert(sample_id.to_string(), responses);
        self
    }
}

impl ModelClient for ScriptedClient {
    fn complete(&self, request: &ModelRequest<'_>) -> Result<String> {
        let script = self.per_sample.get(request.sample_id).unwrap_or(&self.default);
        script
            .get(request.round.saturating_sub(1))
            .or_else(|| script.last())
            .cloned()
            .ok_or_else(|| Error::Client(format!("no scripted response for `{}`", request.sample_id)))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OracleEntry {
    pub needle_titles: Vec<String>,
    pub answer: String,
}

/// Answers the gold answer iff every needle title appears among the first
/// `window` documents of the prompt. Otherwise it emits a refined question
/// that drifts away from the original (or a non-answer when the prompt
/// demands an answer).
#[derive(Debug, Clone)]
pub struct NeedleOracleClient {
    entries: HashMap<String, OracleEntry>,
    window: usize,
}

impl NeedleOracleClient {
    pub fn new(entries: HashMap<String, OracleEntry>, window: usize) -> Self {
        NeedleOracleClient { entries, window }
    }

    pub fn window(&self) -> usize {
        self.window
    }

    fn titles(prompt: &str) -> Vec<&str> {
        prompt
            .lines()
            .filter_map(|l| l.strip_prefix("Title: ").or_else(|| l.strip_prefix("Articles: Title: ")))
            .collect()
    }

    fn question(prompt: &str) -> &str {
        prompt
            .lines()
            .rev()
            .find_map(|l| {
                l.strip_prefix("Question: ")
                    .or_else(|| l.strip_prefix("What is the correct answer to this question: "))
            })
            .unwrap_or("")
    }

    pub fn satisfied(&self, sample_id: &str, prompt: &str) -> bool {
        let Some(entry) = self.entries.get(sample_id) else {
            return false;
        };
        let titles = Self::titles(prompt);
        let head = &titles[..titles.len().min(self.window)];
        entry.needle_titles.iter().all(|t| head.contains(&t.as_str()))
    }
}

impl ModelClient for NeedleOracleClient {
    fn complete(&self, request: &ModelRequest<'_>) -> Result<String> {
        let entry = self
            .entries
            .get(request.sample_id)
            .ok_or_else(|| Error::Client(format!("oracle has no entry for `{}`", request.sample_id)))?;
        let prompt = request.prompt;
        let can_refine = prompt.contains("\nRefined Question: (");
        let may_answer = !prompt.contains("summarize your findings related to the question and refine");
        let ok = self.satisfied(request.sample_id, prompt);
        let question = Self::question(prompt);
        Ok(match (ok, may_answer, can_refine) {
            (true, true, _) => format!("The correct answer is {}.", entry.answer),
            (true, false, _) => format!(
                "Summary: All supporting articles are present.\n\nRefined Question: {question}"
            ),
            (false, _, true) => format!(
                "Summary: Supporting evidence is missing from the leading articles.\n\nRefined Question: {question} background"
            ),
            (false, _, false) => "I cannot find the answer in the provided articles.".to_string(),
        })
    }
}

/// Wraps a client and keeps every prompt it forwards.
pub struct RecordingClient<C> {
    inner: C,
    prompts: Mutex<Vec<(String, usize, String)>>,
}

impl<C: ModelClient> RecordingClient<C> {
    pub fn new(inner: C) -> Self {
        RecordingClient {
            inner,
            prompts: Mutex::new(Vec::new()),
        }
    }

    /// `(sample_id, round, prompt)` in call order.
    pub fn prompts(&self) -> Vec<(String, usize, String)> {
        self.prompts.lock().map(|p| p.clone()).unwrap_or_default()
    }
}

impl<C: ModelClient> ModelClient for RecordingClient<C> {
    fn complete(&self, request: &ModelRequest<'_>) -> Result<String> {
        if let Ok(mut p) = self.prompts.lock() {
            p.push((request.sample_id.to_string(), request.round, request.prompt.to_string()));
        }
        self.inner.complete(request)
    }
}
