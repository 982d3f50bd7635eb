//! Token counting and prefix truncation.
//!
//! Haystack budgets are expressed in tokens of whichever [`Tokenizer`] is
//! active. The built-in [`ReferenceTokenizer`] splits on whitespace and then
//! breaks every punctuation or symbol character out as its own token, so
//! `"hello, world"` is three tokens. [`ExternalTokenizer`] forwards both
//! operations to a server speaking a JSON-lines protocol, which is how a
//! model-specific BPE vocabulary can be plugged in without linking it here.

use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::net::TcpStream;
use std::str::FromStr;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub trait Tokenizer: Send + Sync {
    /// Identifier recorded next to cached token counts.
    fn id(&self) -> String;

    fn count(&self, text: &str) -> Result<usize>;

    /// Longest prefix of `text` holding at most `budget` tokens, cut on a
    /// token boundary.
    fn truncate(&self, text: &str, budget: usize) -> Result<String>;
}

/// Positive token budget (the target context size).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TokenBudget(usize);

impl TokenBudget {
    pub fn new(size_tokens: usize) -> Result<Self> {
        if size_tokens == 0 {
            return Err(Error::Config("token budget must be positive".into()));
        }
        Ok(TokenBudget(size_tokens))
    }

    pub fn tokens(self) -> usize {
        self.0
    }
}

impl fmt::Display for TokenBudget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

fn is_split_char(c: char) -> bool {
    !c.is_alphanumeric() && !c.is_whitespace()
}

/// Byte spans `(start, end)` of the reference tokens of `text`.
pub fn token_spans(text: &str) -> TokenSpans<'_> {
    TokenSpans {
        text,
        chars: text.char_indices().peekable(),
    }
}

pub struct TokenSpans<'a> {
    text: &'a str,
    chars: std::iter::Peekable<std::str::CharIndices<'a>>,
}

impl Iterator for TokenSpans<'_> {
    type Item = (usize, usize);

    fn next(&mut self) -> Option<(usize, usize)> {
        while let Some(&(_, c)) = self.chars.peek() {
            if c.is_whitespace() {
                self.chars.next();
            } else {
                break;
            }
        }
        let (start, first) = self.chars.next()?;
        if is_split_char(first) {
            return Some((start, start + first.len_utf8()));
        }
        let mut end = start + first.len_utf8();
        while let Some(&(i, c)) = self.chars.peek() {
            if c.is_whitespace() || is_split_char(c) {
                break;
            }
            end = i + c.len_utf8();
            self.chars.next();
        }
        debug_assert!(end <= self.text.len());
        Some((start, end))
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ReferenceTokenizer;

impl ReferenceTokenizer {
    pub fn count_str(text: &str) -> usize {
        token_spans(text).count()
    }

    pub fn truncate_str(text: &str, budget: usize) -> &str {
        if budget == 0 {
            return "";
        }
        match token_spans(text).nth(budget - 1) {
            Some((_, end)) if end < text.len() => {
                // keep the input verbatim when nothing but whitespace follows
                if text[end..].trim_start().is_empty() {
                    text
                } else {
                    &text[..end]
                }
            }
            _ => text,
        }
    }
}

impl Tokenizer for ReferenceTokenizer {
    fn id(&self) -> String {
        "reference".to_string()
    }

    fn count(&self, text: &str) -> Result<usize> {
        Ok(Self::count_str(text))
    }

    fn truncate(&self, text: &str, budget: usize) -> Result<String> {
        Ok(Self::truncate_str(text, budget).to_string())
    }
}

#[derive(Serialize)]
struct ExternalRequest<'a> {
    op: &'static str,
    text: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    budget: Option<usize>,
}

#[derive(Deserialize)]
struct ExternalResponse {
    count: Option<usize>,
    text: Option<String>,
}

/// Client for an out-of-process tokenizer over TCP.
///
/// One request is in flight at a time; the channel is guarded by a mutex.
pub struct ExternalTokenizer {
    address: String,
    channel: Mutex<(BufReader<TcpStream>, TcpStream)>,
}

impl ExternalTokenizer {
    pub fn connect(address: &str) -> Result<Self> {
        let stream = TcpStream::connect(address)
            .map_err(|e| Error::Tokenizer(format!("connect {address}: {e}")))?;
        let writer = stream
            .try_clone()
            .map_err(|e| Error::Tokenizer(e.to_string()))?;
        Ok(ExternalTokenizer {
            address: address.to_string(),
            channel: Mutex::new((BufReader::new(stream), writer)),
        })
    }

    fn call(&self, request: &ExternalRequest<'_>) -> Result<ExternalResponse> {
        let mut line = serde_json::to_string(request)?;
        line.push('\n');
        let mut guard = self
            .channel
            .lock()
            .map_err(|_| Error::Tokenizer("tokenizer channel poisoned".into()))?;
        let (reader, writer) = &mut *guard;
        writer
            .write_all(line.as_bytes())
            .and_then(|_| writer.flush())
            .map_err(|e| Error::Tokenizer(format!("{}: {e}", self.address)))?;
        let mut response = String::new();
        let n = reader
            .read_line(&mut response)
            .map_err(|e| Error::Tokenizer(format!("{}: {e}", self.address)))?;
        if n == 0 {
            return Err(Error::Tokenizer(format!("{}: connection closed", self.address)));
        }
        Ok(serde_json::from_str(&response)?)
    }
}

impl Tokenizer for ExternalTokenizer {
    fn id(&self) -> String {
        format!("external({})", self.address)
    }

    fn count(&self, text: &str) -> Result<usize> {
        self.call(&ExternalRequest {
            op: "count",
            text,
            budget: None,
        })?
        .count
        .ok_or_else(|| Error::Tokenizer("response missing `count`".into()))
    }

    fn truncate(&self, text: &str, budget: usize) -> Result<String> {
        self.call(&ExternalRequest {
            op: "truncate",
            text,
            budget: Some(budget),
        })?
        .text
        .ok_or_else(|| Error::Tokenizer("response missing `text`".into()))
    }
}

/// Answers one protocol line with the reference tokenizer. Used by the
/// `tokenizer-server` CLI command and by tests.
pub fn serve_reference_line(line: &str) -> Result<String> {
    #[derive(Deserialize)]
    struct Request {
        op: String,
        text: String,
        budget: Option<usize>,
    }
    let request: Request = serde_json::from_str(line)?;
    let value = match request.op.as_str() {
        "count" => serde_json::json!({ "count": ReferenceTokenizer::count_str(&request.text) }),
        "truncate" => {
            let budget = request
                .budget
                .ok_or_else(|| Error::Tokenizer("truncate requires `budget`".into()))?;
            serde_json::json!({ "text": ReferenceTokenizer::truncate_str(&request.text, budget) })
        }
        other => return Err(Error::Tokenizer(format!("unknown op `{other}`"))),
    };
    Ok(value.to_string())
}

/// `tokenizer = reference | external(<address>)`
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum TokenizerSpec {
    #[default]
    Reference,
    External(String),
}

impl TokenizerSpec {
    pub fn build(&self) -> Result<Box<dyn Tokenizer>> {
        match self {
            TokenizerSpec::Reference => Ok(Box::new(ReferenceTokenizer)),
            TokenizerSpec::External(addr) => Ok(Box::new(ExternalTokenizer::connect(addr)?)),
        }
    }
}

impl FromStr for TokenizerSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "reference" {
            return Ok(TokenizerSpec::Reference);
        }
        if let Some(addr) = s.strip_prefix("external(").and_then(|r| r.strip_suffix(')')) {
            if !addr.is_empty() {
                return Ok(TokenizerSpec::External(addr.to_string()));
            }
        }
        Err(Error::Config(format!("unknown tokenizer `{s}`")))
    }
}

impl TryFrom<String> for TokenizerSpec {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<TokenizerSpec> for String {
    fn from(spec: TokenizerSpec) -> String {
        match spec {
            TokenizerSpec::Reference => "reference".into(),
            TokenizerSpec::External(a) => format!("external({a})"),
        }
    }
}
