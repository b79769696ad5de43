//! Language-model and clock interfaces, plus offline implementations.

use alloc::borrow::ToOwned;
use alloc::string::String;
use alloc::vec::Vec;
use core::ops::{Add, AddAssign};
use core::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenUsage {
    pub input: u64,
    pub output: u64,
}

impl TokenUsage {
    pub fn new(input: u64, output: u64) -> Self {
        Self { input, output }
    }

    pub fn total(&self) -> u64 {
        self.input + self.output
    }
}

impl Add for TokenUsage {
    type Output = TokenUsage;

    fn add(self, rhs: Self) -> Self {
        Self {
            input: self.input + rhs.input,
            output: self.output + rhs.output,
        }
    }
}

impl AddAssign for TokenUsage {
    fn add_assign(&mut self, rhs: Self) {
        *self = *self + rhs;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: Role::User,
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Purpose {
    Plan,
    Answer,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CompletionRequest {
    pub purpose: Purpose,
    pub messages: Vec<ChatMessage>,
}

impl CompletionRequest {
    pub fn single(purpose: Purpose, prompt: impl Into<String>) -> Self {
        Self {
            purpose,
            messages: alloc::vec![ChatMessage::user(prompt)],
        }
    }

    /// Concatenated message contents.
    pub fn prompt(&self) -> String {
        let parts: Vec<&str> = self.messages.iter().map(|m| m.content.as_str()).collect();
        parts.join("\n\n")
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Completion {
    pub text: String,
    pub usage: TokenUsage,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProviderError {
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("authentication failed: {0}")]
    Auth(String),
    #[error("provider returned status {status}: {body}")]
    Status { status: u16, body: String },
    #[error("unexpected provider response: {0}")]
    Response(String),
    #[error("scripted provider has no response left (call {call})")]
    ScriptExhausted { call: usize },
}

impl ProviderError {
    /// Whether a transport-level retry could help.
    pub fn is_transient(&self) -> bool {
        match self {
            ProviderError::Transport(_) => true,
            ProviderError::Status { status, .. } => *status == 429 || *status >= 500,
            _ => false,
        }
    }
}

/// A chat-completion backend. Implementations are shared across concurrent
/// queries.
pub trait LanguageModel: Send + Sync {
    fn complete(&self, request: &CompletionRequest) -> Result<Completion, ProviderError>;

    /// Exact token count for `text` when the backend knows its tokenizer.
    fn count_tokens(&self, _text: &str) -> Option<u64> {
        None
    }
}

/// ceil(chars / 4).
pub fn estimate_tokens(text: &str) -> u64 {
    (text.chars().count() as u64).div_ceil(4)
}

/// Token count from the model when it has one, otherwise the estimate.
pub fn token_count(model: &dyn LanguageModel, text: &str) -> u64 {
    model.count_tokens(text).unwrap_or_else(|| estimate_tokens(text))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptedResponse {
    pub text: String,
    /// Reported usage; estimated from prompt and text when absent.
    #[serde(default)]
    pub usage: Option<TokenUsage>,
}

impl From<&str> for ScriptedResponse {
    fn from(text: &str) -> Self {
        Self {
            text: text.into(),
            usage: None,
        }
    }
}

/// Replays a fixed sequence of responses, one per call, and records every
/// request it receives.
#[derive(Debug)]
pub struct ScriptedModel {
    responses: Vec<ScriptedResponse>,
    next: AtomicUsize,
    /// Repeat the last response once the script runs out.
    repeat_last: bool,
    seen: spin::Mutex<Vec<String>>,
}

impl ScriptedModel {
    pub fn new<R: Into<ScriptedResponse>>(responses: impl IntoIterator<Item = R>) -> Self {
        Self {
            responses: responses.into_iter().map(Into::into).collect(),
            next: AtomicUsize::new(0),
            repeat_last: false,
            seen: spin::Mutex::new(Vec::new()),
        }
    }

    pub fn repeating_last(mut self) -> Self {
        self.repeat_last = true;
        self
    }

    pub fn calls(&self) -> usize {
        self.next.load(Ordering::SeqCst)
    }

    /// Prompts received so far, in call order.
    pub fn prompts(&self) -> Vec<String> {
        self.seen.lock().clone()
    }
}

impl LanguageModel for ScriptedModel {
    fn complete(&self, request: &CompletionRequest) -> Result<Completion, ProviderError> {
        let call = self.next.fetch_add(1, Ordering::SeqCst);
        let prompt = request.prompt();
        let response = match self.responses.get(call) {
            Some(r) => r,
            None if self.repeat_last && !self.responses.is_empty() => self.responses.last().unwrap(),
            None => return Err(ProviderError::ScriptExhausted { call: call + 1 }),
        };
        let usage = response
            .usage
            .unwrap_or_else(|| TokenUsage::new(estimate_tokens(&prompt), estimate_tokens(&response.text)));
        self.seen.lock().push(prompt);
        Ok(Completion {
            text: response.text.clone(),
            usage,
        })
    }
}

pub const CONTEXT_HEADER: &str = "## Retrieved context";
pub const QUESTION_HEADER: &str = "## Question";

/// Body of the `## header` section of a prompt built from blank-line
/// separated sections, or `None` when absent.
pub fn section<'a>(prompt: &'a str, header: &str) -> Option<&'a str> {
    let start = if prompt.starts_with(header) {
        0
    } else {
        prompt.find(&["\n\n", header].concat())? + 2
    };
    let body = prompt[start + header.len()..].trim_start_matches('\n');
    let end = body.find("\n\n## ").unwrap_or(body.len());
    Some(body[..end].trim_end())
}

/// Answers with the retrieved context verbatim. Offline stand-in for an
/// answer model.
#[derive(Debug, Default)]
pub struct EchoAnswerer {
    calls: AtomicUsize,
}

impl EchoAnswerer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl LanguageModel for EchoAnswerer {
    fn complete(&self, request: &CompletionRequest) -> Result<Completion, ProviderError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let prompt = request.prompt();
        let text = section(&prompt, CONTEXT_HEADER)
            .ok_or_else(|| ProviderError::Response("prompt has no retrieved-context section".into()))?
            .to_owned();
        Ok(Completion {
            usage: TokenUsage::new(estimate_tokens(&prompt), estimate_tokens(&text)),
            text,
        })
    }
}

/// Monotonic microsecond clock used for phase timings.
pub trait Clock: Sync {
    fn now_micros(&self) -> u64;
}

/// Always reads zero; makes timing fields deterministic.
#[derive(Debug, Clone, Copy, Default)]
pub struct FrozenClock;

impl Clock for FrozenClock {
    fn now_micros(&self) -> u64 {
        0
    }
}
