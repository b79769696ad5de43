//! HTTP providers: an OpenAI-compatible chat-completion client and an
//! embedding-service client, plus transport-level retry.

use std::collections::HashMap;
use std::sync::{Condvar, Mutex};
use std::thread;
use std::time::Duration;

use graphrunner_core::model::{
    estimate_tokens, Completion, CompletionRequest, LanguageModel, ProviderError, Role, TokenUsage,
};
use graphrunner_core::similarity::{EmbedError, Embedder, EmbeddingVector};
use serde::Deserialize;
use serde_json::{json, Value};
use ureq::Agent;

fn agent(timeout: Duration) -> Agent {
    Agent::config_builder()
        .timeout_global(Some(timeout))
        .http_status_as_error(false)
        .build()
        .into()
}

/// POST a JSON body; non-2xx statuses come back as errors with the body.
fn post_json(agent: &Agent, url: &str, token: Option<&str>, body: &Value) -> Result<Value, ProviderError> {
    let mut req = agent.post(url).header("Content-Type", "application/json");
    if let Some(t) = token {
        req = req.header("Authorization", &format!("Bearer {t}"));
    }
    let resp = req
        .send(body.to_string())
        .map_err(|e| ProviderError::Transport(e.to_string()))?;
    let status = resp.status().as_u16();
    let text = resp
        .into_body()
        .read_to_string()
        .map_err(|e| ProviderError::Transport(e.to_string()))?;
    match status {
        200..=299 => serde_json::from_str(&text).map_err(|e| ProviderError::Response(format!("{e}: {text}"))),
        401 | 403 => Err(ProviderError::Auth(text)),
        _ => Err(ProviderError::Status { status, body: text }),
    }
}

#[derive(Debug, Clone)]
pub struct ChatClient {
    agent: Agent,
    endpoint: String,
    model: String,
    temperature: f64,
    api_key: Option<String>,
}

impl ChatClient {
    pub fn new(endpoint: &str, model: &str, temperature: f64, api_key: Option<String>, timeout: Duration) -> Self {
        Self {
            agent: agent(timeout),
            endpoint: endpoint.into(),
            model: model.into(),
            temperature,
            api_key,
        }
    }
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
    #[serde(default)]
    usage: Option<Usage>,
}

#[derive(Deserialize)]
struct Choice {
    message: Message,
}

#[derive(Deserialize)]
struct Message {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize)]
struct Usage {
    #[serde(alias = "input_tokens")]
    prompt_tokens: u64,
    #[serde(alias = "output_tokens")]
    completion_tokens: u64,
}

fn role_name(role: Role) -> &'static str {
    match role {
        Role::System => "system",
        Role::User => "user",
        Role::Assistant => "assistant",
    }
}

impl LanguageModel for ChatClient {
    fn complete(&self, request: &CompletionRequest) -> Result<Completion, ProviderError> {
        let messages: Vec<Value> = request
            .messages
            .iter()
            .map(|m| json!({"role": role_name(m.role), "content": m.content}))
            .collect();
        let body = json!({"model": self.model, "messages": messages, "temperature": self.temperature});
        let raw = post_json(&self.agent, &self.endpoint, self.api_key.as_deref(), &body)?;
        let parsed: ChatResponse =
            serde_json::from_value(raw.clone()).map_err(|e| ProviderError::Response(format!("{e}: {raw}")))?;
        let text = parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| ProviderError::Response("response has no message content".into()))?;
        let usage = match parsed.usage {
            Some(u) => TokenUsage::new(u.prompt_tokens, u.completion_tokens),
            None => TokenUsage::new(estimate_tokens(&request.prompt()), estimate_tokens(&text)),
        };
        Ok(Completion { text, usage })
    }
}

/// Retries transient provider failures with exponential backoff.
pub struct RetryingModel<M> {
    inner: M,
    attempts: u32,
    initial_backoff: Duration,
    sleep: Box<dyn Fn(Duration) + Send + Sync>,
}

impl<M: LanguageModel> RetryingModel<M> {
    /// Three attempts, waiting 1s then 2s.
    pub fn new(inner: M) -> Self {
        Self::with_policy(inner, 3, Duration::from_secs(1), thread::sleep)
    }

    pub fn with_policy(
        inner: M,
        attempts: u32,
        initial_backoff: Duration,
        sleep: impl Fn(Duration) + Send + Sync + 'static,
    ) -> Self {
        Self {
            inner,
            attempts: attempts.max(1),
            initial_backoff,
            sleep: Box::new(sleep),
        }
    }
}

impl<M: LanguageModel> LanguageModel for RetryingModel<M> {
    fn complete(&self, request: &CompletionRequest) -> Result<Completion, ProviderError> {
        let mut wait = self.initial_backoff;
        let mut attempt = 1;
        loop {
            match self.inner.complete(request) {
                Err(e) if e.is_transient() && attempt < self.attempts => {
                    (self.sleep)(wait);
                    wait *= 2;
                    attempt += 1;
                }
                other => return other,
            }
        }
    }

    fn count_tokens(&self, text: &str) -> Option<u64> {
        self.inner.count_tokens(text)
    }
}

/// Counting semaphore bounding concurrent requests.
struct Limit {
    free: Mutex<usize>,
    cv: Condvar,
}

impl Limit {
    fn acquire(&self) -> LimitGuard<'_> {
        let mut free = self.free.lock().unwrap();
        while *free == 0 {
            free = self.cv.wait(free).unwrap();
        }
        *free -= 1;
        LimitGuard(self)
    }
}

struct LimitGuard<'a>(&'a Limit);

impl Drop for LimitGuard<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap() += 1;
        self.0.cv.notify_one();
    }
}

/// Embedding service speaking `{"texts": [...]}` -> `{"vectors": [[...]]}`.
/// Vectors are cached per text.
pub struct HttpEmbedder {
    agent: Agent,
    endpoint: String,
    api_key: Option<String>,
    dimension: usize,
    limit: Limit,
    cache: Mutex<HashMap<String, EmbeddingVector>>,
}

impl HttpEmbedder {
    pub fn new(endpoint: &str, api_key: Option<String>, dimension: usize, max_in_flight: usize, timeout: Duration) -> Self {
        Self {
            agent: agent(timeout),
            endpoint: endpoint.into(),
            api_key,
            dimension,
            limit: Limit {
                free: Mutex::new(max_in_flight.max(1)),
                cv: Condvar::new(),
            },
            cache: Mutex::new(HashMap::new()),
        }
    }

    fn fetch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        let failed = |detail: String| EmbedError::Provider {
            provider: self.endpoint.clone(),
            detail,
        };
        let raw = {
            let _slot = self.limit.acquire();
            post_json(&self.agent, &self.endpoint, self.api_key.as_deref(), &json!({ "texts": texts }))
                .map_err(|e| failed(e.to_string()))?
        };
        let vectors: Vec<Vec<f64>> = serde_json::from_value(raw["vectors"].clone())
            .map_err(|e| failed(format!("bad `vectors` field: {e}")))?;
        if vectors.len() != texts.len() {
            return Err(EmbedError::CountMismatch {
                expected: texts.len(),
                got: vectors.len(),
            });
        }
        vectors
            .into_iter()
            .map(|v| {
                if v.len() != self.dimension {
                    return Err(EmbedError::Dimension {
                        expected: self.dimension,
                        got: v.len(),
                    });
                }
                EmbeddingVector::new(v)
            })
            .collect()
    }
}

impl Embedder for HttpEmbedder {
    fn name(&self) -> &str {
        "http"
    }

    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbedError> {
        Ok(self.embed_batch(&[text])?.remove(0))
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        let missing: Vec<&str> = {
            let cache = self.cache.lock().unwrap();
            let mut seen = std::collections::HashSet::new();
            texts
                .iter()
                .copied()
                .filter(|t| !cache.contains_key(*t) && seen.insert(*t))
                .collect()
        };
        if !missing.is_empty() {
            let fetched = self.fetch(&missing)?;
            let mut cache = self.cache.lock().unwrap();
            for (t, v) in missing.iter().zip(fetched) {
                cache.insert((*t).to_string(), v);
            }
        }
        let cache = self.cache.lock().unwrap();
        Ok(texts.iter().map(|t| cache[*t].clone()).collect())
    }
}
