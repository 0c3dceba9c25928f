//! Client boundary to chat-completion, embedding and judge services.
//!
//! Everything that talks to a model goes through one of three traits:
//! [`Policy`], [`Embedder`] and [`Judge`]. [`HttpGateway`] implements all
//! three against an OpenAI-shaped JSON-over-HTTP API; the stubs in this
//! module implement them deterministically for tests and offline runs.

use std::fmt;
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;
use tracing::{debug, warn};

use crate::retrieval::{embed_deterministic, normalize};

pub const ENV_BASE_URL: &str = "AGENT_LLM_BASE_URL";
pub const ENV_API_KEY: &str = "AGENT_LLM_API_KEY";
pub const ENV_CHAT_MODEL: &str = "AGENT_CHAT_MODEL";
pub const ENV_EMBED_MODEL: &str = "AGENT_EMBED_MODEL";
pub const ENV_JUDGE_MODEL: &str = "AGENT_JUDGE_MODEL";
pub const ENV_MAX_IN_FLIGHT: &str = "AGENT_MAX_IN_FLIGHT";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GatewayError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("authentication failed: {0}")]
    Auth(String),
    #[error("rate limited: {0}")]
    RateLimited(String),
    #[error("HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("invalid response: {0}")]
    InvalidResponse(String),
    #[error("unparseable judge verdict {0:?}")]
    Verdict(String),
    #[error("embedding batch is empty")]
    EmptyBatch,
    #[error("embedding dimensions differ within a batch")]
    DimensionMismatch,
    #[error("configuration error: {0}")]
    Config(String),
    #[error("scripted stub: {0}")]
    Script(String),
}

impl GatewayError {
    /// Transport faults, throttling and server errors are worth retrying.
    pub fn is_retryable(&self) -> bool {
        match self {
            GatewayError::Transport(_) | GatewayError::RateLimited(_) => true,
            GatewayError::Http { status, .. } => *status >= 500,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
    Tool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

impl Message {
    pub fn new(role: Role, content: impl Into<String>) -> Self {
        Self {
            role,
            content: content.into(),
        }
    }

    pub fn system(content: impl Into<String>) -> Self {
        Self::new(Role::System, content)
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self::new(Role::User, content)
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self::new(Role::Assistant, content)
    }

    pub fn tool(content: impl Into<String>) -> Self {
        Self::new(Role::Tool, content)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationParams {
    pub temperature: f64,
    pub max_tokens: Option<u32>,
    /// When set, the completion is guaranteed to start with this text.
    pub forced_prefix: Option<String>,
}

impl Default for GenerationParams {
    fn default() -> Self {
        Self {
            temperature: 1.0,
            max_tokens: None,
            forced_prefix: None,
        }
    }
}

impl GenerationParams {
    pub fn forced(prefix: &str) -> Self {
        Self {
            forced_prefix: Some(prefix.to_string()),
            ..Self::default()
        }
    }
}

/// Prepends `prefix` unless the text already starts with it.
pub fn ensure_prefix(text: String, prefix: Option<&str>) -> String {
    match prefix {
        Some(p) if !text.starts_with(p) => format!("{p}{text}"),
        _ => text,
    }
}

/// A chat model: message list in, completion text out.
pub trait Policy: Send + Sync {
    fn complete(&self, messages: &[Message], params: &GenerationParams) -> Result<String, GatewayError>;
}

impl<F> Policy for F
where
    F: Fn(&[Message], &GenerationParams) -> Result<String, GatewayError> + Send + Sync,
{
    fn complete(&self, messages: &[Message], params: &GenerationParams) -> Result<String, GatewayError> {
        self(messages, params)
    }
}

pub trait Embedder: Send + Sync {
    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, GatewayError>;

    fn embed(&self, text: &str) -> Result<Vec<f64>, GatewayError> {
        let mut out = self.embed_batch(&[text.to_string()])?;
        out.pop()
            .ok_or_else(|| GatewayError::InvalidResponse("no embedding returned".into()))
    }
}

/// Binary correctness verdict on a candidate answer.
pub trait Judge: Send + Sync {
    fn judge(&self, question: &str, gold: &str, candidate: &str) -> Result<bool, GatewayError>;
}

// ---------------------------------------------------------------------------
// Deterministic stubs
// ---------------------------------------------------------------------------

/// Replays a fixed list of responses; the n-th assistant turn gets the n-th
/// response.
#[derive(Debug, Clone)]
pub struct ScriptedPolicy {
    responses: Vec<String>,
}

impl ScriptedPolicy {
    pub fn new<S: Into<String>>(responses: impl IntoIterator<Item = S>) -> Self {
        Self {
            responses: responses.into_iter().map(Into::into).collect(),
        }
    }
}

pub fn assistant_turns(messages: &[Message]) -> usize {
    messages.iter().filter(|m| m.role == Role::Assistant).count()
}

impl Policy for ScriptedPolicy {
    fn complete(&self, messages: &[Message], params: &GenerationParams) -> Result<String, GatewayError> {
        let turn = assistant_turns(messages);
        let text = self
            .responses
            .get(turn)
            .cloned()
            .ok_or_else(|| GatewayError::Script(format!("no scripted response for turn {turn}")))?;
        Ok(ensure_prefix(text, params.forced_prefix.as_deref()))
    }
}

/// Hashed bag-of-tokens embeddings, see [`embed_deterministic`].
#[derive(Debug, Clone, Copy)]
pub struct StubEmbedder {
    pub dim: usize,
}

impl StubEmbedder {
    pub fn new(dim: usize) -> Self {
        Self { dim }
    }
}

impl Default for StubEmbedder {
    fn default() -> Self {
        Self::new(crate::retrieval::DEFAULT_EMBED_DIM)
    }
}

impl Embedder for StubEmbedder {
    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, GatewayError> {
        if texts.is_empty() {
            return Err(GatewayError::EmptyBatch);
        }
        texts
            .iter()
            .map(|t| embed_deterministic(t, self.dim).map_err(|e| GatewayError::InvalidResponse(e.to_string())))
            .collect()
    }
}

/// Lowercase, drop punctuation, split on whitespace.
pub fn normalize_answer(text: &str) -> Vec<String> {
    let cleaned: String = text
        .chars()
        .filter_map(|c| {
            if c.is_alphanumeric() {
                Some(c.to_lowercase().collect::<String>())
            } else if c.is_whitespace() {
                Some(" ".to_string())
            } else {
                None
            }
        })
        .collect();
    cleaned.split_whitespace().map(str::to_string).collect()
}

/// Accepts a candidate when the normalized gold answer occurs in it as a
/// contiguous run of whole words.
#[derive(Debug, Clone, Copy, Default)]
pub struct StubJudge;

impl Judge for StubJudge {
    fn judge(&self, _question: &str, gold: &str, candidate: &str) -> Result<bool, GatewayError> {
        let gold = normalize_answer(gold);
        let candidate = normalize_answer(candidate);
        if gold.is_empty() {
            return Ok(false);
        }
        Ok(candidate.windows(gold.len()).any(|w| w == gold.as_slice()))
    }
}

// ---------------------------------------------------------------------------
// Retry and concurrency bounds
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub retries: u32,
    pub base_delay: Duration,
    pub max_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            retries: 3,
            base_delay: Duration::from_millis(500),
            max_delay: Duration::from_secs(30),
        }
    }
}

impl RetryPolicy {
    pub fn delay_for(&self, attempt: u32) -> Duration {
        let factor = 2u32.saturating_pow(attempt);
        self.base_delay.saturating_mul(factor).min(self.max_delay)
    }

    /// Runs `op` until it succeeds, fails permanently, or retries run out.
    pub fn run<T>(&self, mut op: impl FnMut() -> Result<T, GatewayError>) -> Result<T, GatewayError> {
        let mut attempt = 0;
        loop {
            match op() {
                Ok(v) => return Ok(v),
                Err(e) if e.is_retryable() && attempt < self.retries => {
                    let delay = self.delay_for(attempt);
                    warn!(attempt, ?delay, error = %e, "retrying request");
                    std::thread::sleep(delay);
                    attempt += 1;
                }
                Err(e) => return Err(e),
            }
        }
    }
}

/// Wraps a policy with bounded retries.
pub struct Retrying<P> {
    pub inner: P,
    pub retry: RetryPolicy,
}

impl<P: Policy> Policy for Retrying<P> {
    fn complete(&self, messages: &[Message], params: &GenerationParams) -> Result<String, GatewayError> {
        self.retry.run(|| self.inner.complete(messages, params))
    }
}

/// Counting semaphore bounding concurrent outbound requests. Records the
/// peak concurrency it has admitted.
#[derive(Debug)]
pub struct InFlightLimiter {
    max: usize,
    state: Mutex<(usize, usize)>,
    freed: Condvar,
}

pub struct Permit<'a> {
    limiter: &'a InFlightLimiter,
}

impl InFlightLimiter {
    pub fn new(max: usize) -> Self {
        Self {
            max: max.max(1),
            state: Mutex::new((0, 0)),
            freed: Condvar::new(),
        }
    }

    pub fn acquire(&self) -> Permit<'_> {
        let mut state = self.state.lock().expect("limiter poisoned");
        while state.0 >= self.max {
            state = self.freed.wait(state).expect("limiter poisoned");
        }
        state.0 += 1;
        state.1 = state.1.max(state.0);
        Permit { limiter: self }
    }

    pub fn peak(&self) -> usize {
        self.state.lock().expect("limiter poisoned").1
    }

    pub fn max(&self) -> usize {
        self.max
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut state = self.limiter.state.lock().expect("limiter poisoned");
        state.0 -= 1;
        self.limiter.freed.notify_one();
    }
}

/// Applies an [`InFlightLimiter`] to any gateway service.
pub struct Limited<T> {
    pub inner: T,
    pub limiter: InFlightLimiter,
}

impl<T> Limited<T> {
    pub fn new(inner: T, max_in_flight: usize) -> Self {
        Self {
            inner,
            limiter: InFlightLimiter::new(max_in_flight),
        }
    }
}

impl<P: Policy> Policy for Limited<P> {
    fn complete(&self, messages: &[Message], params: &GenerationParams) -> Result<String, GatewayError> {
        let _permit = self.limiter.acquire();
        self.inner.complete(messages, params)
    }
}

impl<E: Embedder> Embedder for Limited<E> {
    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, GatewayError> {
        let _permit = self.limiter.acquire();
        self.inner.embed_batch(texts)
    }
}

impl<J: Judge> Judge for Limited<J> {
    fn judge(&self, question: &str, gold: &str, candidate: &str) -> Result<bool, GatewayError> {
        let _permit = self.limiter.acquire();
        self.inner.judge(question, gold, candidate)
    }
}

// ---------------------------------------------------------------------------
// HTTP gateway
// ---------------------------------------------------------------------------

/// A string that never shows up in logs or serialized output.
#[derive(Clone, Default, PartialEq, Eq)]
pub struct SecretString(String);

impl SecretString {
    pub fn new(s: impl Into<String>) -> Self {
        Self(s.into())
    }

    pub fn expose(&self) -> &str {
        &self.0
    }
}

impl fmt::Debug for SecretString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("[redacted]")
    }
}

#[derive(Debug, Clone)]
pub struct GatewayConfig {
    pub base_url: String,
    pub api_key: SecretString,
    pub chat_model: String,
    pub embed_model: String,
    pub judge_model: String,
    pub max_in_flight: usize,
    pub timeout: Duration,
    pub retries: u32,
}

impl GatewayConfig {
    pub fn from_env() -> Result<Self, GatewayError> {
        Self::from_lookup(|k| std::env::var(k).ok())
    }

    pub fn from_lookup(get: impl Fn(&str) -> Option<String>) -> Result<Self, GatewayError> {
        let base_url = get(ENV_BASE_URL)
            .ok_or_else(|| GatewayError::Config(format!("{ENV_BASE_URL} is not set")))?;
        let max_in_flight = match get(ENV_MAX_IN_FLIGHT) {
            None => 4,
            Some(v) => v
                .parse::<usize>()
                .ok()
                .filter(|n| *n >= 1)
                .ok_or_else(|| GatewayError::Config(format!("{ENV_MAX_IN_FLIGHT} must be a positive integer")))?,
        };
        let model = |key: &str, default: &str| get(key).unwrap_or_else(|| default.to_string());
        Ok(Self {
            base_url: base_url.trim_end_matches('/').to_string(),
            api_key: SecretString::new(get(ENV_API_KEY).unwrap_or_default()),
            chat_model: model(ENV_CHAT_MODEL, "gpt-4o-mini"),
            embed_model: model(ENV_EMBED_MODEL, "all-MiniLM-L6-v2"),
            judge_model: model(ENV_JUDGE_MODEL, "gpt-4o-mini"),
            max_in_flight,
            timeout: Duration::from_secs(120),
            retries: 3,
        })
    }
}

pub const JUDGE_SYSTEM_PROMPT: &str = "You grade answers to legal research questions. \
Compare the candidate answer with the reference answer and decide whether the candidate \
is correct. Reply with exactly one word: True or False.";

pub fn judge_user_message(question: &str, gold: &str, candidate: &str) -> String {
    format!("Question: {question}\nReference answer: {gold}\nCandidate answer: {candidate}\n\nIs the candidate answer correct? Reply True or False.")
}

/// Strict verdict grammar: `True` or `False`, case-insensitive, optionally
/// followed by a period.
pub fn parse_verdict(raw: &str) -> Result<bool, GatewayError> {
    let v = raw.trim();
    let v = v.strip_suffix('.').unwrap_or(v);
    if v.eq_ignore_ascii_case("true") {
        Ok(true)
    } else if v.eq_ignore_ascii_case("false") {
        Ok(false)
    } else {
        Err(GatewayError::Verdict(raw.to_string()))
    }
}

fn wire_role(role: Role) -> &'static str {
    // Tool output travels as a user turn; tool syntax lives in the text protocol.
    match role {
        Role::System => "system",
        Role::User | Role::Tool => "user",
        Role::Assistant => "assistant",
    }
}

/// Request body for `POST {base_url}/chat/completions`. A forced prefix is
/// sent as a trailing assistant message the server continues from
/// (`continue_final_message`, as accepted by vLLM).
pub fn chat_request_body(model: &str, messages: &[Message], params: &GenerationParams) -> Value {
    let mut wire: Vec<Value> = messages
        .iter()
        .map(|m| json!({ "role": wire_role(m.role), "content": m.content }))
        .collect();
    if let Some(prefix) = &params.forced_prefix {
        wire.push(json!({ "role": "assistant", "content": prefix }));
    }
    let mut body = json!({
        "model": model,
        "messages": wire,
        "temperature": params.temperature,
    });
    if params.forced_prefix.is_some() {
        body["continue_final_message"] = json!(true);
        body["add_generation_prompt"] = json!(false);
    }
    if let Some(n) = params.max_tokens {
        body["max_tokens"] = json!(n);
    }
    body
}

pub struct HttpGateway {
    config: GatewayConfig,
    client: reqwest::blocking::Client,
    limiter: InFlightLimiter,
    retry: RetryPolicy,
}

impl HttpGateway {
    pub fn new(config: GatewayConfig) -> Result<Self, GatewayError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| GatewayError::Config(e.to_string()))?;
        let retry = RetryPolicy {
            retries: config.retries,
            ..RetryPolicy::default()
        };
        Ok(Self {
            limiter: InFlightLimiter::new(config.max_in_flight),
            client,
            config,
            retry,
        })
    }

    pub fn with_retry_policy(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn config(&self) -> &GatewayConfig {
        &self.config
    }

    pub fn peak_in_flight(&self) -> usize {
        self.limiter.peak()
    }

    fn post(&self, path: &str, body: &Value) -> Result<Value, GatewayError> {
        let url = format!("{}/{path}", self.config.base_url);
        self.retry.run(|| {
            let _permit = self.limiter.acquire();
            debug!(%url, "POST");
            let mut req = self.client.post(&url).json(body);
            if !self.config.api_key.expose().is_empty() {
                req = req.bearer_auth(self.config.api_key.expose());
            }
            let resp = req.send().map_err(|e| GatewayError::Transport(e.to_string()))?;
            let status = resp.status().as_u16();
            let text = resp.text().map_err(|e| GatewayError::Transport(e.to_string()))?;
            match status {
                200..=299 => serde_json::from_str(&text)
                    .map_err(|e| GatewayError::InvalidResponse(format!("{e}: {text}"))),
                401 | 403 => Err(GatewayError::Auth(format!("HTTP {status}"))),
                429 => Err(GatewayError::RateLimited(text)),
                _ => Err(GatewayError::Http { status, body: text }),
            }
        })
    }

    fn chat(&self, model: &str, messages: &[Message], params: &GenerationParams) -> Result<String, GatewayError> {
        let body = chat_request_body(model, messages, params);
        let resp = self.post("chat/completions", &body)?;
        resp.pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| GatewayError::InvalidResponse("missing choices[0].message.content".into()))
    }
}

impl Policy for HttpGateway {
    fn complete(&self, messages: &[Message], params: &GenerationParams) -> Result<String, GatewayError> {
        if messages.first().map(|m| m.role) != Some(Role::System) {
            return Err(GatewayError::Config("first message must be the system prompt".into()));
        }
        let text = self.chat(&self.config.chat_model, messages, params)?;
        Ok(ensure_prefix(text, params.forced_prefix.as_deref()))
    }
}

impl Embedder for HttpGateway {
    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, GatewayError> {
        if texts.is_empty() {
            return Err(GatewayError::EmptyBatch);
        }
        let body = json!({ "model": self.config.embed_model, "input": texts });
        let resp = self.post("embeddings", &body)?;
        let data = resp
            .get("data")
            .and_then(Value::as_array)
            .ok_or_else(|| GatewayError::InvalidResponse("missing data array".into()))?;
        let mut rows: Vec<(u64, Vec<f64>)> = Vec::with_capacity(data.len());
        for (i, item) in data.iter().enumerate() {
            let index = item.get("index").and_then(Value::as_u64).unwrap_or(i as u64);
            let vector: Vec<f64> = item
                .get("embedding")
                .and_then(Value::as_array)
                .ok_or_else(|| GatewayError::InvalidResponse("missing embedding".into()))?
                .iter()
                .map(|x| x.as_f64().ok_or_else(|| GatewayError::InvalidResponse("non-numeric embedding".into())))
                .collect::<Result<_, _>>()?;
            rows.push((index, vector));
        }
        rows.sort_by_key(|(i, _)| *i);
        if rows.len() != texts.len() {
            return Err(GatewayError::InvalidResponse(format!(
                "expected {} embeddings, got {}",
                texts.len(),
                rows.len()
            )));
        }
        let dim = rows[0].1.len();
        if rows.iter().any(|(_, v)| v.len() != dim) {
            return Err(GatewayError::DimensionMismatch);
        }
        rows.into_iter()
            .map(|(_, v)| normalize(v).ok_or_else(|| GatewayError::InvalidResponse("zero embedding".into())))
            .collect()
    }
}

impl Judge for HttpGateway {
    fn judge(&self, question: &str, gold: &str, candidate: &str) -> Result<bool, GatewayError> {
        let messages = [
            Message::system(JUDGE_SYSTEM_PROMPT),
            Message::user(judge_user_message(question, gold, candidate)),
        ];
        let params = GenerationParams {
            temperature: 0.0,
            max_tokens: Some(4),
            forced_prefix: None,
        };
        let raw = self.chat(&self.config.judge_model, &messages, &params)?;
        parse_verdict(&raw)
    }
}
