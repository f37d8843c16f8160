//! Chat-completion gateway.
//!
//! [`HttpBackend`] speaks the OpenAI-compatible `/v1/chat/completions`
//! protocol with retry and backoff. [`ScriptedBackend`] replays canned replies
//! from per-component FIFO queues so whole runs can be tested byte-exactly.

use std::collections::{HashMap, VecDeque};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Environment variable holding the API key for [`HttpBackend`].
pub const API_KEY_ENV: &str = "DELTA_API_KEY";
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(120);
pub const DEFAULT_MAX_NEW_TOKENS: u32 = 2048;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LlmError {
    #[error("authentication failed (HTTP {status}): {message}")]
    Auth { status: u16, message: String },
    /// Rate limits, timeouts, 5xx and connection failures.
    #[error("transient failure{}: {message}", status.map(|s| format!(" (HTTP {s})")).unwrap_or_default())]
    Transient { status: Option<u16>, message: String },
    #[error("transport error after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("API error (HTTP {status}): {body}")]
    Api { status: u16, body: String },
    #[error("malformed response: {0}")]
    Protocol(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("script exhausted for component '{tag}'")]
    ScriptExhausted { tag: String },
    #[error("prompt for component '{tag}' does not contain expected text {expected:?}")]
    UnexpectedPrompt { tag: String, expected: String },
}

impl LlmError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, LlmError::Transient { .. })
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
pub struct Message {
    pub role: Role,
    pub content: String,
}

impl Message {
    pub fn system(content: impl Into<String>) -> Self {
        Self {
            role: Role::System,
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: Role::User,
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self {
            role: Role::Assistant,
            content: content.into(),
        }
    }
}

/// Model name and sampling settings shared by every request of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationSettings {
    pub model: String,
    pub max_new_tokens: u32,
    pub temperature: f64,
}

impl Default for GenerationSettings {
    fn default() -> Self {
        Self {
            model: "gpt-3.5-turbo-0125".to_string(),
            max_new_tokens: DEFAULT_MAX_NEW_TOKENS,
            temperature: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChatRequest {
    /// Component tag; routes scripted replies, never sent on the wire.
    pub tag: String,
    pub model: String,
    pub messages: Vec<Message>,
    pub max_new_tokens: u32,
    pub temperature: f64,
}

impl ChatRequest {
    pub fn new(tag: impl Into<String>, settings: &GenerationSettings, messages: Vec<Message>) -> Self {
        Self {
            tag: tag.into(),
            model: settings.model.clone(),
            messages,
            max_new_tokens: settings.max_new_tokens,
            temperature: settings.temperature,
        }
    }

    /// Single-turn request carrying one user prompt.
    pub fn prompt(tag: impl Into<String>, settings: &GenerationSettings, prompt: String) -> Self {
        Self::new(tag, settings, vec![Message::user(prompt)])
    }

    pub fn validate(&self) -> Result<(), LlmError> {
        match self.messages.last() {
            None => Err(LlmError::InvalidRequest("no messages".into())),
            Some(m) if m.role != Role::User => {
                Err(LlmError::InvalidRequest("last message must come from the user".into()))
            }
            _ if self.max_new_tokens == 0 => {
                Err(LlmError::InvalidRequest("max_new_tokens must be positive".into()))
            }
            _ if self.temperature.is_nan() || self.temperature < 0.0 => {
                Err(LlmError::InvalidRequest("temperature must be non-negative".into()))
            }
            _ => Ok(()),
        }
    }

    pub fn last_user_content(&self) -> &str {
        self.messages
            .iter()
            .rev()
            .find(|m| m.role == Role::User)
            .map(|m| m.content.as_str())
            .unwrap_or("")
    }
}

pub trait ChatBackend: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<String, LlmError>;

    /// Short identity string recorded in run manifests.
    fn describe(&self) -> String;
}

impl<B: ChatBackend + ?Sized> ChatBackend for Arc<B> {
    fn complete(&self, request: &ChatRequest) -> Result<String, LlmError> {
        (**self).complete(request)
    }

    fn describe(&self) -> String {
        (**self).describe()
    }
}

impl<B: ChatBackend + ?Sized> ChatBackend for &B {
    fn complete(&self, request: &ChatRequest) -> Result<String, LlmError> {
        (**self).complete(request)
    }

    fn describe(&self) -> String {
        (**self).describe()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub initial_delay: Duration,
    pub multiplier: f64,
    pub max_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            initial_delay: Duration::from_secs(1),
            multiplier: 2.0,
            max_delay: Duration::from_secs(30),
        }
    }
}

impl RetryPolicy {
    pub fn no_delay(max_attempts: u32) -> Self {
        Self {
            max_attempts,
            initial_delay: Duration::ZERO,
            multiplier: 1.0,
            max_delay: Duration::ZERO,
        }
    }

    /// Delay before retry number `retry` (1 = first retry).
    pub fn delay(&self, retry: u32) -> Duration {
        let factor = self.multiplier.max(1.0).powi(retry.saturating_sub(1) as i32);
        self.initial_delay.mul_f64(factor).min(self.max_delay)
    }

    /// Runs `op` until it succeeds, fails permanently, or attempts run out.
    pub fn run<T>(&self, mut op: impl FnMut() -> Result<T, LlmError>) -> Result<T, LlmError> {
        let attempts = self.max_attempts.max(1);
        let mut attempt = 1;
        loop {
            match op() {
                Ok(v) => return Ok(v),
                Err(e) if e.is_retryable() && attempt < attempts => {
                    log::warn!("attempt {attempt}/{attempts} failed: {e}; retrying");
                    std::thread::sleep(self.delay(attempt));
                    attempt += 1;
                }
                Err(e) if e.is_retryable() => {
                    return Err(LlmError::Transport {
                        attempts,
                        message: e.to_string(),
                    })
                }
                Err(e) => return Err(e),
            }
        }
    }
}

#[derive(Serialize)]
struct WireRequest<'a> {
    model: &'a str,
    messages: &'a [Message],
    max_tokens: u32,
    temperature: f64,
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireMessage,
}

#[derive(Deserialize)]
struct WireMessage {
    content: Option<String>,
}

/// Serializes the request body exactly as it is sent.
pub fn wire_body(request: &ChatRequest) -> Vec<u8> {
    serde_json::to_vec(&WireRequest {
        model: &request.model,
        messages: &request.messages,
        max_tokens: request.max_new_tokens,
        temperature: request.temperature,
    })
    .expect("request serialization cannot fail")
}

/// Extracts the assistant text from a chat-completions response body.
pub fn parse_wire_response(body: &str) -> Result<String, LlmError> {
    let parsed: WireResponse =
        serde_json::from_str(body).map_err(|e| LlmError::Protocol(e.to_string()))?;
    parsed
        .choices
        .into_iter()
        .next()
        .ok_or_else(|| LlmError::Protocol("response has no choices".into()))?
        .message
        .content
        .ok_or_else(|| LlmError::Protocol("choice has no content".into()))
}

/// OpenAI-compatible HTTP backend.
pub struct HttpBackend {
    endpoint: String,
    api_key: Option<String>,
    agent: ureq::Agent,
    retry: RetryPolicy,
}

impl HttpBackend {
    pub fn new(base_url: &str, api_key: Option<String>, timeout: Duration, retry: RetryPolicy) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            endpoint: format!("{}/v1/chat/completions", base_url.trim_end_matches('/')),
            api_key,
            agent,
            retry,
        }
    }

    /// Reads the API key from `DELTA_API_KEY`.
    pub fn from_env(base_url: &str, timeout: Duration, retry: RetryPolicy) -> Self {
        let key = std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty());
        Self::new(base_url, key, timeout, retry)
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }

    fn attempt(&self, body: &[u8]) -> Result<String, LlmError> {
        let mut req = self
            .agent
            .post(&self.endpoint)
            .header("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", format!("Bearer {key}"));
        }
        let mut resp = req.send(body).map_err(classify_transport)?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(classify_transport)?;
        match status {
            200..=299 => parse_wire_response(&text),
            401 | 403 => Err(LlmError::Auth {
                status,
                message: text,
            }),
            408 | 409 | 425 | 429 | 500..=599 => Err(LlmError::Transient {
                status: Some(status),
                message: text,
            }),
            _ => Err(LlmError::Api { status, body: text }),
        }
    }
}

fn classify_transport(e: ureq::Error) -> LlmError {
    match e {
        ureq::Error::Timeout(_)
        | ureq::Error::Io(_)
        | ureq::Error::ConnectionFailed
        | ureq::Error::HostNotFound
        | ureq::Error::BodyStalled => LlmError::Transient {
            status: None,
            message: e.to_string(),
        },
        other => LlmError::Transport {
            attempts: 1,
            message: other.to_string(),
        },
    }
}

impl ChatBackend for HttpBackend {
    fn complete(&self, request: &ChatRequest) -> Result<String, LlmError> {
        request.validate()?;
        let body = wire_body(request);
        self.retry.run(|| self.attempt(&body))
    }

    fn describe(&self) -> String {
        format!("openai-compatible:{}", self.endpoint)
    }
}

type Responder = Arc<dyn Fn(&ChatRequest) -> String + Send + Sync>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordedCall {
    pub tag: String,
    pub prompt: String,
    pub message_count: usize,
}

/// Script file for [`ScriptedBackend`]: FIFO replies per component tag plus
/// an optional constant reply once a queue runs dry.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Script {
    #[serde(default)]
    pub queues: HashMap<String, Vec<String>>,
    #[serde(default)]
    pub fallback: HashMap<String, String>,
}

#[derive(Default)]
struct ScriptState {
    queues: HashMap<String, VecDeque<Result<String, LlmError>>>,
    responders: HashMap<String, Responder>,
    fallbacks: HashMap<String, String>,
    expectations: HashMap<String, VecDeque<String>>,
    calls: Vec<RecordedCall>,
}

/// Deterministic backend that replays replies per component tag.
///
/// Resolution order for a request tagged `t`: the queue for `t`, then a
/// responder closure for `t`, then the fallback reply for `t`. With nothing
/// left the call fails with [`LlmError::ScriptExhausted`].
#[derive(Default)]
pub struct ScriptedBackend {
    state: Mutex<ScriptState>,
}

impl ScriptedBackend {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_script(script: Script) -> Self {
        let backend = Self::new();
        for (tag, replies) in script.queues {
            for r in replies {
                backend.push(&tag, r);
            }
        }
        for (tag, reply) in script.fallback {
            backend.set_fallback(&tag, reply);
        }
        backend
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, ScriptState> {
        self.state.lock().unwrap_or_else(|p| p.into_inner())
    }

    pub fn push(&self, tag: &str, reply: impl Into<String>) -> &Self {
        self.lock()
            .queues
            .entry(tag.to_string())
            .or_default()
            .push_back(Ok(reply.into()));
        self
    }

    pub fn push_all<S: Into<String>>(&self, tag: &str, replies: impl IntoIterator<Item = S>) -> &Self {
        for r in replies {
            self.push(tag, r);
        }
        self
    }

    /// Queues a failure for `tag`.
    pub fn push_error(&self, tag: &str, error: LlmError) -> &Self {
        self.lock()
            .queues
            .entry(tag.to_string())
            .or_default()
            .push_back(Err(error));
        self
    }

    pub fn set_responder(
        &self,
        tag: &str,
        f: impl Fn(&ChatRequest) -> String + Send + Sync + 'static,
    ) -> &Self {
        self.lock().responders.insert(tag.to_string(), Arc::new(f));
        self
    }

    pub fn set_fallback(&self, tag: &str, reply: impl Into<String>) -> &Self {
        self.lock().fallbacks.insert(tag.to_string(), reply.into());
        self
    }

    /// Strict mode: the next `tag` prompt must contain `substring`.
    pub fn expect_prompt(&self, tag: &str, substring: impl Into<String>) -> &Self {
        self.lock()
            .expectations
            .entry(tag.to_string())
            .or_default()
            .push_back(substring.into());
        self
    }

    pub fn calls(&self) -> Vec<RecordedCall> {
        self.lock().calls.clone()
    }

    pub fn call_count(&self, tag: &str) -> usize {
        self.lock().calls.iter().filter(|c| c.tag == tag).count()
    }

    pub fn total_calls(&self) -> usize {
        self.lock().calls.len()
    }

    pub fn remaining(&self, tag: &str) -> usize {
        self.lock().queues.get(tag).map_or(0, VecDeque::len)
    }
}

impl ChatBackend for ScriptedBackend {
    fn complete(&self, request: &ChatRequest) -> Result<String, LlmError> {
        request.validate()?;
        let tag = request.tag.clone();
        let prompt = request.last_user_content().to_string();
        let responder = {
            let mut st = self.lock();
            st.calls.push(RecordedCall {
                tag: tag.clone(),
                prompt: prompt.clone(),
                message_count: request.messages.len(),
            });
            if let Some(expected) = st.expectations.get_mut(&tag).and_then(VecDeque::pop_front) {
                if !prompt.contains(&expected) {
                    return Err(LlmError::UnexpectedPrompt { tag, expected });
                }
            }
            if let Some(next) = st.queues.get_mut(&tag).and_then(VecDeque::pop_front) {
                return next;
            }
            match st.responders.get(&tag) {
                Some(r) => Arc::clone(r),
                None => {
                    return st
                        .fallbacks
                        .get(&tag)
                        .cloned()
                        .ok_or(LlmError::ScriptExhausted { tag })
                }
            }
        };
        Ok(responder(request))
    }

    fn describe(&self) -> String {
        "scripted".to_string()
    }
}

/// Multi-turn conversation; history only grows on successful turns.
pub struct ChatSession<'a> {
    backend: &'a dyn ChatBackend,
    tag: String,
    settings: GenerationSettings,
    history: Vec<Message>,
}

impl<'a> ChatSession<'a> {
    pub fn new(backend: &'a dyn ChatBackend, tag: impl Into<String>, settings: GenerationSettings) -> Self {
        Self {
            backend,
            tag: tag.into(),
            settings,
            history: Vec::new(),
        }
    }

    pub fn with_system(mut self, text: impl Into<String>) -> Self {
        self.history.push(Message::system(text));
        self
    }

    pub fn history(&self) -> &[Message] {
        &self.history
    }

    pub fn send(&mut self, user_text: impl Into<String>) -> Result<String, LlmError> {
        let mut messages = self.history.clone();
        messages.push(Message::user(user_text));
        let request = ChatRequest::new(self.tag.clone(), &self.settings, messages);
        let reply = self.backend.complete(&request)?;
        let mut messages = request.messages;
        messages.push(Message::assistant(reply.clone()));
        self.history = messages;
        Ok(reply)
    }
}
