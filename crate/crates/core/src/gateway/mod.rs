//! Chat-completion and transcription access.
//!
//! [`Gateway`] is shared across sessions and holds the active backend (live HTTP or a
//! scripted mock). Each session obtains its own [`ChatClient`], which carries the
//! retry policy, a clock, and for the mock a private seeded random stream.

mod clock;
mod live;
mod mock;

use std::collections::BTreeMap;
use std::sync::{Arc, RwLock};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use clock::{Clock, SystemClock, VirtualClock};
pub use live::{LiveConfig, LiveTransport};
pub use mock::{
    audio_digest, CompiledScript, FailureMode, FailureSpec, Matcher, MockRule, MockScript, MockTransport, ScriptedTranscript,
};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
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

    pub fn assistant(content: impl Into<String>) -> Self {
        Self {
            role: Role::Assistant,
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ResponseHint {
    FreeText,
    JsonObject,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub system_instruction: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub max_tokens: u32,
    pub response_hint: ResponseHint,
    /// Routing and matching labels, e.g. `step = structure`.
    #[serde(default)]
    pub tags: BTreeMap<String, String>,
}

impl ChatRequest {
    pub fn new(step: &str, system_instruction: impl Into<String>, user: impl Into<String>) -> Self {
        Self {
            system_instruction: system_instruction.into(),
            messages: vec![ChatMessage::user(user)],
            temperature: 0.0,
            max_tokens: 1024,
            response_hint: ResponseHint::FreeText,
            tags: BTreeMap::from([("step".to_string(), step.to_string())]),
        }
    }

    pub fn step(&self) -> Option<&str> {
        self.tags.get("step").map(String::as_str)
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.messages.is_empty() {
            return Err(GatewayError::InvalidRequest("messages empty".into()));
        }
        for (i, m) in self.messages.iter().enumerate() {
            let expected = if i % 2 == 0 { Role::User } else { Role::Assistant };
            if m.role != expected {
                return Err(GatewayError::InvalidRequest(format!(
                    "messages[{i}]: roles must alternate starting with user"
                )));
            }
        }
        if !(self.temperature.is_finite() && self.temperature >= 0.0) {
            return Err(GatewayError::InvalidRequest("temperature must be >= 0".into()));
        }
        if self.max_tokens == 0 {
            return Err(GatewayError::InvalidRequest("max_tokens must be positive".into()));
        }
        Ok(())
    }

    /// System instruction and every message, newline separated. What mock matchers see.
    pub fn full_text(&self) -> String {
        let mut s = self.system_instruction.clone();
        for m in &self.messages {
            s.push('\n');
            s.push_str(&m.content);
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub content: String,
    pub backend_id: String,
    pub latency_ms: u64,
    pub attempt: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub text: String,
    pub language_tag: String,
    /// seconds
    pub duration: f64,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GatewayError {
    #[error("backend unreachable after {attempts} attempt(s): {message}")]
    BackendUnreachable { attempts: u32, message: String },
    #[error("rate limited (retry after {retry_after_s:?} s)")]
    RateLimited { retry_after_s: Option<u64> },
    #[error("backend returned an empty response")]
    ResponseEmpty,
    #[error("unsupported media: {0}")]
    UnsupportedMedia(String),
    #[error("invalid mock script: {0}")]
    InvalidScript(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("backend error {status}: {body}")]
    Http { status: u16, body: String },
}

/// Failure classes a transport can report for a single attempt.
#[derive(Debug, Clone, PartialEq)]
pub enum TransportError {
    /// Worth retrying: timeouts, connection resets, 5xx.
    Transient(String),
    RateLimited(Option<u64>),
    Fatal(GatewayError),
}

pub trait ChatTransport: Send + Sync {
    fn backend_id(&self) -> String;
    fn send(&self, request: &ChatRequest) -> Result<String, TransportError>;
    fn transcribe(&self, audio: &[u8], media_type: &str) -> Result<Transcript, GatewayError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub base_backoff_ms: u64,
    pub max_backoff_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: 2,
            base_backoff_ms: 250,
            max_backoff_ms: 4_000,
        }
    }
}

impl RetryPolicy {
    pub fn backoff_ms(&self, retry: u32) -> u64 {
        self.base_backoff_ms
            .saturating_mul(1u64 << retry.min(20))
            .min(self.max_backoff_ms)
    }
}

pub(crate) const SUPPORTED_AUDIO: &[&str] = &[
    "audio/wav",
    "audio/x-wav",
    "audio/wave",
    "audio/webm",
    "audio/ogg",
    "audio/mpeg",
    "audio/mp3",
    "audio/mp4",
    "audio/m4a",
    "audio/x-m4a",
    "audio/flac",
];

pub(crate) fn check_audio(audio: &[u8], media_type: &str) -> Result<(), GatewayError> {
    if audio.is_empty() {
        return Err(GatewayError::UnsupportedMedia("empty audio blob".into()));
    }
    let base = media_type.split(';').next().unwrap_or("").trim().to_ascii_lowercase();
    if !SUPPORTED_AUDIO.contains(&base.as_str()) {
        return Err(GatewayError::UnsupportedMedia(format!("media type '{media_type}'")));
    }
    Ok(())
}

/// Per-session handle: one transport, one clock, one retry policy.
#[derive(Clone)]
pub struct ChatClient {
    transport: Arc<dyn ChatTransport>,
    clock: Arc<dyn Clock>,
    retry: RetryPolicy,
}

impl ChatClient {
    pub fn new(transport: Arc<dyn ChatTransport>, clock: Arc<dyn Clock>, retry: RetryPolicy) -> Self {
        Self { transport, clock, retry }
    }

    pub fn clock(&self) -> &Arc<dyn Clock> {
        &self.clock
    }

    pub fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        request.validate()?;
        let attempts = self.retry.max_retries + 1;
        let mut last_transient = String::new();
        let mut last_rate_limit = None;
        for attempt in 1..=attempts {
            let started = self.clock.now_ms();
            match self.transport.send(request) {
                Ok(content) => {
                    if content.trim().is_empty() {
                        return Err(GatewayError::ResponseEmpty);
                    }
                    return Ok(ChatResponse {
                        content,
                        backend_id: self.transport.backend_id(),
                        latency_ms: self.clock.now_ms().saturating_sub(started),
                        attempt,
                    });
                }
                Err(TransportError::Fatal(e)) => return Err(e),
                Err(TransportError::Transient(msg)) => {
                    tracing::debug!(attempt, %msg, "transient chat failure");
                    last_transient = msg;
                    last_rate_limit = None;
                    if attempt < attempts {
                        self.clock.sleep_ms(self.retry.backoff_ms(attempt - 1));
                    }
                }
                Err(TransportError::RateLimited(after)) => {
                    last_rate_limit = Some(after);
                    if attempt < attempts {
                        let wait = after
                            .map(|s| s.saturating_mul(1000))
                            .unwrap_or_else(|| self.retry.backoff_ms(attempt - 1));
                        self.clock.sleep_ms(wait);
                    }
                }
            }
        }
        match last_rate_limit {
            Some(retry_after_s) => Err(GatewayError::RateLimited { retry_after_s }),
            None => Err(GatewayError::BackendUnreachable {
                attempts,
                message: last_transient,
            }),
        }
    }

    pub fn transcribe(&self, audio: &[u8], media_type: &str) -> Result<Transcript, GatewayError> {
        check_audio(audio, media_type)?;
        self.transport.transcribe(audio, media_type)
    }
}

enum Backend {
    Live(LiveConfig),
    Mock(Arc<CompiledScript>),
}

/// Shared gateway. Hands out per-session clients bound to the active backend.
pub struct Gateway {
    backend: RwLock<Backend>,
    retry: RetryPolicy,
}

impl Gateway {
    pub fn live(config: LiveConfig, retry: RetryPolicy) -> Self {
        Self {
            backend: RwLock::new(Backend::Live(config)),
            retry,
        }
    }

    pub fn mock(script: MockScript, retry: RetryPolicy) -> Result<Self, GatewayError> {
        Ok(Self {
            backend: RwLock::new(Backend::Mock(Arc::new(CompiledScript::new(script)?))),
            retry,
        })
    }

    /// Activates the mock backend, fully replacing any previous script or live backend.
    pub fn register_script(&self, script: MockScript) -> Result<(), GatewayError> {
        let compiled = Arc::new(CompiledScript::new(script)?);
        *self.backend.write().expect("gateway lock poisoned") = Backend::Mock(compiled);
        Ok(())
    }

    pub fn is_mock(&self) -> bool {
        matches!(*self.backend.read().expect("gateway lock poisoned"), Backend::Mock(_))
    }

    pub fn retry_policy(&self) -> RetryPolicy {
        self.retry
    }

    /// A client for one session. Mock clients draw from a stream seeded by `session_seed`
    /// and run on a virtual clock, so their output and timings are reproducible.
    pub fn client(&self, session_seed: u64) -> ChatClient {
        match &*self.backend.read().expect("gateway lock poisoned") {
            Backend::Live(cfg) => ChatClient::new(
                Arc::new(LiveTransport::new(cfg.clone())),
                Arc::new(SystemClock::new()),
                self.retry,
            ),
            Backend::Mock(script) => {
                let clock = Arc::new(VirtualClock::default());
                ChatClient::new(
                    Arc::new(MockTransport::new(script.clone(), session_seed, clock.clone())),
                    clock,
                    self.retry,
                )
            }
        }
    }
}

#[cfg(test)]
mod tests;

/// One request/response pair, kept verbatim for the pipeline trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exchange {
    pub request: ChatRequest,
    pub response: Option<ChatResponse>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Wraps a [`ChatClient`] and logs every call it forwards.
pub struct Recorder<'a> {
    client: &'a ChatClient,
    exchanges: Vec<Exchange>,
}

impl<'a> Recorder<'a> {
    pub fn new(client: &'a ChatClient) -> Self {
        Self {
            client,
            exchanges: Vec::new(),
        }
    }

    pub fn complete(&mut self, request: ChatRequest) -> Result<ChatResponse, GatewayError> {
        let result = self.client.complete(&request);
        self.exchanges.push(Exchange {
            request,
            response: result.as_ref().ok().cloned(),
            error: result.as_ref().err().map(ToString::to_string),
        });
        result
    }

    pub fn take(&mut self) -> Vec<Exchange> {
        std::mem::take(&mut self.exchanges)
    }
}
