//! OpenAI-compatible HTTP transport.

use std::collections::BTreeMap;
use std::time::Duration;

use reqwest::blocking::{multipart, Client};
use reqwest::StatusCode;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{ChatRequest, ChatTransport, GatewayError, ResponseHint, Role, Transcript, TransportError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LiveConfig {
    /// Base URL, e.g. `https://api.openai.com/v1`. `/chat/completions` is appended.
    pub chat_url: String,
    /// Base URL for transcription; `/audio/transcriptions` is appended.
    pub transcription_url: String,
    pub default_model: String,
    /// Step name (`classify`, `extract`, `fill`, `structure`, `repair`) → model.
    pub routing: BTreeMap<String, String>,
    pub transcription_model: String,
    /// Name of the environment variable holding the bearer token.
    pub api_key_env: String,
    pub timeout_s: u64,
}

impl Default for LiveConfig {
    fn default() -> Self {
        Self {
            chat_url: "https://api.openai.com/v1".into(),
            transcription_url: "https://api.openai.com/v1".into(),
            default_model: "gpt-4-0613".into(),
            routing: BTreeMap::new(),
            transcription_model: "whisper-1".into(),
            api_key_env: "OPENAI_API_KEY".into(),
            timeout_s: 60,
        }
    }
}

impl LiveConfig {
    pub fn model_for(&self, request: &ChatRequest) -> &str {
        request
            .step()
            .and_then(|s| self.routing.get(s))
            .map(String::as_str)
            .unwrap_or(&self.default_model)
    }
}

pub struct LiveTransport {
    config: LiveConfig,
    client: Client,
}

impl LiveTransport {
    pub fn new(config: LiveConfig) -> Self {
        let client = Client::builder()
            .timeout(Duration::from_secs(config.timeout_s.max(1)))
            .build()
            .expect("http client builds");
        Self { config, client }
    }

    fn api_key(&self) -> Option<String> {
        std::env::var(&self.config.api_key_env).ok().filter(|k| !k.is_empty())
    }

    fn body(&self, request: &ChatRequest) -> Value {
        let mut messages = vec![json!({"role": "system", "content": request.system_instruction})];
        for m in &request.messages {
            let role = match m.role {
                Role::User => "user",
                Role::Assistant => "assistant",
            };
            messages.push(json!({"role": role, "content": m.content}));
        }
        let mut body = json!({
            "model": self.config.model_for(request),
            "messages": messages,
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        });
        if request.response_hint == ResponseHint::JsonObject {
            body["response_format"] = json!({"type": "json_object"});
        }
        body
    }
}

fn join(base: &str, path: &str) -> String {
    format!("{}/{}", base.trim_end_matches('/'), path)
}

fn classify_status(status: StatusCode, retry_after: Option<u64>, body: String) -> TransportError {
    if status == StatusCode::TOO_MANY_REQUESTS {
        TransportError::RateLimited(retry_after)
    } else if status.is_server_error() || status == StatusCode::REQUEST_TIMEOUT {
        TransportError::Transient(format!("HTTP {status}"))
    } else {
        TransportError::Fatal(GatewayError::Http {
            status: status.as_u16(),
            body,
        })
    }
}

impl ChatTransport for LiveTransport {
    fn backend_id(&self) -> String {
        format!("live:{}", self.config.default_model)
    }

    fn send(&self, request: &ChatRequest) -> Result<String, TransportError> {
        let mut req = self
            .client
            .post(join(&self.config.chat_url, "chat/completions"))
            .json(&self.body(request));
        if let Some(key) = self.api_key() {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| TransportError::Transient(e.to_string()))?;
        let status = resp.status();
        if !status.is_success() {
            let retry_after = resp
                .headers()
                .get("retry-after")
                .and_then(|v| v.to_str().ok())
                .and_then(|v| v.trim().parse().ok());
            let body = resp.text().unwrap_or_default();
            return Err(classify_status(status, retry_after, body));
        }
        let v: Value = resp
            .json()
            .map_err(|e| TransportError::Fatal(GatewayError::Http { status: status.as_u16(), body: e.to_string() }))?;
        Ok(v.pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .unwrap_or_default()
            .to_string())
    }

    fn transcribe(&self, audio: &[u8], media_type: &str) -> Result<Transcript, GatewayError> {
        let ext = media_type.split('/').nth(1).unwrap_or("wav").split(';').next().unwrap_or("wav");
        let part = multipart::Part::bytes(audio.to_vec())
            .file_name(format!("speech.{ext}"))
            .mime_str(media_type)
            .map_err(|e| GatewayError::UnsupportedMedia(e.to_string()))?;
        let form = multipart::Form::new()
            .part("file", part)
            .text("model", self.config.transcription_model.clone())
            .text("response_format", "verbose_json");
        let mut req = self
            .client
            .post(join(&self.config.transcription_url, "audio/transcriptions"))
            .multipart(form);
        if let Some(key) = self.api_key() {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| GatewayError::BackendUnreachable {
            attempts: 1,
            message: e.to_string(),
        })?;
        let status = resp.status();
        if status == StatusCode::UNSUPPORTED_MEDIA_TYPE {
            return Err(GatewayError::UnsupportedMedia(media_type.into()));
        }
        if !status.is_success() {
            return Err(GatewayError::Http {
                status: status.as_u16(),
                body: resp.text().unwrap_or_default(),
            });
        }
        let v: Value = resp.json().map_err(|e| GatewayError::Http {
            status: status.as_u16(),
            body: e.to_string(),
        })?;
        let text = v.get("text").and_then(Value::as_str).unwrap_or_default().to_string();
        if text.is_empty() {
            return Err(GatewayError::ResponseEmpty);
        }
        Ok(Transcript {
            text,
            language_tag: v.get("language").and_then(Value::as_str).unwrap_or("und").to_string(),
            duration: v.get("duration").and_then(Value::as_f64).unwrap_or(0.0),
        })
    }
}
