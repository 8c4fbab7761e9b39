//! Chat-completions transport: a blocking HTTP client for any
//! OpenAI-compatible endpoint, plus recording and byte-exact replay of
//! request/response pairs so planners and describers can be tested offline.

use std::collections::{HashMap, VecDeque};
use std::path::Path;
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::map_io::sort_keys;

fn default_timeout() -> u64 {
    60
}

fn default_retries() -> u32 {
    2
}

fn default_repair_attempts() -> u32 {
    2
}

/// Endpoint configuration file. API keys are only ever read from the
/// environment variable named here.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EndpointConfig {
    pub base_url: String,
    pub model: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub api_key_env: Option<String>,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_timeout")]
    pub timeout_s: u64,
    /// Transport-level retries for 429/5xx and I/O failures.
    #[serde(default = "default_retries")]
    pub retries: u32,
    /// Validate-and-repair rounds for replies that fail to parse or verify.
    #[serde(default = "default_repair_attempts")]
    pub repair_attempts: u32,
}

impl EndpointConfig {
    pub fn from_file(path: &Path) -> Result<Self, TransportError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| TransportError::Config(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| TransportError::Config(format!("{}: {e}", path.display())))
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
pub struct ImageUrl {
    pub url: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ContentPart {
    Text { text: String },
    ImageUrl { image_url: ImageUrl },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MessageContent {
    Text(String),
    Parts(Vec<ContentPart>),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: MessageContent,
}

impl ChatMessage {
    pub fn system(text: impl Into<String>) -> Self {
        ChatMessage {
            role: Role::System,
            content: MessageContent::Text(text.into()),
        }
    }

    pub fn user(text: impl Into<String>) -> Self {
        ChatMessage {
            role: Role::User,
            content: MessageContent::Text(text.into()),
        }
    }

    pub fn assistant(text: impl Into<String>) -> Self {
        ChatMessage {
            role: Role::Assistant,
            content: MessageContent::Text(text.into()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub temperature: f64,
    pub messages: Vec<ChatMessage>,
}

impl ChatRequest {
    /// SHA-256 over the compact, key-sorted JSON form of the request.
    pub fn hash(&self) -> String {
        let value = serde_json::to_value(self).expect("request serializes");
        let canonical = serde_json::to_string(&sort_keys(&value)).expect("value serializes");
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TransportError {
    #[error("HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("transport failure: {0}")]
    Io(String),
    #[error("API key environment variable {0} is not set")]
    MissingApiKey(String),
    #[error("unexpected response shape: {0}")]
    BadResponse(String),
    #[error("no recorded response for request {0}")]
    NotRecorded(String),
    #[error("scripted endpoint has no replies left")]
    Exhausted,
    #[error("endpoint configuration: {0}")]
    Config(String),
}

/// Anything that answers a chat request with the assistant's text.
pub trait ChatTransport: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<String, TransportError>;
}

impl<T: ChatTransport + ?Sized> ChatTransport for &T {
    fn complete(&self, request: &ChatRequest) -> Result<String, TransportError> {
        (**self).complete(request)
    }
}

impl<T: ChatTransport + ?Sized> ChatTransport for Box<T> {
    fn complete(&self, request: &ChatRequest) -> Result<String, TransportError> {
        (**self).complete(request)
    }
}

/// Blocking client for `POST {base_url}/chat/completions`.
pub struct HttpTransport {
    agent: ureq::Agent,
    url: String,
    api_key: Option<String>,
    retries: u32,
}

impl std::fmt::Debug for HttpTransport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HttpTransport")
            .field("url", &self.url)
            .field("has_api_key", &self.api_key.is_some())
            .field("retries", &self.retries)
            .finish()
    }
}

impl HttpTransport {
    pub fn new(config: &EndpointConfig) -> Result<Self, TransportError> {
        let api_key = match &config.api_key_env {
            Some(var) => Some(std::env::var(var).map_err(|_| TransportError::MissingApiKey(var.clone()))?),
            None => None,
        };
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(config.timeout_s)))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(HttpTransport {
            agent,
            url: format!("{}/chat/completions", config.base_url.trim_end_matches('/')),
            api_key,
            retries: config.retries,
        })
    }

    fn attempt(&self, body: &str) -> Result<String, TransportError> {
        let mut req = self.agent.post(&self.url).header("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req.send(body).map_err(|e| TransportError::Io(e.to_string()))?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| TransportError::Io(e.to_string()))?;
        if !(200..300).contains(&status) {
            return Err(TransportError::Http { status, body: text });
        }
        let value: Value = serde_json::from_str(&text).map_err(|e| TransportError::BadResponse(e.to_string()))?;
        value
            .pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| TransportError::BadResponse(truncate(&text, 200)))
    }
}

fn truncate(s: &str, max: usize) -> String {
    match s.char_indices().nth(max) {
        Some((i, _)) => format!("{}...", &s[..i]),
        None => s.to_string(),
    }
}

fn retryable(e: &TransportError) -> bool {
    match e {
        TransportError::Io(_) => true,
        TransportError::Http { status, .. } => *status == 429 || *status >= 500,
        _ => false,
    }
}

impl ChatTransport for HttpTransport {
    fn complete(&self, request: &ChatRequest) -> Result<String, TransportError> {
        let body = serde_json::to_string(request).expect("request serializes");
        let mut delay = Duration::from_millis(250);
        let mut attempt = 0;
        loop {
            match self.attempt(&body) {
                Ok(text) => return Ok(text),
                Err(e) if attempt < self.retries && retryable(&e) => {
                    attempt += 1;
                    std::thread::sleep(delay);
                    delay *= 2;
                }
                Err(e) => return Err(e),
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub request_hash: String,
    pub request: ChatRequest,
    pub response: String,
}

impl TranscriptEntry {
    pub fn new(request: ChatRequest, response: String) -> Self {
        TranscriptEntry {
            request_hash: request.hash(),
            request,
            response,
        }
    }
}

/// Ordered request/response log; the on-disk fixture format is a JSON list
/// of entries.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Transcript(pub Vec<TranscriptEntry>);

impl Transcript {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn push(&mut self, entry: TranscriptEntry) {
        self.0.push(entry);
    }

    pub fn extend(&mut self, other: Transcript) {
        self.0.extend(other.0);
    }

    pub fn load(path: &Path) -> Result<Self, TransportError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| TransportError::Config(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| TransportError::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_json(&self) -> String {
        crate::map_io::to_canonical_string(&serde_json::to_value(self).expect("transcript serializes"))
    }
}

/// Answers only requests recorded in a transcript, matched by hash.
#[derive(Debug, Clone, Default)]
pub struct ReplayTransport {
    responses: HashMap<String, String>,
}

impl ReplayTransport {
    pub fn new(transcript: &Transcript) -> Self {
        ReplayTransport {
            responses: transcript
                .0
                .iter()
                .map(|e| (e.request_hash.clone(), e.response.clone()))
                .collect(),
        }
    }

    pub fn from_file(path: &Path) -> Result<Self, TransportError> {
        Ok(ReplayTransport::new(&Transcript::load(path)?))
    }
}

impl ChatTransport for ReplayTransport {
    fn complete(&self, request: &ChatRequest) -> Result<String, TransportError> {
        let hash = request.hash();
        self.responses
            .get(&hash)
            .cloned()
            .ok_or(TransportError::NotRecorded(hash))
    }
}

/// Wraps another transport and keeps every successful exchange.
pub struct RecordingTransport<T> {
    inner: T,
    log: Mutex<Transcript>,
}

impl<T: ChatTransport> RecordingTransport<T> {
    pub fn new(inner: T) -> Self {
        RecordingTransport {
            inner,
            log: Mutex::new(Transcript::default()),
        }
    }

    pub fn transcript(&self) -> Transcript {
        self.log.lock().expect("log lock").clone()
    }
}

impl<T: ChatTransport> ChatTransport for RecordingTransport<T> {
    fn complete(&self, request: &ChatRequest) -> Result<String, TransportError> {
        let response = self.inner.complete(request)?;
        self.log
            .lock()
            .expect("log lock")
            .push(TranscriptEntry::new(request.clone(), response.clone()));
        Ok(response)
    }
}

/// Returns canned replies in order, regardless of the request.
#[derive(Debug, Default)]
pub struct ScriptedTransport {
    replies: Mutex<VecDeque<String>>,
}

impl ScriptedTransport {
    pub fn new<I, S>(replies: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        ScriptedTransport {
            replies: Mutex::new(replies.into_iter().map(Into::into).collect()),
        }
    }
}

impl ChatTransport for ScriptedTransport {
    fn complete(&self, _request: &ChatRequest) -> Result<String, TransportError> {
        self.replies
            .lock()
            .expect("script lock")
            .pop_front()
            .ok_or(TransportError::Exhausted)
    }
}
