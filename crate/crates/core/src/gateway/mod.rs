//! Chat-completion gateway: one request/response contract over a scripted mock
//! and a live HTTPS backend, plus per-query transcript recording.

mod live;
mod mock;

use std::fmt;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use live::{HttpTransport, LiveBackend, LiveConfig, RetryPolicy, TransportError, UreqTransport};
pub use mock::{Matcher, MockBackend, MockRule, MockScript};

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("gateway configuration error: {0}")]
    Config(String),
    #[error("invalid chat request: {0}")]
    InvalidRequest(String),
    #[error("no mock rule matches prompt (purpose {purpose}): {excerpt}")]
    Unmatched { purpose: String, excerpt: String },
    #[error("backend failed after {attempts} attempt(s): {last_cause}")]
    Exhausted { attempts: u32, last_cause: String },
    #[error("backend rejected request: {0}")]
    Fatal(String),
    #[error("mock script error: {0}")]
    Script(String),
}

/// What a request is for; recorded in transcripts, never sent to the backend.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "stage", rename_all = "snake_case")]
pub enum Purpose {
    Translate,
    Plan { plan_index: usize },
    Sql { plan_index: usize },
    Distill { cluster_id: String },
    Other { label: String },
}

impl fmt::Display for Purpose {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Purpose::Translate => f.write_str("translate"),
            Purpose::Plan { plan_index } => write!(f, "plan#{plan_index}"),
            Purpose::Sql { plan_index } => write!(f, "sql#{plan_index}"),
            Purpose::Distill { cluster_id } => write!(f, "distill:{cluster_id}"),
            Purpose::Other { label } => f.write_str(label),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub purpose: Purpose,
    pub system_prompt: String,
    pub user_message: String,
    pub temperature: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed_hint: Option<u64>,
    pub model_name: String,
}

impl ChatRequest {
    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.system_prompt.trim().is_empty() {
            return Err(GatewayError::InvalidRequest("empty system prompt".into()));
        }
        if self.user_message.trim().is_empty() {
            return Err(GatewayError::InvalidRequest("empty user message".into()));
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(GatewayError::InvalidRequest(format!(
                "temperature {} outside [0, 2]",
                self.temperature
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Live,
    Mock,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatResponse {
    /// Verbatim completion text.
    pub text: String,
    pub backend: BackendKind,
    pub latency_ms: u64,
}

/// Anything that can answer a chat request. Implementations must not alter
/// the prompt text they are given.
pub trait ChatClient: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError>;

    /// Number of completed backend calls so far.
    fn call_count(&self) -> u64;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub request: ChatRequest,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response: Option<ChatResponse>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Ordered record of every gateway exchange for one query.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub query_id: String,
    pub entries: Vec<TranscriptEntry>,
}

impl Transcript {
    /// Response text of the planner call for `plan_index`, if recorded.
    pub fn plan_text(&self, plan_index: usize) -> Option<&str> {
        self.entries.iter().find_map(|e| match (&e.request.purpose, &e.response) {
            (Purpose::Plan { plan_index: i }, Some(r)) if *i == plan_index => Some(r.text.as_str()),
            _ => None,
        })
    }

    pub fn with_purpose<'a>(&'a self, pred: impl Fn(&Purpose) -> bool + 'a) -> impl Iterator<Item = &'a TranscriptEntry> + 'a {
        self.entries.iter().filter(move |e| pred(&e.request.purpose))
    }
}

/// Wraps a client and records each exchange in call order.
pub struct Recorder<'a> {
    inner: &'a dyn ChatClient,
    entries: Mutex<Vec<TranscriptEntry>>,
}

impl<'a> Recorder<'a> {
    pub fn new(inner: &'a dyn ChatClient) -> Self {
        Self {
            inner,
            entries: Mutex::new(Vec::new()),
        }
    }

    pub fn into_transcript(self, query_id: impl Into<String>) -> Transcript {
        Transcript {
            query_id: query_id.into(),
            entries: self.entries.into_inner().unwrap_or_else(|e| e.into_inner()),
        }
    }
}

impl ChatClient for Recorder<'_> {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        let result = self.inner.complete(request);
        let entry = TranscriptEntry {
            request: request.clone(),
            response: result.as_ref().ok().cloned(),
            error: result.as_ref().err().map(|e| e.to_string()),
        };
        self.entries.lock().unwrap_or_else(|e| e.into_inner()).push(entry);
        result
    }

    fn call_count(&self) -> u64 {
        self.inner.call_count()
    }
}
