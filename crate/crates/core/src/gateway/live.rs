use std::sync::atomic::{AtomicU64, Ordering};
use std::time::{Duration, Instant};

use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{BackendKind, ChatClient, ChatRequest, ChatResponse, GatewayError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LiveConfig {
    /// Chat-completions URL (OpenAI-compatible request/response shape).
    pub endpoint: String,
    /// Environment variable holding the bearer credential.
    #[serde(default = "default_key_env")]
    pub api_key_env: String,
    #[serde(default = "default_timeout")]
    pub request_timeout_secs: u64,
}

fn default_key_env() -> String {
    "OPENAI_API_KEY".into()
}

fn default_timeout() -> u64 {
    120
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    /// Retries after the first attempt.
    pub max_retries: u32,
    pub base_delay: Duration,
    /// Fractional jitter applied to each delay, in [0, 1].
    pub jitter: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: 3,
            base_delay: Duration::from_secs(1),
            jitter: 0.25,
        }
    }
}

impl RetryPolicy {
    fn delay(&self, retry: u32) -> Duration {
        let base = self.base_delay.as_secs_f64() * f64::from(1u32 << retry.min(16));
        let factor = if self.jitter > 0.0 {
            1.0 + rand::thread_rng().gen_range(-self.jitter..=self.jitter)
        } else {
            1.0
        };
        Duration::from_secs_f64((base * factor).max(0.0))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TransportError {
    /// Worth retrying: connection failures, 429, 5xx.
    Transient(String),
    Fatal(String),
}

pub trait HttpTransport: Send + Sync {
    fn post_json(&self, url: &str, bearer: &str, body: &Value) -> Result<Value, TransportError>;
}

pub struct UreqTransport {
    agent: ureq::Agent,
}

impl UreqTransport {
    pub fn new(timeout: Duration) -> Self {
        Self {
            agent: ureq::AgentBuilder::new().timeout(timeout).build(),
        }
    }
}

impl HttpTransport for UreqTransport {
    fn post_json(&self, url: &str, bearer: &str, body: &Value) -> Result<Value, TransportError> {
        let result = self
            .agent
            .post(url)
            .set("Authorization", &format!("Bearer {bearer}"))
            .send_json(body.clone());
        match result {
            Ok(resp) => resp
                .into_json::<Value>()
                .map_err(|e| TransportError::Transient(format!("bad response body: {e}"))),
            Err(ureq::Error::Status(code, resp)) => {
                let text = resp.into_string().unwrap_or_default();
                let msg = format!("HTTP {code}: {}", text.chars().take(300).collect::<String>());
                if code == 429 || code >= 500 {
                    Err(TransportError::Transient(msg))
                } else {
                    Err(TransportError::Fatal(msg))
                }
            }
            Err(ureq::Error::Transport(t)) => Err(TransportError::Transient(t.to_string())),
        }
    }
}

pub struct LiveBackend {
    config: LiveConfig,
    credential: String,
    transport: Box<dyn HttpTransport>,
    retry: RetryPolicy,
    calls: AtomicU64,
}

impl std::fmt::Debug for LiveBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LiveBackend")
            .field("endpoint", &self.config.endpoint)
            .field("credential", &"<redacted>")
            .finish()
    }
}

impl LiveBackend {
    /// Reads the credential from the environment; fails before any network
    /// traffic when it is absent.
    pub fn from_env(config: LiveConfig) -> Result<Self, GatewayError> {
        let credential = std::env::var(&config.api_key_env)
            .ok()
            .filter(|v| !v.trim().is_empty())
            .ok_or_else(|| {
                GatewayError::Config(format!("environment variable {} is not set", config.api_key_env))
            })?;
        let transport = UreqTransport::new(Duration::from_secs(config.request_timeout_secs));
        Self::with_transport(config, credential, Box::new(transport))
    }

    pub fn with_transport(
        config: LiveConfig,
        credential: String,
        transport: Box<dyn HttpTransport>,
    ) -> Result<Self, GatewayError> {
        if config.endpoint.trim().is_empty() {
            return Err(GatewayError::Config("live endpoint is empty".into()));
        }
        if credential.trim().is_empty() {
            return Err(GatewayError::Config("credential is empty".into()));
        }
        Ok(Self {
            config,
            credential,
            transport,
            retry: RetryPolicy::default(),
            calls: AtomicU64::new(0),
        })
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    fn body(request: &ChatRequest) -> Value {
        let mut body = json!({
            "model": request.model_name,
            "temperature": request.temperature,
            "messages": [
                {"role": "system", "content": request.system_prompt},
                {"role": "user", "content": request.user_message},
            ],
        });
        if let Some(seed) = request.seed_hint {
            body["seed"] = json!(seed);
        }
        body
    }

    fn extract_text(value: &Value) -> Result<String, TransportError> {
        value
            .pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_owned)
            .ok_or_else(|| TransportError::Fatal("response has no choices[0].message.content".into()))
    }
}

impl ChatClient for LiveBackend {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        request.validate()?;
        let body = Self::body(request);
        let start = Instant::now();
        let mut last_cause = String::new();
        let attempts = self.retry.max_retries + 1;
        for attempt in 0..attempts {
            if attempt > 0 {
                std::thread::sleep(self.retry.delay(attempt - 1));
            }
            match self
                .transport
                .post_json(&self.config.endpoint, &self.credential, &body)
                .and_then(|v| Self::extract_text(&v))
            {
                Ok(text) => {
                    self.calls.fetch_add(1, Ordering::SeqCst);
                    return Ok(ChatResponse {
                        text,
                        backend: BackendKind::Live,
                        latency_ms: start.elapsed().as_millis() as u64,
                    });
                }
                Err(TransportError::Fatal(m)) => return Err(GatewayError::Fatal(m)),
                Err(TransportError::Transient(m)) => last_cause = m,
            }
        }
        Err(GatewayError::Exhausted { attempts, last_cause })
    }

    fn call_count(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }
}
