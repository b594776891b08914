use std::path::Path;
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};

use regex::Regex;
use serde::Deserialize;

use super::{BackendKind, ChatClient, ChatRequest, ChatResponse, GatewayError};

#[derive(Debug, Clone)]
pub enum Matcher {
    Contains(String),
    Pattern(Regex),
}

impl Matcher {
    pub fn matches(&self, text: &str) -> bool {
        match self {
            Matcher::Contains(s) => text.contains(s.as_str()),
            Matcher::Pattern(re) => re.is_match(text),
        }
    }
}

/// One scripted rule. The user-message matcher is required; the optional
/// system-prompt matcher lets a script react to prompt content such as an
/// included guideline.
#[derive(Debug, Clone)]
pub struct MockRule {
    pub user: Matcher,
    pub system: Option<Matcher>,
    pub responses: Vec<String>,
}

impl MockRule {
    fn matches(&self, request: &ChatRequest) -> bool {
        self.user.matches(&request.user_message)
            && self.system.as_ref().is_none_or(|m| m.matches(&request.system_prompt))
    }
}

#[derive(Debug, Clone, Default)]
pub struct MockScript {
    pub rules: Vec<MockRule>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRule {
    user_contains: Option<String>,
    user_pattern: Option<String>,
    system_contains: Option<String>,
    system_pattern: Option<String>,
    responses: Vec<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScript {
    #[serde(default, rename = "rule")]
    rules: Vec<RawRule>,
}

fn matcher(contains: Option<String>, pattern: Option<String>, field: &str, idx: usize) -> Result<Option<Matcher>, GatewayError> {
    match (contains, pattern) {
        (Some(_), Some(_)) => Err(GatewayError::Script(format!(
            "rule {idx}: both {field}_contains and {field}_pattern given"
        ))),
        (Some(s), None) => Ok(Some(Matcher::Contains(s))),
        (None, Some(p)) => Regex::new(&p)
            .map(|re| Some(Matcher::Pattern(re)))
            .map_err(|e| GatewayError::Script(format!("rule {idx}: bad {field}_pattern: {e}"))),
        (None, None) => Ok(None),
    }
}

impl MockScript {
    pub fn from_toml_str(text: &str) -> Result<Self, GatewayError> {
        let raw: RawScript = toml::from_str(text).map_err(|e| GatewayError::Script(e.to_string()))?;
        let mut rules = Vec::with_capacity(raw.rules.len());
        for (idx, r) in raw.rules.into_iter().enumerate() {
            let user = matcher(r.user_contains, r.user_pattern, "user", idx)?
                .ok_or_else(|| GatewayError::Script(format!("rule {idx}: needs user_contains or user_pattern")))?;
            let system = matcher(r.system_contains, r.system_pattern, "system", idx)?;
            rules.push(MockRule {
                user,
                system,
                responses: r.responses,
            });
        }
        let script = Self { rules };
        script.validate()?;
        Ok(script)
    }

    pub fn load(path: &Path) -> Result<Self, GatewayError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| GatewayError::Script(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            GatewayError::Script(m) => GatewayError::Script(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        for (idx, rule) in self.rules.iter().enumerate() {
            if rule.responses.is_empty() {
                return Err(GatewayError::Script(format!("rule {idx} has no responses")));
            }
        }
        Ok(())
    }
}

/// Deterministic scripted backend. The first matching rule answers; repeated
/// hits on one rule cycle through its responses. Cycling state is shared by
/// all callers, so output order is only reproducible when each rule is hit
/// from a single thread.
#[derive(Debug)]
pub struct MockBackend {
    script: MockScript,
    cursors: Vec<AtomicUsize>,
    calls: AtomicU64,
}

impl MockBackend {
    pub fn new(script: MockScript) -> Result<Self, GatewayError> {
        script.validate()?;
        let cursors = script.rules.iter().map(|_| AtomicUsize::new(0)).collect();
        Ok(Self {
            script,
            cursors,
            calls: AtomicU64::new(0),
        })
    }
}

impl ChatClient for MockBackend {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        request.validate()?;
        let Some(idx) = self.script.rules.iter().position(|r| r.matches(request)) else {
            let excerpt: String = request.user_message.chars().take(120).collect();
            return Err(GatewayError::Unmatched {
                purpose: request.purpose.to_string(),
                excerpt,
            });
        };
        let rule = &self.script.rules[idx];
        let n = self.cursors[idx].fetch_add(1, Ordering::SeqCst);
        self.calls.fetch_add(1, Ordering::SeqCst);
        Ok(ChatResponse {
            text: rule.responses[n % rule.responses.len()].clone(),
            backend: BackendKind::Mock,
            latency_ms: 0,
        })
    }

    fn call_count(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }
}
