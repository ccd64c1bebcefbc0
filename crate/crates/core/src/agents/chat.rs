use std::sync::{Arc, Condvar, Mutex};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{AgentBackend, AgentError, GenerateRequest};
use crate::http::{JsonClient, RetryPolicy};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatBackendConfig {
    /// Full chat-completions URL, e.g.
    /// `http://localhost:11434/v1/chat/completions`.
    pub endpoint: String,
    pub model: String,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
    #[serde(default)]
    pub api_key_env: Option<String>,
    /// Optional fixed system message sent before the prompt.
    #[serde(default)]
    pub system_message: Option<String>,
    #[serde(default)]
    pub retry: RetryPolicy,
}

fn default_max_tokens() -> u32 {
    2048
}

impl ChatBackendConfig {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>) -> Self {
        ChatBackendConfig {
            endpoint: endpoint.into(),
            model: model.into(),
            temperature: 0.0,
            max_tokens: default_max_tokens(),
            api_key_env: None,
            system_message: None,
            retry: RetryPolicy::default(),
        }
    }

    pub fn validate(&self) -> Result<(), AgentError> {
        let url = self.endpoint.trim();
        let scheme_ok = url.starts_with("http://") || url.starts_with("https://");
        let host = url.split("://").nth(1).unwrap_or("");
        if !scheme_ok || host.is_empty() || host.starts_with('/') {
            return Err(AgentError::Config(format!("malformed endpoint URL {url:?}")));
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(AgentError::Config(format!(
                "temperature must be >= 0, got {}",
                self.temperature
            )));
        }
        if self.model.trim().is_empty() {
            return Err(AgentError::Config("model name is empty".into()));
        }
        Ok(())
    }
}

/// Caps the number of concurrent requests across every backend sharing it.
#[derive(Debug)]
pub struct InFlightLimiter {
    max: usize,
    current: Mutex<usize>,
    freed: Condvar,
}

pub struct Permit<'a> {
    limiter: &'a InFlightLimiter,
}

impl InFlightLimiter {
    pub fn new(max: usize) -> Arc<Self> {
        Arc::new(InFlightLimiter {
            max: max.max(1),
            current: Mutex::new(0),
            freed: Condvar::new(),
        })
    }

    pub fn acquire(&self) -> Permit<'_> {
        let mut n = self.current.lock().expect("limiter lock");
        while *n >= self.max {
            n = self.freed.wait(n).expect("limiter lock");
        }
        *n += 1;
        Permit { limiter: self }
    }

    pub fn in_flight(&self) -> usize {
        *self.current.lock().expect("limiter lock")
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut n = self.limiter.current.lock().expect("limiter lock");
        *n -= 1;
        self.limiter.freed.notify_one();
    }
}

/// OpenAI-compatible chat-completions client. Not deterministic.
#[derive(Debug, Clone)]
pub struct ChatBackend {
    config: ChatBackendConfig,
    client: JsonClient,
    limiter: Arc<InFlightLimiter>,
}

impl ChatBackend {
    pub fn new(config: ChatBackendConfig, limiter: Arc<InFlightLimiter>) -> Result<Self, AgentError> {
        config.validate()?;
        let key = config.api_key_env.as_ref().and_then(|v| std::env::var(v).ok());
        let client = JsonClient::new(config.retry.clone(), key).map_err(|e| AgentError::Transport(e.to_string()))?;
        Ok(ChatBackend {
            config,
            client,
            limiter,
        })
    }

    /// The request body; the prompt is the final user message, unmodified.
    pub fn request_body(&self, prompt: &str) -> serde_json::Value {
        let mut messages = Vec::new();
        if let Some(system) = &self.config.system_message {
            messages.push(json!({"role": "system", "content": system}));
        }
        messages.push(json!({"role": "user", "content": prompt}));
        json!({
            "model": self.config.model,
            "messages": messages,
            "temperature": self.config.temperature,
            "max_tokens": self.config.max_tokens,
            "stream": false,
        })
    }

    /// One chat-completion round trip.
    pub fn chat(&self, prompt: &str) -> Result<String, AgentError> {
        let body = self.request_body(prompt);
        let _permit = self.limiter.acquire();
        let started = Instant::now();
        let reply = self
            .client
            .post(&self.config.endpoint, &body)
            .map_err(|e| AgentError::Transport(e.to_string()))?;
        let content = reply
            .pointer("/choices/0/message/content")
            .and_then(|v| v.as_str())
            .ok_or_else(|| AgentError::Malformed("missing choices[0].message.content".into()))?;
        tracing::info!(
            model = %self.config.model,
            response_id = reply.get("id").and_then(|v| v.as_str()).unwrap_or(""),
            latency_ms = started.elapsed().as_millis() as u64,
            "chat completion"
        );
        Ok(content.to_string())
    }
}

impl AgentBackend for ChatBackend {
    fn id(&self) -> String {
        format!("chat:{}", self.config.model)
    }

    fn deterministic(&self) -> bool {
        false
    }

    fn generate(&mut self, request: &GenerateRequest<'_>) -> Result<String, AgentError> {
        self.chat(request.prompt)
    }
}
